# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend.

Scalar restatement of the numpy backend in `_pure.py`: identical expressions
in identical order, so both backends produce bit-identical IEEE doubles (the
build disables FP contraction). Keep the two files in sync.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()


def closest_points(double[:, ::1] queries, double[:, ::1] a,
                   double[:, ::1] b, double[:, ::1] c):
    cdef Py_ssize_t m = queries.shape[0]
    cdef Py_ssize_t nf = a.shape[0]
    out_pts_np = np.empty((m, 3), dtype=np.float64)
    out_dist_np = np.empty(m, dtype=np.float64)
    out_face_np = np.empty(m, dtype=np.int64)
    cdef double[:, ::1] out_pts = out_pts_np
    cdef double[::1] out_dist = out_dist_np
    cdef cnp.int64_t[::1] out_face = out_face_np

    cdef Py_ssize_t i, f, best_f
    cdef double px, py, pz
    cdef double ax, ay, az, bx, by, bz, cx, cy, cz
    cdef double abx, aby, abz, acx, acy, acz, cbx, cby, cbz
    cdef double apx, apy, apz, bpx, bpy, bpz, cpx, cpy, cpz
    cdef double d1, d2_, d3, d4, d5, d6, va, vb, vc
    cdef double v, w, denom
    cdef double qx, qy, qz, dx, dy, dz, d2, best_d2
    cdef double best_x, best_y, best_z

    for i in range(m):
        px = queries[i, 0]
        py = queries[i, 1]
        pz = queries[i, 2]
        best_d2 = np.inf
        best_f = 0
        best_x = best_y = best_z = 0.0
        for f in range(nf):
            ax = a[f, 0]; ay = a[f, 1]; az = a[f, 2]
            bx = b[f, 0]; by = b[f, 1]; bz = b[f, 2]
            cx = c[f, 0]; cy = c[f, 1]; cz = c[f, 2]
            abx = bx - ax; aby = by - ay; abz = bz - az
            acx = cx - ax; acy = cy - ay; acz = cz - az
            apx = px - ax; apy = py - ay; apz = pz - az
            d1 = abx * apx + aby * apy + abz * apz
            d2_ = acx * apx + acy * apy + acz * apz
            if d1 <= 0.0 and d2_ <= 0.0:
                qx = ax; qy = ay; qz = az
            else:
                bpx = px - bx; bpy = py - by; bpz = pz - bz
                d3 = abx * bpx + aby * bpy + abz * bpz
                d4 = acx * bpx + acy * bpy + acz * bpz
                if d3 >= 0.0 and d4 <= d3:
                    qx = bx; qy = by; qz = bz
                else:
                    vc = d1 * d4 - d3 * d2_
                    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
                        v = d1 / (d1 - d3)
                        qx = ax + v * abx; qy = ay + v * aby; qz = az + v * abz
                    else:
                        cpx = px - cx; cpy = py - cy; cpz = pz - cz
                        d5 = abx * cpx + aby * cpy + abz * cpz
                        d6 = acx * cpx + acy * cpy + acz * cpz
                        if d6 >= 0.0 and d5 <= d6:
                            qx = cx; qy = cy; qz = cz
                        else:
                            vb = d5 * d2_ - d1 * d6
                            if vb <= 0.0 and d2_ >= 0.0 and d6 <= 0.0:
                                w = d2_ / (d2_ - d6)
                                qx = ax + w * acx; qy = ay + w * acy; qz = az + w * acz
                            else:
                                va = d3 * d6 - d5 * d4
                                if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
                                    cbx = cx - bx; cby = cy - by; cbz = cz - bz
                                    w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
                                    qx = bx + w * cbx; qy = by + w * cby; qz = bz + w * cbz
                                else:
                                    denom = 1.0 / (va + vb + vc)
                                    v = vb * denom
                                    w = vc * denom
                                    qx = ax + abx * v + acx * w
                                    qy = ay + aby * v + acy * w
                                    qz = az + abz * v + acz * w
            dx = px - qx; dy = py - qy; dz = pz - qz
            d2 = dx * dx + dy * dy + dz * dz
            if d2 < best_d2:
                best_d2 = d2
                best_f = f
                best_x = qx; best_y = qy; best_z = qz
        out_pts[i, 0] = best_x
        out_pts[i, 1] = best_y
        out_pts[i, 2] = best_z
        out_dist[i] = sqrt(best_d2)
        out_face[i] = best_f
    return out_pts_np, out_dist_np, out_face_np


def inside_parity(double[:, ::1] points, double[:, ::1] a,
                  double[:, ::1] b, double[:, ::1] c,
                  double[::1] direction):
    cdef Py_ssize_t m = points.shape[0]
    cdef Py_ssize_t nf = a.shape[0]
    out_np = np.empty(m, dtype=np.uint8)
    cdef unsigned char[::1] out = out_np

    # per-face constants
    e1_np = np.empty((nf, 3), dtype=np.float64)
    pv_np = np.empty((nf, 3), dtype=np.float64)
    e2_np = np.empty((nf, 3), dtype=np.float64)
    inv_np = np.empty(nf, dtype=np.float64)
    ok_np = np.empty(nf, dtype=np.uint8)
    cdef double[:, ::1] e1 = e1_np
    cdef double[:, ::1] e2 = e2_np
    cdef double[:, ::1] pv = pv_np
    cdef double[::1] inv = inv_np
    cdef unsigned char[::1] ok = ok_np

    cdef double dx = direction[0]
    cdef double dy = direction[1]
    cdef double dz = direction[2]
    cdef Py_ssize_t i, f
    cdef double e1x, e1y, e1z, e2x, e2y, e2z, pvx, pvy, pvz, det
    cdef double px, py, pz, tvx, tvy, tvz, u, v, t, qvx, qvy, qvz
    cdef int crossings

    for f in range(nf):
        e1x = b[f, 0] - a[f, 0]; e1y = b[f, 1] - a[f, 1]; e1z = b[f, 2] - a[f, 2]
        e2x = c[f, 0] - a[f, 0]; e2y = c[f, 1] - a[f, 1]; e2z = c[f, 2] - a[f, 2]
        pvx = dy * e2z - dz * e2y
        pvy = dz * e2x - dx * e2z
        pvz = dx * e2y - dy * e2x
        det = e1x * pvx + e1y * pvy + e1z * pvz
        e1[f, 0] = e1x; e1[f, 1] = e1y; e1[f, 2] = e1z
        e2[f, 0] = e2x; e2[f, 1] = e2y; e2[f, 2] = e2z
        pv[f, 0] = pvx; pv[f, 1] = pvy; pv[f, 2] = pvz
        if fabs(det) > 1e-12:
            ok[f] = 1
            inv[f] = 1.0 / det
        else:
            ok[f] = 0
            inv[f] = 0.0

    for i in range(m):
        px = points[i, 0]; py = points[i, 1]; pz = points[i, 2]
        crossings = 0
        for f in range(nf):
            if not ok[f]:
                continue
            tvx = px - a[f, 0]; tvy = py - a[f, 1]; tvz = pz - a[f, 2]
            u = (tvx * pv[f, 0] + tvy * pv[f, 1] + tvz * pv[f, 2]) * inv[f]
            if u < 0.0 or u > 1.0:
                continue
            qvx = tvy * e1[f, 2] - tvz * e1[f, 1]
            qvy = tvz * e1[f, 0] - tvx * e1[f, 2]
            qvz = tvx * e1[f, 1] - tvy * e1[f, 0]
            v = (dx * qvx + dy * qvy + dz * qvz) * inv[f]
            if v < 0.0 or u + v > 1.0:
                continue
            t = (e2[f, 0] * qvx + e2[f, 1] * qvy + e2[f, 2] * qvz) * inv[f]
            if t > 0.0:
                crossings += 1
        out[i] = <unsigned char>(crossings & 1)
    return out_np
