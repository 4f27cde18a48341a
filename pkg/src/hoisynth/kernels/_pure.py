"""Pure numpy kernel backend.

The arithmetic here is written with explicit per-component operations in a
fixed order so that results are bit-identical to the Cython backend (which
repeats the same expressions scalar-wise, compiled with FP contraction off).
Region classification follows the standard closest-point-on-triangle
decomposition (vertex / edge / face Voronoi regions).
"""

import numpy as np

_CHUNK = 256


def _closest_chunk(p, a, b, c):
    """p: (m,3) queries; a/b/c: (F,3) triangle corners.
    Returns (qx, qy, qz, d2) arrays of shape (m, F)."""
    abx = b[:, 0] - a[:, 0]
    aby = b[:, 1] - a[:, 1]
    abz = b[:, 2] - a[:, 2]
    acx = c[:, 0] - a[:, 0]
    acy = c[:, 1] - a[:, 1]
    acz = c[:, 2] - a[:, 2]
    cbx = c[:, 0] - b[:, 0]
    cby = c[:, 1] - b[:, 1]
    cbz = c[:, 2] - b[:, 2]

    px, py, pz = p[:, 0:1], p[:, 1:2], p[:, 2:3]  # (m,1) for broadcasting
    ax, ay, az = a[None, :, 0], a[None, :, 1], a[None, :, 2]
    bx, by, bz = b[None, :, 0], b[None, :, 1], b[None, :, 2]
    cx, cy, cz = c[None, :, 0], c[None, :, 1], c[None, :, 2]

    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2_ = acx * apx + acy * apy + acz * apz

    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz

    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz

    vc = d1 * d4 - d3 * d2_
    vb = d5 * d2_ - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = d1 / (d1 - d3)
        w_ac = d2_ / (d2_ - d6)
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = 1.0 / (va + vb + vc)
    v_f = vb * denom
    w_f = vc * denom

    conds = [
        (d1 <= 0.0) & (d2_ <= 0.0),
        (d3 >= 0.0) & (d4 <= d3),
        (vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0),
        (d6 >= 0.0) & (d5 <= d6),
        (vb <= 0.0) & (d2_ >= 0.0) & (d6 <= 0.0),
        (va <= 0.0) & ((d4 - d3) >= 0.0) & ((d5 - d6) >= 0.0),
    ]
    full = d1.shape
    qx = np.select(
        conds,
        [np.broadcast_to(ax, full), np.broadcast_to(bx, full), ax + v_ab * abx,
         np.broadcast_to(cx, full), ax + w_ac * acx, bx + w_bc * cbx],
        default=ax + abx * v_f + acx * w_f,
    )
    qy = np.select(
        conds,
        [np.broadcast_to(ay, full), np.broadcast_to(by, full), ay + v_ab * aby,
         np.broadcast_to(cy, full), ay + w_ac * acy, by + w_bc * cby],
        default=ay + aby * v_f + acy * w_f,
    )
    qz = np.select(
        conds,
        [np.broadcast_to(az, full), np.broadcast_to(bz, full), az + v_ab * abz,
         np.broadcast_to(cz, full), az + w_ac * acz, bz + w_bc * cbz],
        default=az + abz * v_f + acz * w_f,
    )

    dx, dy, dz = px - qx, py - qy, pz - qz
    d2 = dx * dx + dy * dy + dz * dz
    return qx, qy, qz, d2


def closest_points(queries, a, b, c):
    m = queries.shape[0]
    out_pts = np.empty((m, 3), dtype=np.float64)
    out_dist = np.empty(m, dtype=np.float64)
    out_face = np.empty(m, dtype=np.int64)
    for start in range(0, m, _CHUNK):
        p = queries[start : start + _CHUNK]
        qx, qy, qz, d2 = _closest_chunk(p, a, b, c)
        idx = np.argmin(d2, axis=1)  # first minimum: lowest face index wins ties
        rows = np.arange(p.shape[0])
        out_pts[start : start + _CHUNK, 0] = qx[rows, idx]
        out_pts[start : start + _CHUNK, 1] = qy[rows, idx]
        out_pts[start : start + _CHUNK, 2] = qz[rows, idx]
        out_dist[start : start + _CHUNK] = np.sqrt(d2[rows, idx])
        out_face[start : start + _CHUNK] = idx
    return out_pts, out_dist, out_face


def inside_parity(points, a, b, c, direction):
    dx, dy, dz = float(direction[0]), float(direction[1]), float(direction[2])

    e1x = b[:, 0] - a[:, 0]
    e1y = b[:, 1] - a[:, 1]
    e1z = b[:, 2] - a[:, 2]
    e2x = c[:, 0] - a[:, 0]
    e2y = c[:, 1] - a[:, 1]
    e2z = c[:, 2] - a[:, 2]

    # pvec = direction x e2 (constant per face)
    pvx = dy * e2z - dz * e2y
    pvy = dz * e2x - dx * e2z
    pvz = dx * e2y - dy * e2x
    det = e1x * pvx + e1y * pvy + e1z * pvz
    ok = np.abs(det) > 1e-12
    with np.errstate(divide="ignore"):
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)

    m = points.shape[0]
    out = np.empty(m, dtype=np.uint8)
    for start in range(0, m, _CHUNK):
        p = points[start : start + _CHUNK]
        px, py, pz = p[:, 0:1], p[:, 1:2], p[:, 2:3]
        tvx = px - a[None, :, 0]
        tvy = py - a[None, :, 1]
        tvz = pz - a[None, :, 2]
        u = (tvx * pvx + tvy * pvy + tvz * pvz) * inv
        # qvec = tvec x e1
        qvx = tvy * e1z - tvz * e1y
        qvy = tvz * e1x - tvx * e1z
        qvz = tvx * e1y - tvy * e1x
        v = (dx * qvx + dy * qvy + dz * qvz) * inv
        t = (e2x * qvx + e2y * qvy + e2z * qvz) * inv
        hit = ok & (u >= 0.0) & (u <= 1.0) & (v >= 0.0) & (u + v <= 1.0) & (t > 0.0)
        out[start : start + _CHUNK] = (hit.sum(axis=1) % 2).astype(np.uint8)
    return out
