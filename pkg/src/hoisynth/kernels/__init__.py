"""Geometry hot kernels: point-to-triangle-mesh closest points and ray-parity
inside tests.

Two interchangeable backends exist: a Cython extension (`_core`) and a pure
numpy fallback (`_pure`). Both implement the exact same IEEE double arithmetic
in the same order, so results are bit-identical; the extension is just faster.
Selection happens at import time, with the `HOISYNTH_KERNELS` environment
variable (`compiled` / `pure`) forcing a backend for benchmarks and tests.
"""

import os

import numpy as np

from . import _pure

_requested = os.environ.get("HOISYNTH_KERNELS", "").strip().lower()

if _requested == "pure":
    _impl = _pure
    BACKEND = "pure"
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise ImportError(
                "HOISYNTH_KERNELS=compiled but the Cython extension is not built; "
                "run `pip install -e . --no-build-isolation`"
            )
        _impl = _pure
        BACKEND = "pure"


def _prep_points(arr, name):
    a = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {a.shape}")
    return a


def closest_points(queries, tri_a, tri_b, tri_c):
    """Exact closest point on a triangle set for each query point.

    Returns (points (m,3), distances (m,), face indices (m,)). Ties between
    faces resolve to the lowest face index. Degenerate (zero-area) triangles
    give undefined results.
    """
    q = _prep_points(queries, "queries")
    a = _prep_points(tri_a, "tri_a")
    b = _prep_points(tri_b, "tri_b")
    c = _prep_points(tri_c, "tri_c")
    if not (a.shape == b.shape == c.shape):
        raise ValueError("triangle corner arrays must share a shape")
    if a.shape[0] == 0:
        raise ValueError("empty triangle set")
    return _impl.closest_points(q, a, b, c)


def inside_parity(points, tri_a, tri_b, tri_c, direction):
    """Ray-parity inside test against a watertight triangle set.

    Casts a ray along `direction` from each point and reports odd crossing
    counts. The caller should pick a direction that avoids exact edge/vertex
    grazes (see geometry.RAY_DIRECTION).
    """
    p = _prep_points(points, "points")
    a = _prep_points(tri_a, "tri_a")
    b = _prep_points(tri_b, "tri_b")
    c = _prep_points(tri_c, "tri_c")
    d = np.ascontiguousarray(np.asarray(direction, dtype=np.float64))
    if d.shape != (3,):
        raise ValueError("direction must be a 3-vector")
    return _impl.inside_parity(p, a, b, c, d)
