"""Object-side geometry: triangle meshes, an OBJ subset reader/writer,
primitive generators, basis-point-set encoding, and signed distance field
grids. Units are meters throughout; reports convert at their own boundary.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels

# Fixed ray for parity tests: an irrational-ish direction that avoids exact
# edge/vertex grazes on axis-aligned and UV-tessellated primitives.
RAY_DIRECTION = np.array([0.47415988136970237, 0.73846026260412878, 0.47942553860420301])

BPS_MAGIC = b"BPS1"
SDF_MAGIC = b"SDF1"


class ObjParseError(ValueError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


@dataclass
class Mesh:
    """Triangle mesh. `analytic` carries the closed-form shape descriptor for
    primitives ((kind, params)), which the SDF builder prefers over the
    tessellation."""

    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray  # (F, 3) int64
    name: str = ""
    watertight: bool = False
    analytic: tuple | None = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        self.faces = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64).reshape(-1, 3))
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError("vertices must have shape (V, 3)")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")

    @property
    def num_faces(self):
        return len(self.faces)

    def triangle_corners(self):
        """Returns the (F,3) corner arrays (a, b, c) consumed by the kernels."""
        if self.num_faces == 0:
            raise ValueError(f"mesh '{self.name}' has no faces")
        v = self.vertices
        return v[self.faces[:, 0]], v[self.faces[:, 1]], v[self.faces[:, 2]]


@dataclass
class BpsBasis:
    points: np.ndarray  # (N, 3), all inside the radius ball
    seed: int
    radius: float = 1.0

    @property
    def n(self):
        return len(self.points)


@dataclass
class BpsFeature:
    """Directional vectors basis point -> nearest surface point. The
    normalization applied before encoding (see normalize_for_bps) is kept
    in memory so world-space quantities can be recovered; the cache file
    stores only the deltas."""

    deltas: np.ndarray  # (N, 3)
    seed: int = 0
    scale: float = 1.0
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass
class SdfGrid:
    origin: np.ndarray  # (3,)
    cell_size: float
    dims: tuple  # (nx, ny, nz), each >= 2
    values: np.ndarray  # (nx, ny, nz)

    def node_coords(self):
        axes = [self.origin[a] + np.arange(self.dims[a]) * self.cell_size for a in range(3)]
        return axes


# -- OBJ subset ---------------------------------------------------------------


def parse_obj(text, name=""):
    """Parse the `v x y z` / `f i j k` OBJ subset. Face entries may carry
    `/t/n` suffixes (stripped); polygons fan-triangulate; any other directive
    is skipped. Raises ObjParseError with the 1-based line number."""
    vertices = []
    faces = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if tokens[0] == "v":
            if len(tokens) < 4:
                raise ObjParseError(ln, f"vertex needs 3 coordinates, got {len(tokens) - 1}")
            try:
                vertices.append([float(tokens[1]), float(tokens[2]), float(tokens[3])])
            except ValueError:
                raise ObjParseError(ln, f"non-numeric vertex coordinate in {tokens[1:4]}") from None
        elif tokens[0] == "f":
            if len(tokens) < 4:
                raise ObjParseError(ln, f"face needs at least 3 indices, got {len(tokens) - 1}")
            idx = []
            for tok in tokens[1:]:
                head = tok.split("/", 1)[0]
                try:
                    i = int(head)
                except ValueError:
                    raise ObjParseError(ln, f"non-integer face index {tok!r}") from None
                if i < 1 or i > len(vertices):
                    raise ObjParseError(ln, f"face index {i} out of range (have {len(vertices)} vertices)")
                idx.append(i - 1)
            for k in range(1, len(idx) - 1):  # fan triangulation
                faces.append((idx[0], idx[k], idx[k + 1]))
        # other directives (vn, vt, o, g, usemtl, ...) skipped
    return Mesh(
        vertices=np.asarray(vertices, dtype=np.float64).reshape(-1, 3),
        faces=np.asarray(faces, dtype=np.int64).reshape(-1, 3),
        name=name,
    )


def serialize_obj(mesh):
    """Writes the same subset back; 9 significant digits keeps coordinates
    reparse-stable within 1e-9."""
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    for f in mesh.faces:
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    return "\n".join(lines) + "\n"


# -- primitives ---------------------------------------------------------------


def primitive_mesh(kind, dims, resolution=24):
    """Watertight primitive centered at the origin.

    box: dims = (sx, sy, sz) full extents.
    sphere: dims = (radius,); UV tessellation with `resolution` latitude bands.
    cylinder: dims = (radius, height); `resolution` sectors, z in [-h/2, h/2].
    """
    dims = tuple(float(d) for d in (dims if isinstance(dims, (tuple, list, np.ndarray)) else (dims,)))
    if any(d <= 0 for d in dims):
        raise ValueError(f"{kind} dims must be positive, got {dims}")
    if kind == "box":
        if len(dims) != 3:
            raise ValueError("box needs (sx, sy, sz)")
        return _box_mesh(*dims)
    if kind == "sphere":
        if len(dims) != 1:
            raise ValueError("sphere needs (radius,)")
        return _sphere_mesh(dims[0], max(3, int(resolution)))
    if kind == "cylinder":
        if len(dims) != 2:
            raise ValueError("cylinder needs (radius, height)")
        return _cylinder_mesh(dims[0], dims[1], max(3, int(resolution)))
    raise ValueError(f"unknown primitive kind {kind!r}")


def _box_mesh(sx, sy, sz):
    hx, hy, hz = sx / 2.0, sy / 2.0, sz / 2.0
    verts = np.array(
        [[x, y, z] for x in (-hx, hx) for y in (-hy, hy) for z in (-hz, hz)],
        dtype=np.float64,
    )
    # outward-wound quads split into triangles; vertex order: index = 4x+2y+z
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    faces = []
    for a, b, c, d in quads:
        faces.append((a, b, c))
        faces.append((a, c, d))
    return Mesh(verts, np.array(faces), name="box", watertight=True,
                analytic=("box", {"half": (hx, hy, hz)}))


def _sphere_mesh(radius, rings):
    sectors = 2 * rings
    verts = [(0.0, 0.0, radius)]
    for i in range(1, rings):
        phi = math.pi * i / rings
        z = radius * math.cos(phi)
        r = radius * math.sin(phi)
        for j in range(sectors):
            th = 2.0 * math.pi * j / sectors
            verts.append((r * math.cos(th), r * math.sin(th), z))
    verts.append((0.0, 0.0, -radius))
    top, bottom = 0, len(verts) - 1
    ring = lambda i, j: 1 + (i - 1) * sectors + (j % sectors)
    faces = []
    for j in range(sectors):  # pole fans
        faces.append((top, ring(1, j), ring(1, j + 1)))
        faces.append((bottom, ring(rings - 1, j + 1), ring(rings - 1, j)))
    for i in range(1, rings - 1):  # band quads
        for j in range(sectors):
            faces.append((ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)))
            faces.append((ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)))
    return Mesh(np.array(verts), np.array(faces), name="sphere", watertight=True,
                analytic=("sphere", {"radius": radius}))


def _cylinder_mesh(radius, height, sectors):
    hz = height / 2.0
    verts = []
    for z in (hz, -hz):
        for j in range(sectors):
            th = 2.0 * math.pi * j / sectors
            verts.append((radius * math.cos(th), radius * math.sin(th), z))
    verts.append((0.0, 0.0, hz))
    verts.append((0.0, 0.0, -hz))
    ctop, cbot = len(verts) - 2, len(verts) - 1
    faces = []
    for j in range(sectors):
        j1 = (j + 1) % sectors
        t0, t1 = j, j1
        b0, b1 = sectors + j, sectors + j1
        faces.append((t0, b0, b1))
        faces.append((t0, b1, t1))
        faces.append((ctop, t0, t1))
        faces.append((cbot, b1, b0))
    return Mesh(np.array(verts), np.array(faces), name="cylinder", watertight=True,
                analytic=("cylinder", {"radius": radius, "height": height}))


# -- basis point set ----------------------------------------------------------


def make_basis(seed, n=1024, radius=1.0):
    """N points uniform in the ball of the given radius; deterministic in the
    seed (inverse-CDF radial scaling of unit directions)."""
    if n < 1:
        raise ValueError("basis needs at least one point")
    if seed < 0:
        raise ValueError("basis seed must be nonnegative")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / 3.0)
    return BpsBasis(points=dirs * r[:, None], seed=int(seed), radius=float(radius))


def nearest_on_surface(mesh, point):
    """Exact nearest point on the triangle surface and its distance; ties
    resolve to the lowest face index."""
    a, b, c = mesh.triangle_corners()
    pts, dist, _ = kernels.closest_points(np.asarray(point, dtype=np.float64).reshape(1, 3), a, b, c)
    return pts[0], float(dist[0])


def normalize_for_bps(mesh, target_radius=0.9):
    """Center the mesh on its vertex centroid and scale its bounding-sphere
    radius to `target_radius`, keeping the surface inside the unit basis
    ball. Returns (normalized mesh, scale, offset) with
    v_norm = (v - offset) * scale."""
    offset = mesh.vertices.mean(axis=0)
    centered = mesh.vertices - offset
    r = float(np.linalg.norm(centered, axis=1).max())
    if r == 0.0:
        raise ValueError("degenerate mesh: all vertices coincide")
    scale = target_radius / r
    return (
        Mesh(centered * scale, mesh.faces, name=mesh.name,
             watertight=mesh.watertight, analytic=None),
        scale,
        offset,
    )


def bps_encode(mesh, basis):
    """deltas[i] = nearest_on_surface(mesh, basis.points[i]) - basis.points[i].
    The mesh is expected to already sit inside the basis ball (see
    normalize_for_bps / encode_object)."""
    a, b, c = mesh.triangle_corners()
    pts, _, _ = kernels.closest_points(np.ascontiguousarray(basis.points), a, b, c)
    return BpsFeature(deltas=pts - basis.points, seed=basis.seed)


def encode_object(mesh, basis):
    """Normalize into the basis ball, then encode; the feature records the
    normalization so callers can map deltas back to world scale."""
    normed, scale, offset = normalize_for_bps(mesh, target_radius=0.9 * basis.radius)
    feat = bps_encode(normed, basis)
    feat.scale = scale
    feat.offset = offset
    return feat


def save_bps(path, feature):
    deltas = np.ascontiguousarray(feature.deltas, dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(BPS_MAGIC)
        fh.write(struct.pack("<I", len(deltas)))
        fh.write(struct.pack("<Q", feature.seed))
        fh.write(deltas.tobytes())


def load_bps(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != BPS_MAGIC:
            raise ValueError(f"{path}: not a BPS cache (magic {magic!r})")
        n = struct.unpack("<I", fh.read(4))[0]
        seed = struct.unpack("<Q", fh.read(8))[0]
        raw = fh.read(n * 3 * 4)
        if len(raw) != n * 3 * 4:
            raise ValueError(f"{path}: truncated BPS cache")
        deltas = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(n, 3)
    return BpsFeature(deltas=deltas, seed=int(seed))


# -- signed distance fields -----------------------------------------------------


def analytic_sdf(analytic, points):
    """Closed-form signed distance of the primitive descriptors, vectorized
    over (n,3) points."""
    kind, params = analytic
    p = np.asarray(points, dtype=np.float64)
    if kind == "sphere":
        return np.linalg.norm(p, axis=-1) - params["radius"]
    if kind == "box":
        half = np.asarray(params["half"])
        q = np.abs(p) - half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside
    if kind == "cylinder":
        r, h = params["radius"], params["height"]
        dr = np.hypot(p[..., 0], p[..., 1]) - r
        dz = np.abs(p[..., 2]) - h / 2.0
        d = np.stack([dr, dz], axis=-1)
        outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
        inside = np.minimum(np.maximum(dr, dz), 0.0)
        return outside + inside
    raise ValueError(f"no analytic SDF for {kind!r}")


def build_sdf(mesh, dims=64, padding=0.1):
    """Sample a signed distance grid over the padded bounding box.

    Primitives evaluate their closed form at the nodes (exact); other meshes
    must be watertight and get unsigned triangle distance signed by ray
    parity. `dims` is the node count along the longest padded axis.
    """
    if dims < 2:
        raise ValueError("grid needs at least 2 nodes per axis")
    if mesh.analytic is None and not mesh.watertight:
        raise ValueError(f"mesh '{mesh.name}' is not watertight and has no analytic form")
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    pad = np.maximum(padding * (hi - lo), 1e-3)
    lo, hi = lo - pad, hi + pad
    extent = hi - lo
    cell = float(extent.max()) / (dims - 1)
    n = np.maximum(2, np.ceil(extent / cell).astype(int) + 1)
    center = (lo + hi) / 2.0
    origin = center - (n - 1) * cell / 2.0

    ax = [origin[k] + np.arange(n[k]) * cell for k in range(3)]
    gx, gy, gz = np.meshgrid(ax[0], ax[1], ax[2], indexing="ij")
    nodes = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)

    if mesh.analytic is not None:
        values = analytic_sdf(mesh.analytic, nodes)
    else:
        va, vb, vc = mesh.triangle_corners()
        _, dist, _ = kernels.closest_points(np.ascontiguousarray(nodes), va, vb, vc)
        inside = kernels.inside_parity(np.ascontiguousarray(nodes), va, vb, vc, RAY_DIRECTION)
        sign = np.where(inside.astype(bool), -1.0, 1.0)
        values = dist * sign
    return SdfGrid(origin=origin, cell_size=cell, dims=tuple(int(k) for k in n),
                   values=values.reshape(tuple(n)))


def sdf_query(grid, points):
    """Trilinear interpolation inside the grid; outside, the boundary value is
    conservatively increased by the Euclidean distance to the grid box.
    Queries within 1e-9 cells of a node return that node's value exactly."""
    p = np.asarray(points, dtype=np.float64)
    single = p.ndim == 1
    p = p.reshape(-1, 3)
    n = np.asarray(grid.dims)
    local = (p - grid.origin) / grid.cell_size

    clamped = np.clip(local, 0.0, n - 1)
    outside = np.linalg.norm(np.maximum(local - (n - 1), 0.0) + np.maximum(-local, 0.0), axis=1)

    i0 = np.floor(clamped + 1e-9).astype(int)
    i0 = np.minimum(i0, n - 2)
    frac = np.clip(clamped - i0, 0.0, 1.0)

    v = grid.values
    ix, iy, iz = i0[:, 0], i0[:, 1], i0[:, 2]
    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
    c000 = v[ix, iy, iz]
    c100 = v[ix + 1, iy, iz]
    c010 = v[ix, iy + 1, iz]
    c110 = v[ix + 1, iy + 1, iz]
    c001 = v[ix, iy, iz + 1]
    c101 = v[ix + 1, iy, iz + 1]
    c011 = v[ix, iy + 1, iz + 1]
    c111 = v[ix + 1, iy + 1, iz + 1]
    c00 = c000 * (1 - fx) + c100 * fx
    c10 = c010 * (1 - fx) + c110 * fx
    c01 = c001 * (1 - fx) + c101 * fx
    c11 = c011 * (1 - fx) + c111 * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    out = c0 * (1 - fz) + c1 * fz + outside * grid.cell_size
    return float(out[0]) if single else out


def save_sdf(path, grid):
    with open(path, "wb") as fh:
        fh.write(SDF_MAGIC)
        fh.write(struct.pack("<3f", *np.asarray(grid.origin, dtype=np.float64)))
        fh.write(struct.pack("<f", grid.cell_size))
        fh.write(struct.pack("<3I", *grid.dims))
        fh.write(np.asarray(grid.values, dtype=np.float32).flatten(order="F").tobytes())


def load_sdf(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SDF_MAGIC:
            raise ValueError(f"{path}: not an SDF cache (magic {magic!r})")
        origin = np.array(struct.unpack("<3f", fh.read(12)), dtype=np.float64)
        cell = struct.unpack("<f", fh.read(4))[0]
        dims = struct.unpack("<3I", fh.read(12))
        count = dims[0] * dims[1] * dims[2]
        raw = fh.read(count * 4)
        if len(raw) != count * 4:
            raise ValueError(f"{path}: truncated SDF cache")
        values = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(dims, order="F")
    return SdfGrid(origin=origin, cell_size=float(cell), dims=tuple(dims), values=values)
