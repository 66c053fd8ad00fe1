"""Triangle meshes: isosurface extraction, color projection, OBJ/PLY I/O.

Marching cubes walks a regular grid over the sampling bound, places
vertices on sign-changing edges by linear interpolation, and emits
triangles from the fixed 256-case table in ``mc_tables``. Vertices are
deduplicated through global edge identities, so a closed isosurface
yields a watertight mesh. Cell iteration order, vertex numbering, and
table resolution of ambiguous cases are all fixed, making extraction
deterministic.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import EmptySurface
from .mc_tables import CORNER_OFFSETS, EDGE_CROSSINGS, TRIANGLE_EDGES

# Local edge index -> (axis, corner offset of the edge origin).
_EDGE_AXIS_OFFSET = (
    (0, (0, 0, 0)), (1, (1, 0, 0)), (0, (0, 1, 0)), (1, (0, 0, 0)),
    (0, (0, 0, 1)), (1, (1, 0, 1)), (0, (0, 1, 1)), (1, (0, 0, 1)),
    (2, (0, 0, 0)), (2, (1, 0, 0)), (2, (1, 1, 0)), (2, (0, 1, 0)),
)


@dataclass
class TexturedMesh:
    """Vertices (object frame, meters), triangle indices, optional vertex colors."""

    vertices: np.ndarray
    triangles: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
            if len(self.colors) != len(self.vertices):
                raise ValueError("one color per vertex required")
        if len(self.triangles) and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("non-finite vertex coordinates")

    def transformed(self, scale: float = 1.0, offset=(0.0, 0.0, 0.0)) -> "TexturedMesh":
        return TexturedMesh(self.vertices * scale + np.asarray(offset), self.triangles, self.colors)

    def diameter(self) -> float:
        from .metrics import object_diameter
        return object_diameter(self.vertices)


def marching_cubes(sdf, resolution: int, bound=1.0, chunk: int = 262144) -> TexturedMesh:
    """Extract the zero level set of ``sdf`` over a cubic domain.

    ``sdf`` maps [N,3] points to [N] signed values (negative inside);
    ``resolution`` is the cell count per axis and ``bound`` either a
    half-extent ``b`` for [-b, b]^3 or an explicit (lo, hi) pair.
    Raises EmptySurface when no cell straddles zero.
    """
    if resolution < 2:
        raise ValueError("resolution must be >= 2 cells per axis")
    if np.isscalar(bound):
        lo, hi = -float(bound), float(bound)
    else:
        lo, hi = float(bound[0]), float(bound[1])
    n = resolution + 1
    axis = np.linspace(lo, hi, n)
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)
    pts = grid.reshape(-1, 3)
    values = np.empty(len(pts))
    for start in range(0, len(pts), chunk):
        values[start:start + chunk] = np.asarray(sdf(pts[start:start + chunk])).reshape(-1)
    values = values.reshape(n, n, n)

    inside = values < 0.0
    if not inside.any() or inside.all():
        raise EmptySurface("field has no zero crossing inside the bound")

    # Case index per cell from the 8 corner inside-bits.
    case = np.zeros((resolution,) * 3, dtype=np.int64)
    for bit, (ox, oy, oz) in enumerate(CORNER_OFFSETS):
        case |= inside[ox:ox + resolution, oy:oy + resolution, oz:oz + resolution].astype(np.int64) << bit
    mixed = (case != 0) & (case != 255)
    if not mixed.any():
        raise EmptySurface("no surface cells")

    # Vertices live on grid edges whose endpoints differ; one id per edge.
    spacing = (hi - lo) / resolution
    edge_ids = []
    verts = []
    next_id = 0
    for ax in range(3):
        sl_hi = [slice(None)] * 3
        sl_hi[ax] = slice(1, None)
        sl_lo = [slice(None)] * 3
        sl_lo[ax] = slice(0, -1)
        crossing = inside[tuple(sl_lo)] != inside[tuple(sl_hi)]
        ids = np.full(crossing.shape, -1, dtype=np.int64)
        count = int(crossing.sum())
        ids[crossing] = next_id + np.arange(count)
        next_id += count
        v0 = values[tuple(sl_lo)][crossing]
        v1 = values[tuple(sl_hi)][crossing]
        t = v0 / (v0 - v1)
        origin = np.argwhere(crossing).astype(np.float64)
        pos = lo + origin * spacing
        pos[:, ax] += t * spacing
        edge_ids.append(ids)
        verts.append(pos)
    vertices = np.concatenate(verts, axis=0)

    # Per-cell lookup arrays: local edge -> global vertex id.
    cell_edge_vid = np.empty((12,) + case.shape, dtype=np.int64)
    R = resolution
    for le, (ax, (ox, oy, oz)) in enumerate(_EDGE_AXIS_OFFSET):
        ids = edge_ids[ax]
        cell_edge_vid[le] = ids[ox:ox + R, oy:oy + R, oz:oz + R]

    cells = np.argwhere(mixed)  # C order, deterministic
    cell_cases = case[mixed]
    tri_rows = TRIANGLE_EDGES[cell_cases]  # [M, 16]
    edge_vid = cell_edge_vid[:, mixed]     # [12, M]

    tris = []
    for slot in range(5):
        e = tri_rows[:, 3 * slot:3 * slot + 3]
        valid = e[:, 0] >= 0
        if not valid.any():
            break
        sel = np.nonzero(valid)[0]
        tri = np.stack([edge_vid[e[sel, k], sel] for k in range(3)], axis=1)
        order = np.argsort(sel, kind="stable")
        tris.append((sel[order], tri[order]))
    if not tris:
        raise EmptySurface("no triangles generated")
    # Interleave slots back into cell order so output order is a pure
    # function of the grid, then drop degenerate (repeated-id) triangles.
    all_cells = np.concatenate([c for c, _ in tris])
    all_tris = np.concatenate([t for _, t in tris])
    order = np.argsort(all_cells, kind="stable")
    triangles = all_tris[order]
    keep = ((triangles[:, 0] != triangles[:, 1])
            & (triangles[:, 1] != triangles[:, 2])
            & (triangles[:, 0] != triangles[:, 2]))
    triangles = triangles[keep]
    # Table winding faces inward for the negative-inside convention; flip
    # so cross(v1-v0, v2-v0) points toward positive field values.
    triangles = triangles[:, ::-1]
    return TexturedMesh(vertices, triangles, None)


def project_colors(mesh: TexturedMesh, field) -> TexturedMesh:
    """Color each vertex by querying the field head-on.

    ``field`` must provide ``vertex_colors(points_m)`` returning [N,3]
    in [0,1]; the neural object field evaluates its appearance network
    with the outward surface normal as both the normal and the negated
    view direction.
    """
    colors = np.asarray(field.vertex_colors(mesh.vertices))
    if colors.shape != mesh.vertices.shape:
        raise ValueError("field returned wrong color count")
    return TexturedMesh(mesh.vertices, mesh.triangles, colors)


def vertex_normals(mesh: TexturedMesh) -> np.ndarray:
    """Area-weighted average of incident face normals, unit length."""
    v = mesh.vertices
    t = mesh.triangles
    fn = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    out = np.zeros_like(v)
    for k in range(3):
        np.add.at(out, t[:, k], fn)
    norm = np.linalg.norm(out, axis=1, keepdims=True)
    norm[norm == 0] = 1.0
    return out / norm


# -- mesh file I/O -------------------------------------------------------------


def save_obj(path, mesh: TexturedMesh):
    """ASCII OBJ; vertex colors ride as the common 6-number ``v`` extension."""
    with open(path, "w") as fh:
        fh.write("# poselab mesh\n")
        if mesh.colors is None:
            for p in mesh.vertices:
                fh.write(f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")
        else:
            for p, c in zip(mesh.vertices, mesh.colors):
                fh.write(f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g} {c[0]:.9g} {c[1]:.9g} {c[2]:.9g}\n")
        for a, b, c in mesh.triangles + 1:
            fh.write(f"f {a} {b} {c}\n")


def load_obj(path) -> TexturedMesh:
    verts, colors, faces = [], [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                nums = [float(x) for x in parts[1:]]
                verts.append(nums[:3])
                if len(nums) >= 6:
                    colors.append(nums[3:6])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:4]]
                faces.append(idx)
    return TexturedMesh(np.array(verts), np.array(faces),
                        np.array(colors) if colors else None)


def save_ply(path, mesh: TexturedMesh):
    """Binary little-endian PLY: float xyz, uchar rgb, int32 face lists."""
    colors = mesh.colors if mesh.colors is not None else np.full_like(mesh.vertices, 0.7)
    rgb = np.clip(np.round(colors * 255.0), 0, 255).astype(np.uint8)
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(mesh.vertices)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        f"element face {len(mesh.triangles)}\n"
        "property list uchar int vertex_indices\nend_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        for p, c in zip(mesh.vertices.astype("<f4"), rgb):
            fh.write(struct.pack("<fff3B", p[0], p[1], p[2], c[0], c[1], c[2]))
        for tri in mesh.triangles.astype("<i4"):
            fh.write(struct.pack("<B3i", 3, tri[0], tri[1], tri[2]))


def load_ply(path) -> TexturedMesh:
    with open(path, "rb") as fh:
        n_vert = n_face = 0
        while True:
            line = fh.readline().decode("ascii").strip()
            if line.startswith("element vertex"):
                n_vert = int(line.split()[-1])
            elif line.startswith("element face"):
                n_face = int(line.split()[-1])
            elif line == "end_header":
                break
            elif line.startswith("format") and "binary_little_endian" not in line:
                raise ValueError("only binary little-endian PLY is supported")
        verts = np.empty((n_vert, 3))
        colors = np.empty((n_vert, 3))
        for i in range(n_vert):
            x, y, z, r, g, b = struct.unpack("<fff3B", fh.read(15))
            verts[i] = (x, y, z)
            colors[i] = (r / 255.0, g / 255.0, b / 255.0)
        faces = np.empty((n_face, 3), dtype=np.int64)
        for i in range(n_face):
            (cnt,) = struct.unpack("<B", fh.read(1))
            if cnt != 3:
                raise ValueError("only triangle faces are supported")
            faces[i] = struct.unpack("<3i", fh.read(12))
    return TexturedMesh(verts, faces, colors)


# -- procedural primitives ------------------------------------------------------


def sphere_mesh(radius: float, subdivisions: int = 4, color=(0.8, 0.3, 0.2)) -> TexturedMesh:
    """Subdivided icosahedron scaled to ``radius`` with a uniform color."""
    from .geometry import icosphere
    verts, faces = icosphere(subdivisions)
    colors = np.tile(np.asarray(color, dtype=np.float64), (len(verts), 1))
    return TexturedMesh(verts * radius, faces, colors)


def two_tone_sphere_mesh(radius: float, subdivisions: int = 4,
                         color_pos=(0.9, 0.2, 0.1), color_neg=(0.1, 0.3, 0.9),
                         axis: int = 2) -> TexturedMesh:
    """Sphere whose hemispheres (split by vertex sign on ``axis``) differ in color."""
    from .geometry import icosphere
    verts, faces = icosphere(subdivisions)
    colors = np.where(verts[:, axis:axis + 1] >= 0.0,
                      np.asarray(color_pos), np.asarray(color_neg))
    return TexturedMesh(verts * radius, faces, colors)


def cube_mesh(size: float, checker: int = 0,
              color_a=(0.85, 0.75, 0.2), color_b=(0.15, 0.2, 0.55)) -> TexturedMesh:
    """Axis-aligned cube of edge ``size`` centered at the origin.

    With ``checker > 0`` each face is split into a checker x checker grid
    of quads colored in an alternating two-tone pattern (vertices are not
    shared across cells, so the pattern stays crisp under interpolation).
    """
    h = size / 2.0
    verts, faces, colors = [], [], []
    color_a = np.asarray(color_a, dtype=np.float64)
    color_b = np.asarray(color_b, dtype=np.float64)
    n = max(1, checker)
    # One face per axis and sign; u, v span the face.
    for axis in range(3):
        for sign in (-1.0, 1.0):
            ua, va = (axis + 1) % 3, (axis + 2) % 3
            for i in range(n):
                for j in range(n):
                    base = len(verts)
                    for du, dv in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        p = np.zeros(3)
                        p[axis] = sign * h
                        p[ua] = -h + (i + du) * size / n
                        p[va] = -h + (j + dv) * size / n
                        verts.append(p)
                    col = color_a if (i + j + (sign > 0) + axis) % 2 == 0 else color_b
                    colors.extend([col] * 4)
                    if sign > 0:
                        faces.extend([[base, base + 1, base + 2], [base, base + 2, base + 3]])
                    else:
                        faces.extend([[base, base + 2, base + 1], [base, base + 3, base + 2]])
    return TexturedMesh(np.array(verts), np.array(faces), np.array(colors))
