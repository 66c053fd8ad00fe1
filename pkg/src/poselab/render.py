"""Deterministic software rendering: z-buffer rasterization and sphere tracing.

The rasterizer covers a pixel when its center lies inside the projected
triangle under the top-left fill convention, interpolates camera-space z
and vertex colors with affine barycentrics (adequate for the small crops
used in render-and-compare), and breaks equal-depth ties in favor of the
lower triangle index. Triangles with any vertex at or behind the camera
are dropped rather than clipped; at desk scale objects sit well in front
of the camera.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, Pose, Projection
from .meshing import TexturedMesh

_Z_NEAR = 1e-6


@dataclass
class RGBDFrame:
    """Color in [0,1], metric depth with 0 marking invalid, and intrinsics."""

    color: np.ndarray
    depth: np.ndarray
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        self.color = np.asarray(self.color, dtype=np.float64)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        h, w = self.depth.shape
        if self.color.shape != (h, w, 3):
            raise ValueError("color and depth dimensions disagree")
        if (w, h) != (self.intrinsics.width, self.intrinsics.height):
            raise ValueError("image size does not match intrinsics")
        if self.depth.min() < 0:
            raise ValueError("depth must be non-negative")

    def mask(self) -> np.ndarray:
        return self.depth > 0


def _edge_accepts_boundary(dx: float, dy: float) -> bool:
    # Top-left rule for clockwise screen-space winding (y down): boundary
    # pixels belong to upward (left) edges and to the eastbound top edge.
    return dy < 0 or (dy == 0 and dx > 0)


def rasterize(mesh: TexturedMesh, pose: Pose, intrinsics: CameraIntrinsics,
              resolution=None) -> RGBDFrame:
    """Render the mesh at a pose into an RGBD frame.

    ``resolution`` optionally overrides the output size as (width, height)
    or a square int; the intrinsics are interpreted in those pixel units.
    Background pixels carry depth 0 and black color.
    """
    if resolution is None:
        W, H = intrinsics.width, intrinsics.height
    elif np.isscalar(resolution):
        W = H = int(resolution)
    else:
        W, H = int(resolution[0]), int(resolution[1])

    cam = mesh.vertices @ pose.rotation.T + pose.translation
    z = cam[:, 2]
    u = intrinsics.fx * cam[:, 0] / np.where(z > _Z_NEAR, z, 1.0) + intrinsics.cx
    v = intrinsics.fy * cam[:, 1] / np.where(z > _Z_NEAR, z, 1.0) + intrinsics.cy

    colors = mesh.colors if mesh.colors is not None else np.full_like(mesh.vertices, 0.7)
    zbuf = np.full((H, W), np.inf)
    cbuf = np.zeros((H, W, 3))

    for tri in mesh.triangles:
        tz = z[tri]
        if tz.min() <= _Z_NEAR:
            continue
        px = u[tri]
        py = v[tri]
        # Canonicalize to positive doubled area (clockwise on a y-down screen).
        area2 = (px[1] - px[0]) * (py[2] - py[0]) - (py[1] - py[0]) * (px[2] - px[0])
        if area2 == 0.0:
            continue
        order = (0, 1, 2) if area2 > 0 else (0, 2, 1)
        ax, ay = px[order[0]], py[order[0]]
        bx, by = px[order[1]], py[order[1]]
        cx, cy = px[order[2]], py[order[2]]
        area2 = abs(area2)

        x_lo = max(int(np.floor(min(px) - 0.5)), 0)
        x_hi = min(int(np.ceil(max(px) + 0.5)), W - 1)
        y_lo = max(int(np.floor(min(py) - 0.5)), 0)
        y_hi = min(int(np.ceil(max(py) + 0.5)), H - 1)
        if x_lo > x_hi or y_lo > y_hi:
            continue
        xs = np.arange(x_lo, x_hi + 1) + 0.5
        ys = np.arange(y_lo, y_hi + 1) + 0.5
        PX, PY = np.meshgrid(xs, ys)

        inside = np.ones(PX.shape, dtype=bool)
        ws = []
        for (x1, y1, x2, y2) in ((ax, ay, bx, by), (bx, by, cx, cy), (cx, cy, ax, ay)):
            w = (x2 - x1) * (PY - y1) - (y2 - y1) * (PX - x1)
            on_edge_ok = _edge_accepts_boundary(x2 - x1, y2 - y1)
            inside &= (w > 0) | ((w == 0) & on_edge_ok)
            ws.append(w)
        if not inside.any():
            continue

        # Barycentric weights: each edge function is opposite the vertex
        # not on that edge (edge AB -> weight of C, etc). Interpolate as
        # base + weighted differences so constant attributes stay exact.
        lc = ws[0] / area2
        lb = ws[2] / area2
        ta, tb, tc = order
        depth = tz[ta] + lb * (tz[tb] - tz[ta]) + lc * (tz[tc] - tz[ta])
        win = inside & (depth < zbuf[y_lo:y_hi + 1, x_lo:x_hi + 1]) & (depth > 0)
        if not win.any():
            continue
        ca, cb, cc = colors[tri[ta]], colors[tri[tb]], colors[tri[tc]]
        col = ca + lb[..., None] * (cb - ca) + lc[..., None] * (cc - ca)
        sub_z = zbuf[y_lo:y_hi + 1, x_lo:x_hi + 1]
        sub_c = cbuf[y_lo:y_hi + 1, x_lo:x_hi + 1]
        sub_z[win] = depth[win]
        sub_c[win] = col[win]

    covered = np.isfinite(zbuf)
    depth_img = np.where(covered, zbuf, 0.0)
    if (W, H) == (intrinsics.width, intrinsics.height):
        out_intr = intrinsics
    else:
        out_intr = Projection(intrinsics.fx, intrinsics.fy, intrinsics.cx,
                              intrinsics.cy, W, H)
    return RGBDFrame(np.clip(cbuf, 0.0, 1.0), depth_img, out_intr)


def backproject_depth(depth: np.ndarray, intrinsics) -> np.ndarray:
    """Camera-frame [H,W,3] points for every pixel (invalid depth gives 0)."""
    H, W = depth.shape
    us, vs = np.meshgrid(np.arange(W) + 0.5, np.arange(H) + 0.5)
    x = (us - intrinsics.cx) / intrinsics.fx * depth
    y = (vs - intrinsics.cy) / intrinsics.fy * depth
    return np.stack([x, y, depth], axis=-1)


def depth_normals(depth: np.ndarray, intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel surface normals by central differences of back-projections.

    Returns (normals [H,W,3], valid [H,W]); a pixel is valid when it and
    its four neighbors carry depth. Normals are unit length and oriented
    toward the camera.
    """
    pts = backproject_depth(depth, intrinsics)
    H, W = depth.shape
    valid = depth > 0
    ok = np.zeros((H, W), dtype=bool)
    ok[1:-1, 1:-1] = (valid[1:-1, 1:-1] & valid[1:-1, :-2] & valid[1:-1, 2:]
                      & valid[:-2, 1:-1] & valid[2:, 1:-1])
    dpdu = np.zeros_like(pts)
    dpdv = np.zeros_like(pts)
    dpdu[1:-1, 1:-1] = (pts[1:-1, 2:] - pts[1:-1, :-2]) / 2.0
    dpdv[1:-1, 1:-1] = (pts[2:, 1:-1] - pts[:-2, 1:-1]) / 2.0
    n = np.cross(dpdv.reshape(-1, 3), dpdu.reshape(-1, 3)).reshape(H, W, 3)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    good = norm[..., 0] > 1e-12
    ok &= good
    n = np.where(good[..., None], n / np.where(norm > 0, norm, 1.0), 0.0)
    # Orient toward the camera: the view ray and normal must oppose.
    flip = (n * pts).sum(axis=-1) > 0
    n[flip] *= -1.0
    return n, ok


def sphere_trace_depth(field, pose: Pose, intrinsics: CameraIntrinsics,
                       resolution=None, eps: float = 1e-4, max_steps: int = 96) -> np.ndarray:
    """Per-pixel ray marching of the field's SDF; returns metric z-depth.

    Steps each ray by the current signed distance (in the field's
    normalized units) until |s| < eps or the ray leaves the volume bound;
    misses are 0. ``field`` needs ``sdf(x)``, ``to_normalized`` and
    ``to_meters`` plus ``scale``.
    """
    if resolution is None:
        W, H = intrinsics.width, intrinsics.height
    elif np.isscalar(resolution):
        W = H = int(resolution)
    else:
        W, H = int(resolution[0]), int(resolution[1])

    us, vs = np.meshgrid(np.arange(W) + 0.5, np.arange(H) + 0.5)
    dirs_cam = np.stack([(us - intrinsics.cx) / intrinsics.fx,
                         (vs - intrinsics.cy) / intrinsics.fy,
                         np.ones_like(us)], axis=-1).reshape(-1, 3)
    dirs_cam /= np.linalg.norm(dirs_cam, axis=1, keepdims=True)

    inv = pose.inverse()
    origin_n = field.to_normalized(inv.translation[None, :])[0]
    dirs = dirs_cam @ inv.rotation.T  # rotation only; directions are unit
    n_rays = len(dirs)

    # Ray/box intersection with the normalized volume bound [-1, 1]^3.
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-1.0 - origin_n) / dirs
        t2 = (1.0 - origin_n) / dirs
    t_lo = np.nanmax(np.minimum(t1, t2), axis=1)
    t_hi = np.nanmin(np.maximum(t1, t2), axis=1)
    hit_box = (t_hi > np.maximum(t_lo, 0.0))

    t = np.maximum(t_lo, 0.0) + 1e-9
    active = hit_box.copy()
    converged = np.zeros(n_rays, dtype=bool)
    for _ in range(max_steps):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        pts = origin_n[None, :] + t[idx, None] * dirs[idx]
        s = field.sdf(pts)
        done = np.abs(s) < eps
        converged[idx[done]] = True
        active[idx[done]] = False
        step = np.where(done, 0.0, np.maximum(s, 0.5 * eps))
        t[idx] = t[idx] + step
        left = t[idx] > t_hi[idx]
        active[idx[left]] = False

    depth = np.zeros(n_rays)
    if converged.any():
        pts_n = origin_n[None, :] + t[converged, None] * dirs[converged]
        pts_cam = pose.apply(field.to_meters(pts_n))
        depth[converged] = pts_cam[:, 2]
    return depth.reshape(H, W)
