"""Rigid-body pose types and the pose operations of the pipeline.

Conventions: poses map object-frame points into the camera frame
(``x_cam = R x_obj + t``), translations are meters, the camera looks down
+z with pixel coordinates ``u = fx x/z + cx``. Rotation updates are
axis-angle vectors applied by left multiplication in the camera frame, so
a translation update never depends on the rotation update.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InitializationError

ROTATION_TOL = 1e-6


# -- SO(3) helpers ---------------------------------------------------------------


def hat(w: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector."""
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rotation matrix for an axis-angle vector (Rodrigues formula)."""
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        return np.eye(3) + hat(w)
    K = hat(w / theta)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix, magnitude in [0, pi]."""
    R = np.asarray(R, dtype=np.float64)
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < 1e-10:
        # First-order: R ~ I + hat(w).
        return np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    if np.pi - theta < 1e-6:
        # Near pi the antisymmetric part vanishes; recover the axis from
        # the symmetric part R ~ 2 aa^T - I.
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(A), 0.0))
        k = int(np.argmax(axis))
        axis = A[:, k] / (axis[k] if axis[k] > 0 else 1.0)
        axis = axis / np.linalg.norm(axis)
        # Fix the sign using the largest off-diagonal antisymmetric entry.
        w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        if np.dot(w, axis) < 0:
            axis = -axis
        return theta * axis
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return theta / (2.0 * np.sin(theta)) * w


# -- domain types ------------------------------------------------------------------


@dataclass(frozen=True)
class Pose:
    """Rigid transform from object frame to camera frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if np.abs(R.T @ R - np.eye(3)).max() > ROTATION_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ROTATION_TOL:
            raise ValueError("rotation determinant is not +1")

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def from_matrix(m) -> "Pose":
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        return Pose(m[:3, :3], m[:3, 3])

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform [N,3] (or [3]) object-frame points into the camera frame."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """This pose applied after ``other``."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    # Serialization: 4x4 row-major, either JSON or whitespace-separated text.

    def to_json(self) -> str:
        return json.dumps(self.matrix().tolist())

    @staticmethod
    def from_json(text: str) -> "Pose":
        return Pose.from_matrix(np.array(json.loads(text)))

    def to_text(self) -> str:
        return "\n".join(" ".join(f"{v:.17g}" for v in row) for row in self.matrix())

    @staticmethod
    def from_text(text: str) -> "Pose":
        vals = [float(v) for v in text.split()]
        if len(vals) != 16:
            raise ValueError(f"expected 16 values for a 4x4 pose, got {len(vals)}")
        return Pose.from_matrix(np.array(vals).reshape(4, 4))


@dataclass(frozen=True)
class PoseUpdate:
    """Camera-frame pose increment: translation shift plus axis-angle rotation."""

    delta_t: np.ndarray
    delta_r: np.ndarray

    def __post_init__(self):
        dt = np.asarray(self.delta_t, dtype=np.float64).reshape(3)
        dr = np.asarray(self.delta_r, dtype=np.float64).reshape(3)
        object.__setattr__(self, "delta_t", dt)
        object.__setattr__(self, "delta_r", dr)
        if np.linalg.norm(dr) >= np.pi:
            raise ValueError("axis-angle magnitude must be < pi (canonical form)")

    @staticmethod
    def identity() -> "PoseUpdate":
        return PoseUpdate(np.zeros(3), np.zeros(3))

    def inverse(self) -> "PoseUpdate":
        return PoseUpdate(-self.delta_t, -self.delta_r)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @staticmethod
    def from_dict(d: dict) -> "CameraIntrinsics":
        return CameraIntrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]),
                                float(d["cy"]), int(d["width"]), int(d["height"]))

    def scaled_to_crop(self, center: np.ndarray, side: float, out_res: int) -> "Projection":
        """Projection that renders directly into a square crop window."""
        s = out_res / side
        x0 = center[0] - side / 2.0
        y0 = center[1] - side / 2.0
        return Projection(self.fx * s, self.fy * s,
                          (self.cx - x0) * s, (self.cy - y0) * s,
                          out_res, out_res)


@dataclass(frozen=True)
class Projection:
    """Pinhole parameters for virtual cameras (crop windows).

    Unlike CameraIntrinsics this is unvalidated: a crop window centered
    away from the optical axis legitimately places the principal point
    outside its own bounds.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class CropSpec:
    """Square image window: center (pixels), side (pixels), output resolution."""

    center: np.ndarray
    side: float
    out_res: int = 160

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(2))
        if self.side <= 0:
            raise ValueError("crop side must be positive")


# -- operations --------------------------------------------------------------------


def compose_update(pose: Pose, update: PoseUpdate) -> Pose:
    """Apply a disentangled camera-frame update.

    The translation is shifted directly and the rotation is left-multiplied
    by exp(delta_r); the new translation is exactly ``t + delta_t``
    regardless of the rotation part.
    """
    return Pose(so3_exp(update.delta_r) @ pose.rotation,
                pose.translation + update.delta_t)


def geodesic_distance(r1: np.ndarray, r2: np.ndarray) -> float:
    """Angle of the relative rotation between two orientations, in [0, pi]."""
    cos_theta = (np.trace(np.asarray(r1).T @ np.asarray(r2)) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos_theta, -1.0, 1.0)))


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    """Canonical unit icosahedron with a fixed vertex and face ordering."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    return verts, faces


def icosphere(subdivisions: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit icosphere by repeated 4-to-1 triangle subdivision.

    Vertex ordering is deterministic: the 12 icosahedron vertices first,
    then each round's edge midpoints in sorted (min, max) edge order.
    Vertex counts are 12, 42, 162, 642, ... per subdivision level.
    """
    verts, faces = _icosahedron()
    verts = list(verts)
    for _ in range(subdivisions):
        edges = set()
        for a, b, c in faces:
            edges.update({tuple(sorted((a, b))), tuple(sorted((b, c))), tuple(sorted((c, a)))})
        midpoint = {}
        for a, b in sorted(edges):
            m = verts[a] + verts[b]
            midpoint[(a, b)] = len(verts)
            verts.append(m / np.linalg.norm(m))
        new_faces = []
        for a, b, c in faces:
            ab = midpoint[tuple(sorted((a, b)))]
            bc = midpoint[tuple(sorted((b, c)))]
            ca = midpoint[tuple(sorted((c, a)))]
            new_faces.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]])
        faces = np.array(new_faces, dtype=np.int64)
    return np.array(verts), faces


_VIEW_COUNTS = {12: 0, 42: 1, 162: 2, 642: 3, 2562: 4}


def look_at_rotation(direction: np.ndarray) -> np.ndarray:
    """World-to-camera rotation with the camera forward (+z) along ``direction``.

    The up reference is world -y (so an overhead view keeps +x to the
    right); near-degenerate directions fall back to world +x.
    """
    z = np.asarray(direction, dtype=np.float64)
    z = z / np.linalg.norm(z)
    up = np.array([0.0, -1.0, 0.0])
    if abs(np.dot(up, z)) > 0.999:
        up = np.array([1.0, 0.0, 0.0])
    x = np.cross(up, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z])


def sample_global_poses(n_views: int, n_inplane: int, center: np.ndarray,
                        radius: float = 1.0) -> list[Pose]:
    """Uniform global rotation hypotheses with a shared translation.

    Viewpoints are icosphere vertices (camera placed at ``radius`` along
    each vertex direction, facing the center) and each viewpoint carries
    ``n_inplane`` evenly spaced spins about the viewing axis. The object
    sits at ``center`` in the camera frame for every hypothesis; rotations
    are independent of both ``center`` and ``radius``.
    """
    if n_views not in _VIEW_COUNTS:
        raise ValueError(f"n_views must be an icosphere vertex count {sorted(_VIEW_COUNTS)}, got {n_views}")
    if n_inplane < 1:
        raise ValueError("n_inplane must be >= 1")
    directions, _ = icosphere(_VIEW_COUNTS[n_views])
    center = np.asarray(center, dtype=np.float64).reshape(3)
    poses = []
    for v in directions:
        base = look_at_rotation(-v)  # camera at radius*v looks back at the origin
        for k in range(n_inplane):
            angle = 2.0 * np.pi * k / n_inplane
            spin = so3_exp(np.array([0.0, 0.0, angle]))
            poses.append(Pose(spin @ base, center))
    return poses


def init_translation(depth: np.ndarray, bbox, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Back-project the box center at the median valid depth inside the box.

    ``bbox`` is (x0, y0, x1, y1) with exclusive upper bounds. Raises
    InitializationError when the box holds no finite positive depth.
    """
    x0, y0, x1, y1 = (int(v) for v in bbox)
    if not (0 <= x0 < x1 <= intrinsics.width and 0 <= y0 < y1 <= intrinsics.height):
        raise ValueError(f"bbox {bbox} outside image {intrinsics.width}x{intrinsics.height}")
    patch = np.asarray(depth)[y0:y1, x0:x1]
    valid = patch[np.isfinite(patch) & (patch > 0)]
    if valid.size == 0:
        raise InitializationError("no valid depth inside the detection box")
    z = float(np.median(valid))
    u = (x0 + x1) / 2.0
    v = (y0 + y1) / 2.0
    return np.array([(u - intrinsics.cx) / intrinsics.fx * z,
                     (v - intrinsics.cy) / intrinsics.fy * z,
                     z])


def pose_conditioned_crop(pose: Pose, diameter: float, intrinsics: CameraIntrinsics,
                          enlarge: float = 1.4, out_res: int = 160) -> CropSpec:
    """Square crop centered on the projected object origin.

    The side is the projected length of ``enlarge * diameter`` at the
    hypothesis depth, using max(fx, fy) so the window encloses the object
    for anisotropic intrinsics. Because the window follows the hypothesis,
    translation error shows up as misalignment inside the crop.
    """
    t = pose.translation
    if t[2] <= 0:
        raise ValueError("object must be in front of the camera (t_z > 0)")
    center = np.array([intrinsics.fx * t[0] / t[2] + intrinsics.cx,
                       intrinsics.fy * t[1] / t[2] + intrinsics.cy])
    side = max(intrinsics.fx, intrinsics.fy) * enlarge * diameter / t[2]
    return CropSpec(center, side, out_res)


def extract_crop(image: np.ndarray, spec: CropSpec, fill: float = 0.0) -> np.ndarray:
    """Resample a square window to ``spec.out_res`` by nearest neighbor.

    Works for [H,W] and [H,W,C] arrays; samples outside the image are
    filled with ``fill``. Nearest-neighbor keeps the result a pure
    function of (image, spec) with no interpolation tie-break issues.
    """
    res = spec.out_res
    x0 = spec.center[0] - spec.side / 2.0
    y0 = spec.center[1] - spec.side / 2.0
    step = spec.side / res
    us = np.floor(x0 + (np.arange(res) + 0.5) * step).astype(np.int64)
    vs = np.floor(y0 + (np.arange(res) + 0.5) * step).astype(np.int64)
    H, W = image.shape[:2]
    uu = np.clip(us, 0, W - 1)
    vv = np.clip(vs, 0, H - 1)
    out = image[vv[:, None], uu[None, :]].astype(np.float64, copy=True)
    outside = (us < 0) | (us >= W)
    out[:, outside] = fill
    outside_v = (vs < 0) | (vs >= H)
    out[outside_v, :] = fill
    return out
