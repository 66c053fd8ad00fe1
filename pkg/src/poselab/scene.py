"""Procedural RGBD scene generation for training and evaluation at desk scale.

Scenes are rendered through the package's own rasterizer from analytic
primitive meshes (or a mesh file), so every frame carries an exact
ground-truth pose and a mask equal to the rendered silhouette. Depth
noise (Gaussian jitter plus dropout) is applied after the clean mask is
taken.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .autodiff.rng import rng_stream
from .geometry import CameraIntrinsics, Pose, look_at_rotation, icosphere
from .meshing import TexturedMesh, cube_mesh, load_obj, sphere_mesh, two_tone_sphere_mesh
from .render import RGBDFrame, rasterize

OBJECT_KINDS = ("sphere", "cube", "two_tone_sphere", "mesh")


@dataclass
class SceneSpec:
    """Everything needed to synthesize one object's RGBD sequence."""

    kind: str = "cube"
    scale: float = 0.1                       # object size, meters
    trajectory: list = dataclass_field(default_factory=list)   # object->camera poses
    intrinsics: CameraIntrinsics | None = None
    depth_noise: float = 0.0                 # Gaussian sigma, meters
    dropout: float = 0.0                     # fraction of valid depth zeroed
    checker: int = 8                         # cube face grid
    subdivisions: int = 4                    # sphere tessellation
    mesh_path: str | None = None

    def __post_init__(self):
        if self.kind not in OBJECT_KINDS:
            raise ValueError(f"unknown object kind {self.kind!r}; choose from {OBJECT_KINDS}")
        if self.scale <= 0:
            raise ValueError("object scale must be positive")
        if self.intrinsics is None:
            self.intrinsics = CameraIntrinsics(280.0, 280.0, 80.0, 80.0, 160, 160)

    def build_mesh(self) -> TexturedMesh:
        if self.kind == "sphere":
            return sphere_mesh(self.scale / 2.0, self.subdivisions)
        if self.kind == "two_tone_sphere":
            return two_tone_sphere_mesh(self.scale / 2.0, self.subdivisions)
        if self.kind == "cube":
            return cube_mesh(self.scale, checker=self.checker)
        if self.mesh_path is None:
            raise ValueError("kind 'mesh' requires mesh_path")
        return load_obj(self.mesh_path)


def orbit_trajectory(n_frames: int, distance: float, elevation_deg: float = 20.0,
                     full_turns: float = 1.0) -> list[Pose]:
    """Object-to-camera poses for a camera circling the object.

    The camera stays at ``distance`` with fixed elevation and orbits
    ``full_turns`` revolutions over the sequence, always facing the object
    origin (which therefore projects to the optical axis).
    """
    poses = []
    el = np.deg2rad(elevation_deg)
    for k in range(n_frames):
        az = 2.0 * np.pi * full_turns * k / max(n_frames, 1)
        eye = distance * np.array([np.cos(el) * np.cos(az),
                                   np.cos(el) * np.sin(az),
                                   np.sin(el)])
        R = look_at_rotation(-eye)   # camera forward points back at the origin
        poses.append(Pose(R, R @ (-eye)))
    return poses


def view_sphere_trajectory(distance: float, subdivisions: int = 0) -> list[Pose]:
    """One pose per icosphere vertex, camera facing the origin (12/42/... views)."""
    dirs, _ = icosphere(subdivisions)
    poses = []
    for v in dirs:
        R = look_at_rotation(-v)
        eye = distance * v
        poses.append(Pose(R, R @ (-eye)))
    return poses


def generate_scene(spec: SceneSpec, rng: np.random.Generator | int = 0):
    """Render the scene: list of (RGBDFrame, gt Pose, mask) per trajectory pose.

    Masks are the exact zero-noise silhouettes; depth noise and dropout
    are then applied to the valid pixels only. Fixed seeds reproduce the
    scene bit for bit.
    """
    if isinstance(rng, (int, np.integer)):
        rng = rng_stream(int(rng), "scene")
    if not spec.trajectory:
        raise ValueError("scene needs at least one camera pose")
    mesh = spec.build_mesh()
    frames = []
    for pose in spec.trajectory:
        frame = rasterize(mesh, pose, spec.intrinsics)
        mask = frame.depth > 0
        depth = frame.depth.copy()
        if spec.depth_noise > 0:
            noise = rng.normal(0.0, spec.depth_noise, size=depth.shape)
            depth[mask] = np.maximum(depth[mask] + noise[mask], 1e-6)
        if spec.dropout > 0:
            drop = rng.random(depth.shape) < spec.dropout
            depth[mask & drop] = 0.0
        frames.append((RGBDFrame(frame.color, depth, frame.intrinsics), pose, mask))
    return frames
