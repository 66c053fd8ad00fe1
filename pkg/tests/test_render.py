"""Rasterizer and sphere-tracing tests, including a coverage oracle."""

import numpy as np
import pytest

from poselab.geometry import CameraIntrinsics, Pose, so3_exp
from poselab.meshing import TexturedMesh, cube_mesh, sphere_mesh
from poselab.render import RGBDFrame, rasterize, sphere_trace_depth

INTR = CameraIntrinsics(fx=300.0, fy=300.0, cx=64.0, cy=64.0, width=128, height=128)


def coverage_oracle(tri_px, tri_py, width, height):
    """Independent per-pixel point-in-triangle test with the same top-left rule.

    Walks every pixel center and evaluates the three half-plane functions
    directly (no bounding box, no vectorization), accepting boundary hits
    on upward edges and the eastbound horizontal edge.
    """
    px, py = list(tri_px), list(tri_py)
    area2 = (px[1] - px[0]) * (py[2] - py[0]) - (py[1] - py[0]) * (px[2] - px[0])
    if area2 == 0:
        return np.zeros((height, width), dtype=bool)
    if area2 < 0:
        px = [px[0], px[2], px[1]]
        py = [py[0], py[2], py[1]]
    out = np.zeros((height, width), dtype=bool)
    for iy in range(height):
        for ix in range(width):
            x, y = ix + 0.5, iy + 0.5
            ok = True
            for i in range(3):
                j = (i + 1) % 3
                w = (px[j] - px[i]) * (y - py[i]) - (py[j] - py[i]) * (x - px[i])
                if w < 0:
                    ok = False
                    break
                if w == 0:
                    dy = py[j] - py[i]
                    dx = px[j] - px[i]
                    if not (dy < 0 or (dy == 0 and dx > 0)):
                        ok = False
                        break
            out[iy, ix] = ok
    return out


def quad_mesh_at_depth(z, half=0.1):
    verts = np.array([[-half, -half, 0.0], [half, -half, 0.0],
                      [half, half, 0.0], [-half, half, 0.0]])
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    colors = np.full((4, 3), 0.5)
    return TexturedMesh(verts, tris, colors), Pose(np.eye(3), np.array([0.0, 0.0, z]))


class TestRasterize:
    def test_facing_quad_exact_depth(self):
        mesh, pose = quad_mesh_at_depth(1.0)
        frame = rasterize(mesh, pose, INTR)
        covered = frame.depth > 0
        assert covered.sum() > 100
        np.testing.assert_array_equal(frame.depth[covered], 1.0)

    def test_behind_camera_empty(self):
        mesh, _ = quad_mesh_at_depth(1.0)
        frame = rasterize(mesh, Pose(np.eye(3), np.array([0.0, 0.0, -1.0])), INTR)
        assert (frame.depth == 0).all()

    def test_single_triangle_matches_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(12):
            verts3d = np.zeros((3, 3))
            verts3d[:, 0] = rng.uniform(-0.15, 0.15, 3)
            verts3d[:, 1] = rng.uniform(-0.15, 0.15, 3)
            mesh = TexturedMesh(verts3d, np.array([[0, 1, 2]]), np.full((3, 3), 0.5))
            pose = Pose(np.eye(3), np.array([0.0, 0.0, 1.0]))
            frame = rasterize(mesh, pose, INTR)
            cam = mesh.vertices + pose.translation
            px = INTR.fx * cam[:, 0] / cam[:, 2] + INTR.cx
            py = INTR.fy * cam[:, 1] / cam[:, 2] + INTR.cy
            oracle = coverage_oracle(px, py, INTR.width, INTR.height)
            assert np.array_equal(frame.depth > 0, oracle)

    def test_adjacent_triangles_partition_shared_edge(self):
        # The two quad triangles share a diagonal; with the top-left rule no
        # pixel may be claimed twice or dropped, so coverage must equal the
        # union computed per-triangle without double counting.
        mesh, pose = quad_mesh_at_depth(1.0)
        full = rasterize(mesh, pose, INTR).depth > 0
        m0 = TexturedMesh(mesh.vertices, mesh.triangles[:1], mesh.colors)
        m1 = TexturedMesh(mesh.vertices, mesh.triangles[1:], mesh.colors)
        c0 = rasterize(m0, pose, INTR).depth > 0
        c1 = rasterize(m1, pose, INTR).depth > 0
        assert not (c0 & c1).any()
        assert np.array_equal(c0 | c1, full)

    def test_submission_order_invariance(self):
        mesh = cube_mesh(0.12, checker=2)
        pose = Pose(so3_exp([0.4, 0.3, 0.2]), np.array([0.0, 0.0, 0.6]))
        frame = rasterize(mesh, pose, INTR)
        rng = np.random.default_rng(1)
        perm = rng.permutation(len(mesh.triangles))
        shuffled = TexturedMesh(mesh.vertices, mesh.triangles[perm], mesh.colors)
        frame2 = rasterize(shuffled, pose, INTR)
        np.testing.assert_array_equal(frame.depth, frame2.depth)

    def test_silhouette_shrinks_with_depth(self):
        mesh = sphere_mesh(0.05, subdivisions=3)
        R = so3_exp([0.1, 0.2, 0.3])
        prev = np.inf
        for tz in np.linspace(0.4, 1.6, 7):
            frame = rasterize(mesh, Pose(R, np.array([0.0, 0.0, tz])), INTR)
            count = int((frame.depth > 0).sum())
            assert count < prev
            prev = count

    def test_depth_is_camera_z(self):
        # A tilted quad: depth varies linearly across the surface and must
        # equal the camera-frame z of the hit point, not the ray length.
        mesh, _ = quad_mesh_at_depth(1.0)
        pose = Pose(so3_exp([0.3, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]))
        frame = rasterize(mesh, pose, INTR)
        covered = frame.depth > 0
        cam = mesh.vertices @ pose.rotation.T + pose.translation
        assert frame.depth[covered].min() >= cam[:, 2].min() - 1e-9
        assert frame.depth[covered].max() <= cam[:, 2].max() + 1e-9


class _SphereField:
    """Analytic normalized-unit sphere SDF of radius 0.5 for tracing tests."""

    def __init__(self, scale, center=np.zeros(3)):
        self.scale = scale
        self.center = np.asarray(center, dtype=np.float64)

    def sdf(self, x):
        return np.linalg.norm(x, axis=1) - 0.5

    def to_normalized(self, pts_m):
        return (pts_m - self.center) / self.scale

    def to_meters(self, pts_n):
        return pts_n * self.scale + self.center


class TestSphereTrace:
    def test_center_ray_depth(self):
        scale = 0.12
        field = _SphereField(scale)
        pose = Pose(np.eye(3), np.array([0.0, 0.0, 0.8]))
        depth = sphere_trace_depth(field, pose, INTR)
        center_depth = depth[64, 64]
        np.testing.assert_allclose(center_depth, 0.8 - 0.5 * scale, atol=1e-4)

    def test_missing_rays_zero(self):
        field = _SphereField(0.05)
        pose = Pose(np.eye(3), np.array([0.0, 0.0, 0.8]))
        depth = sphere_trace_depth(field, pose, INTR)
        assert depth[0, 0] == 0.0
        assert depth[64, 64] > 0.0

    def test_agrees_with_rasterized_mesh(self):
        from poselab.meshing import marching_cubes
        scale = 0.1
        res = 48
        field = _SphereField(scale)
        mesh_n = marching_cubes(field.sdf, res, bound=1.0)
        mesh = TexturedMesh(mesh_n.vertices * scale, mesh_n.triangles)
        pose = Pose(so3_exp([0.2, -0.1, 0.05]), np.array([0.0, 0.0, 0.7]))
        raster = rasterize(mesh, pose, INTR).depth
        traced = sphere_trace_depth(field, pose, INTR)
        both = (raster > 0) & (traced > 0)
        assert both.sum() > 200
        cell_m = 2.0 / res * scale
        median = np.median(np.abs(raster[both] - traced[both]))
        assert median < 2.0 * cell_m


class TestRGBDFrame:
    def test_validation(self):
        with pytest.raises(ValueError):
            RGBDFrame(np.zeros((4, 4, 3)), np.zeros((5, 5)), INTR)
        with pytest.raises(ValueError):
            RGBDFrame(np.zeros((128, 128, 3)), -np.ones((128, 128)), INTR)

    def test_mask_is_positive_depth(self):
        depth = np.zeros((128, 128))
        depth[3, 4] = 1.0
        frame = RGBDFrame(np.zeros((128, 128, 3)), depth, INTR)
        assert frame.mask().sum() == 1
