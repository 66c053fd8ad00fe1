"""Isosurface extraction and mesh I/O tests against analytic oracles."""

import numpy as np
import pytest

from poselab.errors import EmptySurface
from poselab.meshing import (
    TexturedMesh,
    cube_mesh,
    load_obj,
    load_ply,
    marching_cubes,
    project_colors,
    save_obj,
    save_ply,
    sphere_mesh,
    two_tone_sphere_mesh,
    vertex_normals,
)


def sphere_sdf(radius):
    return lambda p: np.linalg.norm(p, axis=1) - radius


class TestMarchingCubes:
    def test_sphere_vertices_near_radius(self):
        res = 64
        mesh = marching_cubes(sphere_sdf(0.5), res, bound=1.0)
        h = np.sqrt(3.0) * 2.0 / res  # cell diagonal
        radii = np.linalg.norm(mesh.vertices, axis=1)
        assert radii.min() >= 0.5 - h
        assert radii.max() <= 0.5 + h

    def test_all_positive_field_raises(self):
        with pytest.raises(EmptySurface):
            marching_cubes(lambda p: np.ones(len(p)), 8)

    def test_sphere_watertight(self):
        mesh = marching_cubes(sphere_sdf(0.5), 32)
        edges = {}
        for tri in mesh.triangles:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (min(a, b), max(a, b))
                edges[key] = edges.get(key, 0) + 1
        counts = set(edges.values())
        assert counts == {2}

    def test_deterministic(self):
        m1 = marching_cubes(sphere_sdf(0.4), 24)
        m2 = marching_cubes(sphere_sdf(0.4), 24)
        assert np.array_equal(m1.vertices, m2.vertices)
        assert np.array_equal(m1.triangles, m2.triangles)

    def test_outward_winding(self):
        mesh = marching_cubes(sphere_sdf(0.5), 32)
        v = mesh.vertices
        t = mesh.triangles
        fn = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        centers = v[t].mean(axis=1)
        outward = (fn * centers).sum(axis=1)
        assert (outward > 0).mean() > 0.999

    def test_vertex_sdf_residual_bounded(self):
        # |sdf(v)| stays within the interpolation bound h * max|grad| (= h
        # for a true distance field).
        res = 32
        mesh = marching_cubes(sphere_sdf(0.5), res)
        h = np.sqrt(3.0) * 2.0 / res
        residual = np.abs(sphere_sdf(0.5)(mesh.vertices))
        assert residual.max() <= h

    def test_no_degenerate_triangles(self):
        mesh = marching_cubes(sphere_sdf(0.5), 24)
        t = mesh.triangles
        assert (t[:, 0] != t[:, 1]).all()
        assert (t[:, 1] != t[:, 2]).all()
        assert (t[:, 0] != t[:, 2]).all()

    def test_resolution_validation(self):
        with pytest.raises(ValueError):
            marching_cubes(sphere_sdf(0.5), 1)


class _TwoToneField:
    """Analytic stand-in for color projection: hemispheres by z sign."""

    def vertex_colors(self, points):
        z = points[:, 2]
        return np.where(z[:, None] >= 0, [0.9, 0.1, 0.1], [0.1, 0.1, 0.9])


class _ConstantField:
    def vertex_colors(self, points):
        return np.full((len(points), 3), 0.42)


class TestProjectColors:
    def test_constant_field(self):
        mesh = marching_cubes(sphere_sdf(0.5), 16)
        out = project_colors(mesh, _ConstantField())
        np.testing.assert_array_equal(out.colors, 0.42)

    def test_colors_in_unit_range(self):
        mesh = marching_cubes(sphere_sdf(0.5), 16)
        out = project_colors(mesh, _TwoToneField())
        assert out.colors.min() >= 0.0
        assert out.colors.max() <= 1.0

    def test_two_tone_assignment(self):
        mesh = marching_cubes(sphere_sdf(0.5), 32)
        out = project_colors(mesh, _TwoToneField())
        expect_red = mesh.vertices[:, 2] >= 0
        is_red = out.colors[:, 0] > 0.5
        agree = (expect_red == is_red).mean()
        assert agree >= 0.99


class TestPrimitives:
    def test_cube_mesh_counts_and_extent(self):
        mesh = cube_mesh(0.1, checker=4)
        assert len(mesh.triangles) == 6 * 4 * 4 * 2
        np.testing.assert_allclose(np.abs(mesh.vertices).max(), 0.05)

    def test_sphere_mesh_radius(self):
        mesh = sphere_mesh(0.07, subdivisions=3)
        np.testing.assert_allclose(np.linalg.norm(mesh.vertices, axis=1), 0.07, rtol=1e-12)

    def test_two_tone_split(self):
        mesh = two_tone_sphere_mesh(1.0, subdivisions=2)
        upper = mesh.vertices[:, 2] >= 0
        assert (mesh.colors[upper][:, 0] > 0.5).all()
        assert (mesh.colors[~upper][:, 2] > 0.5).all()

    def test_vertex_normals_unit_outward_on_sphere(self):
        mesh = sphere_mesh(1.0, subdivisions=3)
        n = vertex_normals(mesh)
        np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-12)
        assert ((n * mesh.vertices).sum(axis=1) > 0.9).all()


class TestMeshIO:
    def test_obj_roundtrip(self, tmp_path):
        mesh = cube_mesh(0.2, checker=2)
        path = tmp_path / "cube.obj"
        save_obj(path, mesh)
        back = load_obj(path)
        np.testing.assert_allclose(back.vertices, mesh.vertices, atol=1e-8)
        assert np.array_equal(back.triangles, mesh.triangles)
        np.testing.assert_allclose(back.colors, mesh.colors, atol=1e-8)

    def test_ply_roundtrip(self, tmp_path):
        mesh = sphere_mesh(0.05, subdivisions=2)
        path = tmp_path / "sphere.ply"
        save_ply(path, mesh)
        back = load_ply(path)
        np.testing.assert_allclose(back.vertices, mesh.vertices, atol=1e-6)
        assert np.array_equal(back.triangles, mesh.triangles)
        np.testing.assert_allclose(back.colors, mesh.colors, atol=1.0 / 255.0)

    def test_mesh_validation(self):
        with pytest.raises(ValueError):
            TexturedMesh(np.zeros((3, 3)), np.array([[0, 1, 5]]))
