"""Metric tests against naive loop oracles and hand-integrated curves."""

import numpy as np
import pytest

from poselab.geometry import Pose, so3_exp
from poselab.metrics import EvalReport, add, add_recall_01d, add_s, auc, object_diameter

from test_geometry import random_rotation


def add_oracle(pe, pg, pts):
    total = 0.0
    for p in pts:
        a = pe.rotation @ p + pe.translation
        b = pg.rotation @ p + pg.translation
        total += np.sqrt(((a - b) ** 2).sum())
    return total / len(pts)


def add_s_oracle(pe, pg, pts):
    est = [pe.rotation @ p + pe.translation for p in pts]
    total = 0.0
    for p in pts:
        g = pg.rotation @ p + pg.translation
        total += min(np.sqrt(((g - e) ** 2).sum()) for e in est)
    return total / len(pts)


def diameter_oracle(pts):
    best = 0.0
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            best = max(best, np.sqrt(((pts[i] - pts[j]) ** 2).sum()))
    return best


class TestAdd:
    def test_identical_poses(self):
        rng = np.random.default_rng(0)
        p = Pose(random_rotation(rng), rng.normal(size=3))
        pts = rng.normal(size=(50, 3))
        assert add(p, p, pts) == 0.0

    def test_pure_translation(self):
        rng = np.random.default_rng(1)
        R = random_rotation(rng)
        pts = rng.normal(size=(30, 3))
        p1 = Pose(R, np.zeros(3))
        p2 = Pose(R, np.array([0.05, 0.0, 0.0]))
        np.testing.assert_allclose(add(p1, p2, pts), 0.05, rtol=1e-12)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            pe = Pose(random_rotation(rng), rng.normal(size=3) * 0.1)
            pg = Pose(random_rotation(rng), rng.normal(size=3) * 0.1)
            pts = rng.normal(size=(40, 3)) * 0.05
            assert abs(add(pe, pg, pts) - add_oracle(pe, pg, pts)) < 1e-12

    def test_invariant_under_common_rigid_transform(self):
        rng = np.random.default_rng(3)
        pe = Pose(random_rotation(rng), rng.normal(size=3) * 0.1)
        pg = Pose(random_rotation(rng), rng.normal(size=3) * 0.1)
        pts = rng.normal(size=(25, 3)) * 0.05
        common = Pose(random_rotation(rng), rng.normal(size=3))
        np.testing.assert_allclose(add(common.compose(pe), common.compose(pg), pts),
                                   add(pe, pg, pts), rtol=1e-9)

    def test_empty_points_rejected(self):
        with pytest.raises(ValueError):
            add(Pose.identity(), Pose.identity(), np.zeros((0, 3)))


class TestAddS:
    def test_identical_poses(self):
        rng = np.random.default_rng(4)
        p = Pose(random_rotation(rng), rng.normal(size=3))
        assert add_s(p, p, rng.normal(size=(20, 3))) == 0.0

    def test_never_exceeds_add(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            pe = Pose(random_rotation(rng), rng.normal(size=3) * 0.05)
            pg = Pose(random_rotation(rng), rng.normal(size=3) * 0.05)
            pts = rng.normal(size=(12, 3)) * 0.05
            assert add_s(pe, pg, pts) <= add(pe, pg, pts) + 1e-15

    def test_symmetric_ring(self):
        # A ring spun about its own axis: ADD sees a large error, ADD-S
        # sees almost none.
        n = 360
        ang = 2 * np.pi * np.arange(n) / n
        ring = np.stack([0.05 * np.cos(ang), 0.05 * np.sin(ang), np.zeros(n)], axis=1)
        pg = Pose(np.eye(3), np.array([0.0, 0.0, 0.5]))
        pe = Pose(so3_exp([0.0, 0.0, np.pi / 3]), np.array([0.0, 0.0, 0.5]))
        assert add(pe, pg, ring) > 0.04
        assert add_s(pe, pg, ring) < 1e-3

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            pe = Pose(random_rotation(rng), rng.normal(size=3) * 0.1)
            pg = Pose(random_rotation(rng), rng.normal(size=3) * 0.1)
            pts = rng.normal(size=(25, 3)) * 0.05
            assert abs(add_s(pe, pg, pts) - add_s_oracle(pe, pg, pts)) < 1e-12


class TestAuc:
    def test_all_zero_errors(self):
        assert auc([0.0, 0.0, 0.0]) == 100.0

    def test_all_over_threshold(self):
        assert auc([0.2, 0.15, 0.11]) == 0.0

    def test_single_error_half_cap(self):
        # Accuracy step curve: 0 below 0.05, 1 above; area = 0.05/0.1.
        np.testing.assert_allclose(auc([0.05]), 50.0, rtol=1e-12)

    def test_matches_trapezoid_integration(self):
        rng = np.random.default_rng(7)
        errors = rng.uniform(0, 0.15, size=200)
        thresholds = np.linspace(0, 0.1, 20001)
        acc = [(errors < t).mean() for t in thresholds]
        numeric = 100.0 * np.trapezoid(acc, thresholds) / 0.1
        assert abs(auc(errors) - numeric) < 0.1

    def test_monotone_in_errors(self):
        rng = np.random.default_rng(8)
        errors = rng.uniform(0, 0.12, size=50)
        base = auc(errors)
        for i in range(0, 50, 7):
            bumped = errors.copy()
            bumped[i] += 0.01
            assert auc(bumped) <= base + 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            auc([])


class TestRecall:
    def test_all_zero(self):
        assert add_recall_01d([0.0, 0.0], 0.1) == 100.0

    def test_threshold_boundary(self):
        np.testing.assert_allclose(add_recall_01d([0.009, 0.011], 0.1), 50.0)

    def test_matches_counting_oracle(self):
        rng = np.random.default_rng(9)
        for _ in range(30):
            errors = rng.uniform(0, 0.05, size=40)
            d = rng.uniform(0.05, 0.4)
            expected = 100.0 * sum(1 for e in errors if e < 0.1 * d) / len(errors)
            assert abs(add_recall_01d(errors, d) - expected) < 1e-12

    def test_bad_diameter(self):
        with pytest.raises(ValueError):
            add_recall_01d([0.1], 0.0)


class TestDiameter:
    def test_unit_cube_corners(self):
        corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
        np.testing.assert_allclose(object_diameter(corners), np.sqrt(3.0), rtol=1e-15)

    def test_two_points(self):
        pts = np.array([[0.0, 0.0, 0.0], [0.0, 0.07, 0.0]])
        assert object_diameter(pts) == 0.07

    def test_matches_brute_force(self):
        rng = np.random.default_rng(10)
        pts = rng.normal(size=(60, 3)) * 0.1
        assert object_diameter(pts) == diameter_oracle(pts)

    def test_single_point_rejected(self):
        with pytest.raises(ValueError):
            object_diameter(np.zeros((1, 3)))


class TestEvalReport:
    def test_summary_fields(self):
        report = EvalReport.from_errors([0.0, 0.05], [0.0, 0.02], diameter=0.2)
        assert 0 <= report.auc_add <= 100
        assert 0 <= report.recall_01d <= 100
        assert report.auc_add_s >= report.auc_add
        assert "AUC ADD" in report.table()
        d = report.to_dict()
        assert d["diameter"] == 0.2
