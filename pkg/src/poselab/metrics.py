"""Pose-accuracy metrics: ADD, ADD-S, threshold-curve AUC, recall, diameter.

All distances are meters; AUC and recall are percentages. These are pure
functions over numpy arrays and a small report container for the CLI.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .geometry import Pose


def add(pose_est: Pose, pose_gt: Pose, points: np.ndarray) -> float:
    """Mean distance between correspondingly transformed model points."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3 or len(points) == 0:
        raise ValueError("model points must be a nonempty [N,3] array")
    return float(np.linalg.norm(pose_est.apply(points) - pose_gt.apply(points), axis=1).mean())


def add_s(pose_est: Pose, pose_gt: Pose, points: np.ndarray, chunk: int = 1024) -> float:
    """Symmetric variant: nearest-neighbor distance from each ground-truth
    transformed point to the estimated transformed set, averaged."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3 or len(points) == 0:
        raise ValueError("model points must be a nonempty [N,3] array")
    pe = pose_est.apply(points)
    pg = pose_gt.apply(points)
    total = 0.0
    for start in range(0, len(pg), chunk):
        block = pg[start:start + chunk]
        d2 = ((block[:, None, :] - pe[None, :, :]) ** 2).sum(axis=2)
        total += np.sqrt(d2.min(axis=1)).sum()
    return float(total / len(pg))


def auc(errors, max_threshold: float = 0.1) -> float:
    """Exact area under the accuracy-vs-threshold step curve, in percent.

    Each error below the cap contributes a rectangle of width
    (max_threshold - error) to the integral of the empirical accuracy
    curve; no threshold grid is involved.
    """
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise ValueError("need at least one error value")
    if max_threshold <= 0:
        raise ValueError("max_threshold must be positive")
    e = np.sort(errors)
    area = np.clip(max_threshold - e, 0.0, None).sum() / (len(e) * max_threshold)
    return float(100.0 * area)


def add_recall_01d(errors, diameter: float) -> float:
    """Percentage of errors below one tenth of the object diameter."""
    if diameter <= 0:
        raise ValueError("diameter must be positive")
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        return 0.0
    return float(100.0 * np.mean(errors < 0.1 * diameter))


def object_diameter(points: np.ndarray, chunk: int = 1024) -> float:
    """Maximum pairwise distance; exact quadratic search."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3 or len(points) < 2:
        raise ValueError("need at least two [N,3] points")
    best = 0.0
    for start in range(0, len(points), chunk):
        block = points[start:start + chunk]
        d2 = ((block[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


@dataclass
class EvalReport:
    """Per-frame errors plus the summary numbers printed and serialized."""

    add_errors: list
    add_s_errors: list
    diameter: float
    auc_add: float
    auc_add_s: float
    recall_01d: float

    @staticmethod
    def from_errors(add_errors, add_s_errors, diameter: float,
                    max_threshold: float = 0.1) -> "EvalReport":
        return EvalReport(
            add_errors=[float(e) for e in add_errors],
            add_s_errors=[float(e) for e in add_s_errors],
            diameter=float(diameter),
            auc_add=auc(add_errors, max_threshold),
            auc_add_s=auc(add_s_errors, max_threshold),
            recall_01d=add_recall_01d(add_errors, diameter),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        lines = [f"{'metric':<14}{'value':>10}",
                 f"{'AUC ADD':<14}{self.auc_add:>10.2f}",
                 f"{'AUC ADD-S':<14}{self.auc_add_s:>10.2f}",
                 f"{'ADD-0.1d':<14}{self.recall_01d:>10.2f}",
                 f"{'diameter_m':<14}{self.diameter:>10.4f}",
                 f"{'frames':<14}{len(self.add_errors):>10d}"]
        return "\n".join(lines)
