"""Evaluation measures for fitted skeletons and bodies."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import MetricError

MM = 1000.0


def _pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 3:
        raise MetricError(f"point sets differ in shape: {a.shape} vs {b.shape}")
    return a, b


def reconstruction_error(fitted, gt):
    """Mean per-vertex distance in mm, no alignment."""
    a, b = _pair(fitted, gt)
    return float(np.linalg.norm(a - b, axis=1).mean() * MM)


def d_mean(fitted, gt):
    """Mean Euclidean distance over corresponding landmarks, in model units."""
    a, b = _pair(fitted, gt)
    return float(np.linalg.norm(a - b, axis=1).mean())


def mpjpe(fitted, gt, root=0):
    """Mean per-joint error in mm after translating ``gt`` so its root joint lands on ``fitted``'s."""
    a, b = _pair(fitted, gt)
    return float(np.linalg.norm((a - a[root]) - (b - b[root]), axis=1).mean() * MM)


def pve(fitted, gt):
    """Mean per-vertex error of the body surface in mm, no alignment."""
    return reconstruction_error(fitted, gt)


@dataclass
class EvalResult:
    reconstruction_error: float = 0.0
    d_mean: float = 0.0
    mpjpe: float = 0.0
    pve: float = 0.0
    wall_time: dict = field(default_factory=dict)

    def __post_init__(self):
        for k in ("reconstruction_error", "d_mean", "mpjpe", "pve"):
            if getattr(self, k) < 0:
                raise MetricError(f"{k} must be non-negative")

    def to_dict(self):
        return asdict(self)
