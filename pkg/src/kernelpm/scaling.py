"""Power-law fits ``y ≈ A · N_S^(−α)`` by least squares in log-log space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ScalingFit:
    alpha: float
    A: float
    r_squared: float
    points: tuple[tuple[float, float], ...]

    def predict(self, n) -> np.ndarray:
        return self.A * np.asarray(n, dtype=np.float64) ** (-self.alpha)


def fit_scaling(points) -> ScalingFit:
    pts = [(float(n), float(v)) for n, v in points]
    if len(pts) < 3:
        raise ValueError(f"a scaling fit needs at least 3 points, got {len(pts)}")
    n, v = np.array(pts).T
    if np.any(n <= 0) or np.any(v <= 0):
        raise ValueError("scaling fits need positive sample sizes and values")
    x, y = np.log(n), np.log(v)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return ScalingFit(float(-slope) + 0.0, float(np.exp(intercept)), r2, tuple(pts))
