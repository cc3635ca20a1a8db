"""Lower-bound estimates of the mu-complexity of a dataset.

For a direction beta and p in {1, 2} the ratio is
sum_{z_i > 0} |z_i|^p / sum_{z_i < 0} |z_i|^p with z = X beta; mu_p is its
supremum over beta != 0. The supremum is not computable in general, so
``estimate_mu`` reports the best ratio over the directions it tried.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .objectives import _project


@dataclass
class MuEstimate:
    mu1_lb: float
    mu2_lb: float
    directions_tried: int
    best_direction: np.ndarray
    witnesses: dict = field(default_factory=dict)

    @property
    def mu(self) -> float:
        return max(self.mu1_lb, self.mu2_lb)


def _ratio(z: np.ndarray, p: int) -> float:
    pos = z[z > 0]
    neg = z[z < 0]
    if p == 1:
        num, den = pos.sum(), -neg.sum()
    else:
        num, den = np.dot(pos, pos), np.dot(neg, neg)
    if den == 0:
        return math.nan if num == 0 else math.inf
    return float(num / den)


def mu_ratio(X, beta, p: int = 1) -> float:
    """Positive-to-negative mass ratio of X beta.

    Returns inf when no coordinate is negative (X is separable along beta)
    and nan when X beta is identically zero.
    """
    if p not in (1, 2):
        raise ValueError(f"p must be 1 or 2, got {p}")
    beta = np.asarray(beta, dtype=np.float64)
    if not np.any(beta):
        raise ValueError("beta must be nonzero")
    return _ratio(_project(X, beta), p)


def _both_signs(X, beta, p: int) -> tuple[float, np.ndarray]:
    z = _project(X, beta)
    up, down = _ratio(z, p), _ratio(-z, p)
    if np.isnan(up):
        return up, beta
    return (up, beta) if up >= down else (down, -beta)


def _refine(X, beta, p: int, steps: int, r0: float):
    """Coordinate-wise local search; never returns a worse direction."""
    best, best_val = beta.copy(), r0
    scale = 0.5
    d = beta.size
    for _ in range(steps):
        moved = False
        for j in range(d):
            for sign in (1.0, -1.0):
                cand = best.copy()
                cand[j] += sign * scale * max(np.linalg.norm(best), 1.0)
                if not np.any(cand):
                    continue
                val, oriented = _both_signs(X, cand, p)
                if val > best_val:
                    best, best_val, moved = oriented, val, True
        if not moved:
            scale *= 0.5
    return best, best_val


def estimate_mu(X, num_directions: int = 64, seed: int = 0, refine_steps: int = 0) -> MuEstimate:
    """Sup of the ratio over +-e_j and ``num_directions`` random directions.

    Directions come from one seeded stream, so a larger ``num_directions``
    tries a superset of directions and never lowers the estimate. Each
    direction is refined independently. For d = 1 the result is exact.
    """
    if num_directions < 1:
        raise ValueError("num_directions must be >= 1")
    d = X.shape[1]
    rng = np.random.default_rng(seed)
    random_dirs = rng.standard_normal((num_directions, d)) if d > 1 else np.zeros((0, 1))
    dirs = np.vstack([np.eye(d), random_dirs])
    witnesses = {}
    for p in (1, 2):
        best_val, best_dir = -math.inf, dirs[0]
        for v in dirs:
            val, oriented = _both_signs(X, v, p)
            if np.isnan(val):
                continue
            if refine_steps and math.isfinite(val):
                oriented, val = _refine(X, oriented, p, refine_steps, val)
            if val > best_val:
                best_val, best_dir = val, oriented
            if math.isinf(best_val):
                break
        witnesses[p] = (best_val, best_dir)
    mu1, dir1 = witnesses[1]
    mu2, dir2 = witnesses[2]
    best = dir1 if mu1 >= mu2 else dir2
    return MuEstimate(mu1, mu2, len(dirs), best, witnesses)


def lower_bound_mu(n: int, mu: float) -> tuple[float, float]:
    """Closed-form mu_1 (attained at beta = -1) and mu_2 (at beta = +1) of the
    1-d lower-bound instance."""
    k = n / mu
    return n * (1 - 1 / mu) / (math.sqrt(n) + k), (n + k) / (n * (1 - 1 / mu))
