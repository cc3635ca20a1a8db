"""Logistic, variance-regularized logistic and l1 objectives.

All functions take the projected vector ``z = X @ beta`` (or the rows and
``beta``) together with per-row weights and the normalizer ``n``. For a
sketch, ``n`` is the row count of the ORIGINAL data, so sketch-space and
full-data values are directly comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

KINDS = ("logistic", "logistic_var_reg", "l1")

# exp(-745) underflows to 0 in double precision
_SATURATE = 745.0


def logit_loss(r):
    """ln(1 + e^r) without overflow; scalar in, scalar out."""
    arr = np.asarray(r, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("logit_loss requires finite input")
    out = _loss(arr)
    return float(out) if out.ndim == 0 else out


def _loss(r: np.ndarray) -> np.ndarray:
    a = np.abs(r)
    small = np.where(a > _SATURATE, 0.0, np.log1p(np.exp(-np.minimum(a, _SATURATE))))
    return np.maximum(r, 0.0) + small


def _sigmoid(r: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(r))
    return np.where(r >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: str = "logistic"
    lam: float = 0.0
    normalizer: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.kind != "logistic_var_reg" and self.lam != 0:
            raise ValueError(f"lambda is only meaningful for logistic_var_reg")
        if self.normalizer <= 0:
            raise ValueError("normalizer must be positive")

    @classmethod
    def logistic(cls, normalizer: int, lam: float = 0.0) -> "ObjectiveSpec":
        return cls("logistic_var_reg" if lam > 0 else "logistic", lam, normalizer)

    def value(self, rows, w, beta) -> float:
        if self.kind == "l1":
            return l1_objective(rows, w, beta)
        return f_full(_project(rows, beta), w, self.lam, self.normalizer)

    def gradient(self, rows, w, beta) -> np.ndarray:
        if self.kind == "l1":
            raise ValueError("the l1 objective is not differentiable")
        return grad_f(_project(rows, beta), rows, w, self.lam, self.normalizer)


def _project(rows, beta) -> np.ndarray:
    z = rows @ np.asarray(beta, dtype=np.float64)
    return np.asarray(z).ravel()


def _check(z, w):
    z = np.asarray(z, dtype=np.float64).ravel()
    w = np.broadcast_to(np.asarray(w, dtype=np.float64), z.shape) if np.ndim(w) == 0 else np.asarray(w, dtype=np.float64)
    if w.shape != z.shape:
        raise ValueError(f"length mismatch: z has {z.size} entries, w has {w.size}")
    return z, w


def f1(z, w, normalizer: int) -> float:
    """(1/n) * sum_i w_i * l(z_i)."""
    z, w = _check(z, w)
    return float(np.dot(w, _loss(z)) / normalizer)


def objective_parts(z, w, lam: float, normalizer: int) -> tuple[float, float, float]:
    """The mean-loss, squared-loss and squared-mean parts (f1, f2, f3)."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    z, w = _check(z, w)
    loss = _loss(z)
    mean = float(np.dot(w, loss) / normalizer)
    second = float(lam / (2 * normalizer) * np.dot(w, loss * loss))
    return mean, second, lam / 2 * mean * mean


def f_full(z, w, lam: float, normalizer: int) -> float:
    a, b, c = objective_parts(z, w, lam, normalizer)
    return a + b - c


def small_part_g(t: float) -> tuple[float, float]:
    """Bounded pieces left after splitting off |t| from the loss.

    Returns ``l(-|t|)`` and ``2 l(-|t|) |t| + l(-|t|)**2``.
    """
    a = np.abs(np.asarray(t, dtype=np.float64))
    g1 = _loss(-a)
    g2 = 2 * g1 * a + g1 * g1
    if g1.ndim == 0:
        return float(g1), float(g2)
    return g1, g2


def grad_f(z, rows, w, lam: float, normalizer: int) -> np.ndarray:
    """Gradient of f_full(X beta) with respect to beta, given z = X beta."""
    z, w = _check(z, w)
    if rows.shape[0] != z.size:
        raise ValueError(f"rows has {rows.shape[0]} rows but z has {z.size} entries")
    sig = _sigmoid(z)
    if lam == 0:
        coef = w * sig / normalizer
    else:
        loss = _loss(z)
        mean = np.dot(w, loss) / normalizer
        coef = w * sig * (1.0 + lam * loss - lam * mean) / normalizer
    g = rows.T @ coef
    return np.asarray(g).ravel()


def l1_objective(rows, w, beta_aug) -> float:
    """sum_i w_i |row_i . (beta, 1)| for rows augmented with -Y."""
    beta_aug = np.asarray(beta_aug, dtype=np.float64)
    if beta_aug[-1] != 1.0:
        raise ValueError(f"last coordinate of the augmented vector must be 1, got {beta_aug[-1]}")
    return weighted_abs_sum(rows, w, beta_aug)


def weighted_abs_sum(rows, w, v) -> float:
    r = np.abs(_project(rows, v))
    w = np.broadcast_to(np.asarray(w, dtype=np.float64), r.shape) if np.ndim(w) == 0 else np.asarray(w)
    if w.shape != r.shape:
        raise ValueError(f"length mismatch: {r.size} rows, {w.size} weights")
    return float(np.dot(w, r))


def positive_part(z, w=1.0) -> float:
    """sum of w_i * max(z_i, 0)."""
    z, w = _check(z, w)
    return float(np.dot(w, np.maximum(z, 0.0)))


def split_first(z) -> tuple[float, float]:
    """Large and small parts of n*f1: (sum_{z>0} |z|, sum l(-|z|))."""
    z = np.asarray(z, dtype=np.float64)
    return float(z[z > 0].sum()), float(_loss(-np.abs(z)).sum())


def split_second(z) -> tuple[float, float, float]:
    """Parts of sum l(z)^2: the squared positives plus the two small sums."""
    z = np.asarray(z, dtype=np.float64)
    a = np.abs(z)
    g = _loss(-a)
    pos = z > 0
    return float((z[pos] ** 2).sum()), float(2 * (g[pos] * a[pos]).sum()), float((g * g).sum())


def is_sparse(rows) -> bool:
    return sp.issparse(rows)


LN2 = math.log(2.0)
