"""Diagnostics: weight classes, interval endpoints and seed-averaged
contraction/dilation of the sketch's positive-part estimate."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .objectives import _project
from .sketch import SketchConfig, sketching_matrix


def default_q_max(n: int, mu: float, eps: float) -> int:
    return math.ceil(math.log2(n * (mu + 1) / eps))


@dataclass
class WeightClass:
    indices: np.ndarray
    mass: float
    important: bool = False


@dataclass
class WeightClassDecomposition:
    q_max: int
    classes: dict[int, WeightClass]
    residual_mass: float
    positive_mass: float
    negative_mass: float
    threshold: float | None = None

    def class_masses(self) -> dict[int, float]:
        return {q: c.mass for q, c in self.classes.items()}


def _classes_of(v: np.ndarray) -> np.ndarray:
    m, e = np.frexp(v)
    # v = m 2^e, m in [0.5, 1): v in [2^(e-1), 2^e); an exact power 2^(e-1)
    # belongs to class -(e-1), everything else to class -e
    return np.where(m == 0.5, -(e - 1), -e)


def weight_class(v: float) -> int:
    """The q with v in (2^(-q-1), 2^(-q)]."""
    return int(_classes_of(np.array([v]))[0])


def decompose(z, q_max: int, eps: float | None = None, mu: float | None = None) -> WeightClassDecomposition:
    """Split the normalized positive coordinates of z into weight classes.

    z is scaled to unit l1 norm. Positive coordinates in (2^(-q-1), 2^(-q)]
    with q <= q_max form class q; smaller ones go to the residual. With eps
    and mu given, a class is flagged important when its mass is at least
    eps / (mu * q_max).
    """
    z = np.asarray(z, dtype=np.float64).ravel()
    total = np.abs(z).sum()
    if total == 0:
        raise ValueError("z must be nonzero")
    v = z / total
    pos = np.flatnonzero(v > 0)
    q = _classes_of(v[pos])
    threshold = None if eps is None or mu is None else eps / (mu * q_max)
    classes: dict[int, WeightClass] = {}
    keep = q <= q_max
    for cls in np.unique(q[keep]):
        idx = pos[q == cls]
        mass = float(v[idx].sum())
        classes[int(cls)] = WeightClass(idx, mass, threshold is not None and mass >= threshold)
    residual = float(v[pos[~keep]].sum())
    return WeightClassDecomposition(
        q_max, classes, residual, float(v[pos].sum()), float(-v[v < 0].sum()), threshold
    )


@dataclass
class IntervalEndpoints:
    q1: float
    q2: float
    q3: float
    q4: float
    inputs: dict = field(default_factory=dict)


def endpoints(M: float, N: float, eps: float, delta: float, m1: float, q_m: float, h_m: float, mu_z: float, n: float) -> IntervalEndpoints:
    """log2 endpoints of the weight-class range a level with M sampled rows
    and N buckets can see (q1, q4) and approximate well (q2, q3).

    When every sampled row has its own bucket (N >= M) q3 = q4 = inf; when
    the level keeps every row (M = n) q1 = q2 = 0.
    """
    vals = dict(M=M, N=N, eps=eps, delta=delta, m1=m1, q_m=q_m, h_m=h_m, mu_z=mu_z, n=n)
    for k, v in vals.items():
        if not v > 0:
            raise ValueError(f"{k} must be positive, got {v}")
    p = M / n
    if p > 1:
        raise ValueError(f"M/n must be in (0, 1], got {p}")
    q1 = math.log2(mu_z * delta / (p * h_m))
    q2 = math.log2(8 * q_m * mu_z * m1 / (eps**3 * p))
    q3 = math.log2(N * eps**2 / (4 * p))
    q4 = math.log2(2 * N * math.log(N * h_m / delta) / (p * eps**2))
    if M == n:
        q1 = q2 = 0.0
    if N >= M:
        q3 = q4 = math.inf
    return IntervalEndpoints(q1, q2, q3, q4, vals)


def mu_z(z) -> float:
    """Negative-to-positive mass ratio of z."""
    z = np.asarray(z, dtype=np.float64)
    pos = z[z > 0].sum()
    if pos == 0:
        return math.inf
    return float(-z[z < 0].sum() / pos)


STATISTICS = ("min", "p10", "median", "mean", "max")


@dataclass
class ProbeReport:
    seeds: list[int]
    true_positive: np.ndarray  # per beta
    estimates: np.ndarray  # seeds x betas
    band: tuple[float, float] = (0.5, 3.0)

    def relative(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.estimates / self.true_positive[None, :]

    def stats(self) -> dict[str, np.ndarray]:
        rel = self.relative()
        return {
            "min": rel.min(axis=0),
            "p10": np.percentile(rel, 10, axis=0),
            "median": np.median(rel, axis=0),
            "mean": rel.mean(axis=0),
            "max": rel.max(axis=0),
        }

    def within_band(self) -> np.ndarray:
        mean = self.stats()["mean"]
        return (mean >= self.band[0]) & (mean <= self.band[1])

    def to_csv(self, path) -> None:
        st = self.stats()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["beta_index", "statistic", "value", "true_positive_mass", "num_seeds"])
            for j in range(self.true_positive.size):
                for name in STATISTICS:
                    w.writerow([j, name, repr(float(st[name][j])), repr(float(self.true_positive[j])), len(self.seeds)])


def positive_estimate(S, weights, X, beta) -> float:
    """sum_j w_j (S X beta)_j^+ for a sketching matrix S."""
    sz = np.asarray(S @ _project(X, beta)).ravel()
    return float(np.dot(weights, np.maximum(sz, 0.0)))


def measure_contraction_dilation(X, config: SketchConfig, betas, num_seeds: int = 100, seeds=None, band=(0.5, 3.0)) -> ProbeReport:
    """Per-seed sketch estimates of ||(X beta)^+||_1 for each beta.

    Seed k uses ``config`` with its seed replaced by ``seeds[k]`` (default
    0..num_seeds-1).
    """
    if num_seeds < 1:
        raise ValueError("num_seeds must be >= 1")
    seeds = sorted(range(num_seeds) if seeds is None else seeds)
    betas = np.atleast_2d(np.asarray(betas, dtype=np.float64))
    Z = np.column_stack([_project(X, b) for b in betas])
    truth = np.maximum(Z, 0).sum(axis=0)
    est = np.empty((len(seeds), betas.shape[0]))
    for k, seed in enumerate(seeds):
        cfg = config.replace(seed=seed)
        S = sketching_matrix(cfg)
        SZ = np.asarray((S @ Z))
        est[k] = cfg.weights() @ np.maximum(SZ, 0.0)
    return ProbeReport(list(seeds), truth, est, tuple(band))
