"""Reference methods: dense Cauchy sketch, uniform sampling and one-pass SGD."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .objectives import ObjectiveSpec, _project, _sigmoid
from .solvers import FitResult

BASELINE_KINDS = ("cauchy", "uniform", "sgd")


@dataclass(frozen=True)
class SGDParams:
    eta0: float = 0.1
    batch_size: int = 32


@dataclass(frozen=True)
class BaselineConfig:
    kind: str
    rows_or_sample: int = 1
    seed: int = 0
    sgd: SGDParams = SGDParams()

    def __post_init__(self):
        if self.kind not in BASELINE_KINDS:
            raise ValueError(f"kind must be one of {BASELINE_KINDS}, got {self.kind!r}")
        if self.rows_or_sample < 1:
            raise ValueError("rows_or_sample must be >= 1")


def cauchy_sketch(X_aug, r: int, seed: int = 0, chunk_cols: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Dense Cauchy sketch C @ X_aug with unit weights; costs O(r n d)."""
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    n, d = X_aug.shape
    out = np.zeros((r, d))
    rng = np.random.default_rng(seed)
    for start in range(0, n, chunk_cols):
        stop = min(n, start + chunk_cols)
        C = np.tan(np.pi * (rng.random((r, stop - start)) - 0.5))
        block = X_aug[start:stop]
        out += np.asarray(block.T @ C.T).T if sp.issparse(block) else C @ block
    return out, np.ones(r)


def uniform_sample(X, m: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """m rows drawn without replacement, each weighted n/m.

    Returns (rows, weights, indices).
    """
    n = X.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"sample size must be in [1, {n}], got {m}")
    idx = np.random.default_rng(seed).choice(n, size=m, replace=False)
    return X[idx], np.full(m, n / m), idx


def sgd_one_pass(rows, params: SGDParams | None = None, seed: int = 0, lam: float = 0.0) -> FitResult:
    """One epoch of minibatch SGD on the folded logistic loss.

    Step t (1-based) uses eta0/sqrt(t); the iterate starts at 0. The reported
    objective is the full-data value at the final iterate.
    """
    params = params or SGDParams()
    n, d = rows.shape
    order = np.random.default_rng(seed).permutation(n)
    beta = np.zeros(d)
    t = 0
    for start in range(0, n, params.batch_size):
        t += 1
        batch = rows[order[start:start + params.batch_size]]
        z = _project(batch, beta)
        g = np.asarray(batch.T @ _sigmoid(z)).ravel() / z.size
        beta = beta - params.eta0 / math.sqrt(t) * g
    spec = ObjectiveSpec.logistic(n, lam)
    return FitResult(beta, spec.value(rows, 1.0, beta), t, True, 1, telemetry={"steps": t})
