"""Sketch-and-solve optimizers for the logistic and l1 objectives."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize as opt
import scipy.sparse as sp

from .errors import UndefinedRatioError
from .objectives import ObjectiveSpec, _loss, _project, _sigmoid, f_full, grad_f, weighted_abs_sum

SOLVER_SLACK = 1e-6


@dataclass
class FitResult:
    beta: np.ndarray
    objective: float
    iterations: int
    converged: bool
    restarts_used: int = 1
    grad_norm: float = float("nan")
    history: list[float] = field(default_factory=list)
    telemetry: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 500
    tol: float = 1e-8
    memory: int = 10
    restarts: int = 5
    seed: int = 0
    # l1 only
    l1_method: str = "lp"
    stages: int = 30
    inner_iter: int = 5
    rel_tol: float = 1e-6
    ridge: float = 1e-10


def _as_weights(w, n: int) -> np.ndarray:
    w = np.broadcast_to(np.asarray(w, dtype=np.float64), (n,)).copy() if np.ndim(w) == 0 else np.asarray(w, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"expected {n} weights, got {w.size}")
    if not np.all(w > 0):
        raise ValueError("weights must be strictly positive")
    return w


def _check_rows(rows):
    if sp.issparse(rows):
        rows = rows.tocsr()
        if not np.all(np.isfinite(rows.data)):
            raise ValueError("rows contain non-finite values")
        return rows
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError("rows must be a 2-d array")
    if not np.all(np.isfinite(rows)):
        raise ValueError("rows contain non-finite values")
    return rows


def _hessian(rows, w, beta, lam: float, normalizer: int) -> np.ndarray:
    z = _project(rows, beta)
    sig = _sigmoid(z)
    curv = sig * (1.0 - sig)
    if lam == 0:
        diag = w * curv / normalizer
        extra = None
    else:
        loss = _loss(z)
        mean = np.dot(w, loss) / normalizer
        diag = w * (curv * (1.0 + lam * loss - lam * mean) + lam * sig * sig) / normalizer
        extra = np.asarray(rows.T @ (w * sig / normalizer)).ravel()
    if sp.issparse(rows):
        H = (rows.T @ sp.diags(diag) @ rows).toarray()
    else:
        H = rows.T @ (rows * diag[:, None])
    if extra is not None:
        H -= lam * np.outer(extra, extra)
    return H


def _newton_polish(fun, hess, beta, f, g, tol, history, max_iter: int = 50, stall: int = 3):
    """Newton steps on |eigenvalue|-modified Hessians with Armijo backtracking.

    Flat directions (eigenvalues near zero) are damped rather than inverted,
    so separable or rank-deficient problems cannot produce huge steps.
    """
    stalled = 0
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) <= tol:
            break
        vals, vecs = np.linalg.eigh(hess(beta))
        floor = max(1e-12 * np.max(np.abs(vals)), 1e-300)
        step = -vecs @ ((vecs.T @ g) / np.maximum(np.abs(vals), floor))
        slope = float(g @ step)
        if not slope < 0:
            step, slope = -g, -float(g @ g)
        t = 1.0
        improved = False
        gmax = np.max(np.abs(g))
        for _ in range(40):
            cand = beta + t * step
            fc, gc = fun(cand)
            if not np.isfinite(fc):
                t *= 0.5
                continue
            armijo = fc <= f + 1e-4 * t * slope
            # near the optimum the decrease drops below the resolution of f;
            # accept flat steps that still shrink the gradient
            flat = fc <= f + 1e-12 * max(1.0, abs(f)) and np.max(np.abs(gc)) < gmax
            if armijo or flat:
                improved = fc < f or np.max(np.abs(gc)) < gmax
                beta, f, g = cand, fc, gc
                break
            t *= 0.5
        history.append(f)
        stalled = 0 if improved else stalled + 1
        if stalled >= stall:
            break
    return beta, f, g, it


def _local_fit(rows, w, lam, normalizer, x0, options: SolverOptions):
    """L-BFGS from x0, then trust-region Newton polish until the gradient test passes."""
    history: list[float] = []

    def fun(beta):
        z = _project(rows, beta)
        return f_full(z, w, lam, normalizer), grad_f(z, rows, w, lam, normalizer)

    def record(xk, *_):
        history.append(fun(xk)[0])

    f0, _ = fun(x0)
    history.append(f0)
    res = opt.minimize(
        fun, x0, jac=True, method="L-BFGS-B", callback=record,
        options={"maxcor": options.memory, "maxiter": options.max_iter, "gtol": 0.0, "ftol": 0.0},
    )
    beta = res.x
    iterations = int(res.nit)
    f, g = fun(beta)
    tol = options.tol * max(1.0, abs(f))
    if np.max(np.abs(g)) > tol:
        beta, f, g, extra = _newton_polish(fun, lambda b: _hessian(rows, w, b, lam, normalizer), beta, f, g, tol, history)
        iterations += extra
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    converged = gnorm <= options.tol * max(1.0, abs(f))
    return beta, f, iterations, converged, gnorm, history


def solve_logistic(rows, w=1.0, lam: float = 0.0, options: SolverOptions | None = None, normalizer: int | None = None) -> FitResult:
    """Minimize the weighted (variance-regularized) logistic objective.

    ``normalizer`` defaults to the number of rows; pass the original n when
    ``rows`` is a sketch. For lam > 0 the objective is non-convex and the
    best of ``options.restarts`` starts is returned.
    """
    options = options or SolverOptions()
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    rows = _check_rows(rows)
    n, d = rows.shape
    w = _as_weights(w, n)
    normalizer = n if normalizer is None else normalizer
    ObjectiveSpec.logistic(normalizer, lam)

    beta, f, it, conv, gnorm, hist = _local_fit(rows, w, 0.0, normalizer, np.zeros(d), options)
    best = FitResult(beta, f, it, conv, 1, gnorm, hist)
    if lam == 0:
        return best

    rng = np.random.default_rng(options.seed)
    base = beta
    starts = [np.zeros(d), base]
    while len(starts) < options.restarts:
        u = rng.standard_normal(d)
        u *= rng.random() ** (1.0 / max(d, 1)) / max(np.linalg.norm(u), 1e-300)
        starts.append((base if len(starts) % 2 else np.zeros(d)) + u)
    best = None
    total_iter = it
    for x0 in starts[: options.restarts]:
        b, f, it, conv, gnorm, hist = _local_fit(rows, w, lam, normalizer, x0, options)
        total_iter += it
        if best is None or f < best.objective:
            best = FitResult(b, f, it, conv, options.restarts, gnorm, hist)
    best.telemetry["total_iterations"] = total_iter
    return best


L1_METHODS = ("lp", "irls")


def solve_l1(rows, w=1.0, options: SolverOptions | None = None) -> FitResult:
    """Weighted least absolute deviations on augmented rows [X, -Y].

    Minimizes sum_i w_i |rows_i . (beta, 1)| over beta. The default method
    solves the dual linear program (n bounded variables, d equalities) with
    HiGHS and reads beta off the equality marginals; ``l1_method="irls"``
    uses smoothed reweighted least squares plus a vertex polish instead, and
    is also the fallback when the LP solver reports a failure. The returned
    ``beta`` includes the trailing 1.
    """
    options = options or SolverOptions()
    if options.l1_method not in L1_METHODS:
        raise ValueError(f"l1_method must be one of {L1_METHODS}, got {options.l1_method!r}")
    rows = _check_rows(rows)
    if sp.issparse(rows):
        rows = rows.toarray()
    n, d1 = rows.shape
    if d1 < 1:
        raise ValueError("augmented rows need at least one column")
    w = _as_weights(w, n)
    A = rows[:, :-1]
    y = -rows[:, -1]
    d = d1 - 1

    def value(beta):
        return float(np.dot(w, np.abs(A @ beta - y)))

    if d == 0:
        f = value(np.zeros(0))
        return FitResult(np.ones(1), f, 0, True, 1, history=[f], telemetry={"method": "none"})
    if options.l1_method == "lp":
        fit = _l1_lp(A, y, w, value)
        if fit is not None:
            return fit
    return _l1_irls(A, y, w, value, options)


def _l1_lp(A, y, w, value):
    # max y.u  s.t.  A^T u = 0, -w <= u <= w; strong duality gives the primal value
    res = opt.linprog(
        -y, A_eq=A.T, b_eq=np.zeros(A.shape[1]), bounds=np.column_stack([-w, w]), method="highs",
    )
    if res.status != 0:
        return None
    beta = -np.asarray(res.eqlin.marginals, dtype=np.float64)
    f = value(beta)
    dual = -float(res.fun)
    return FitResult(
        np.append(beta, 1.0), f, int(res.nit), True, 1, history=[f],
        telemetry={"method": "lp", "dual_value": dual, "gap": f - dual},
    )


def _l1_irls(A, y, w, value, options: SolverOptions) -> FitResult:
    n, d = A.shape
    ridge_hits = 0

    def weighted_ls(c):
        nonlocal ridge_hits
        G = A.T @ (A * c[:, None])
        rhs = A.T @ (c * y)
        scale = max(float(np.trace(G)) / max(d, 1), 1e-300)
        try:
            sol = np.linalg.solve(G, rhs)
            if np.all(np.isfinite(sol)) and np.linalg.cond(G) < 1e14:
                return sol
        except np.linalg.LinAlgError:
            pass
        ridge_hits += 1
        return np.linalg.solve(G + options.ridge * scale * np.eye(d), rhs)

    beta = weighted_ls(w.copy())
    best_beta, best_f = beta, value(beta)
    history = [best_f]
    smooth = float(np.mean(np.abs(A @ beta - y)))
    iterations = 0
    if smooth > 0:
        for _ in range(options.stages):
            for _ in range(options.inner_iter):
                r = A @ beta - y
                beta = weighted_ls(w / np.sqrt(r * r + smooth * smooth))
                iterations += 1
                f = value(beta)
                if f < best_f:
                    best_beta, best_f = beta, f
            history.append(best_f)
            smooth *= 0.5

    beta, f = _vertex_polish(A, y, w, best_beta, best_f, value)
    if f <= best_f:
        best_beta, best_f = beta, f
        history.append(best_f)
    converged = len(history) < 2 or abs(history[-2] - history[-1]) <= options.rel_tol * max(abs(best_f), 1e-300) or best_f == 0
    return FitResult(np.append(best_beta, 1.0), best_f, iterations, bool(converged), 1, history=history,
                     telemetry={"method": "irls", "ridge_hits": ridge_hits, "ridge": options.ridge})


def _vertex_polish(A, y, w, beta, f, value, rounds: int = 5):
    """Move to the basic solution interpolating the d rows with smallest residuals.

    Ties go to the vertex, so exact optima are returned exactly.
    """
    d = A.shape[1]
    for _ in range(rounds):
        chosen = _independent_rows(A, np.argsort(np.abs(A @ beta - y), kind="stable"))
        if len(chosen) < d:
            break
        cand = np.linalg.solve(A[chosen], y[chosen])
        fc = value(cand)
        if fc > f:
            break
        done = fc == f
        beta, f = cand, fc
        if done:
            break
    return beta, f


def _independent_rows(A: np.ndarray, order, rtol: float = 1e-10) -> list[int]:
    """Greedily pick up to d linearly independent rows in the given order."""
    d = A.shape[1]
    basis = np.zeros((d, d))
    chosen: list[int] = []
    for i in order:
        v = A[i]
        norm = np.linalg.norm(v)
        if norm == 0:
            continue
        k = len(chosen)
        r = v - basis[:k].T @ (basis[:k] @ v)
        r = r - basis[:k].T @ (basis[:k] @ r)
        rn = np.linalg.norm(r)
        if rn > rtol * norm:
            basis[k] = r / rn
            chosen.append(int(i))
            if len(chosen) == d:
                break
    return chosen


def approx_ratio(spec: ObjectiveSpec, rows, w, beta, optimum) -> float:
    """f(X beta) / f(X beta*), both on the full data.

    ``optimum`` is either the optimal value or the FitResult of the full-data
    solve.
    """
    f_star = optimum.objective if isinstance(optimum, FitResult) else float(optimum)
    if not f_star > 0:
        raise UndefinedRatioError(f"optimal objective is {f_star}; ratio undefined")
    return spec.value(rows, w, beta) / f_star


def abs_objective(rows, w, beta) -> float:
    return weighted_abs_sum(rows, w, beta)
