"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The experiment criteria (8 to 12) run at full size and dominate the runtime
(several minutes on one core).
"""

import itertools
import math
import time

import numpy as np
import pytest

from obsketch import cli, harness
from obsketch.complexity import estimate_mu, mu_ratio
from obsketch.data_io import gen_lower_bound
from obsketch.objectives import ObjectiveSpec, _loss, f_full, grad_f, objective_parts, small_part_g, split_first, split_second
from obsketch.probes import endpoints, measure_contraction_dilation
from obsketch.sketch import SketchConfig, merge, plan_theory, sketch_matrix
from obsketch.solvers import approx_ratio, solve_l1, solve_logistic

SIZES = [1400, 2800, 5600]
SKETCH = {"h_m": 3, "b": 8, "level0_share": 0.5}


@pytest.fixture
def report(capsys):
    def _report(num: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\ncriterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return _report


def medians(records, lam=0.0):
    out = {}
    for s in harness.summarize(records):
        if s.lam == lam:
            out[(s.method, s.size)] = s
    return out


@pytest.fixture(scope="module")
def logistic_run():
    spec = harness.parse_spec({
        "dataset": {"kind": "synthetic", "n_half": 20000, "d": 100},
        "objective": {"kind": "logistic", "lambdas": [0.0]},
        "sizes": SIZES,
        "repetitions": 40,
        "sgd_repetitions": 21,
        "seed": 0,
        "sketch": SKETCH,
        "methods": [
            "old",
            {"name": "s2", "type": "sketch", "s": 2},
            {"name": "s5", "type": "sketch", "s": 5},
            {"name": "s10", "type": "sketch", "s": 10},
            {"name": "sgd", "type": "sgd"},
        ],
    })
    return harness.run_experiment(spec)


# --- 1 -------------------------------------------------------------------

def test_c01_linearity(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    configs = []
    for k in range(10):
        s = int(rng.integers(1, 5))
        configs.append(SketchConfig(
            n=500, d=8, h_m=int(rng.integers(1, 5)), N=int(rng.integers(5, 40)), N0=s * int(rng.integers(5, 30)), s=s,
            b=float(rng.choice([2.0, 4.0, 8.0])), N_u=int(rng.integers(0, 20)), p_u=float(rng.choice([0.5, 0.25, 1 / 64])),
            seed=int(rng.integers(0, 2**63)),
        ))
    bad = 0
    for c in configs:
        for _ in range(200):
            X1 = rng.integers(-1000, 1001, (500, 8)).astype(float)
            X2 = rng.integers(-1000, 1001, (500, 8)).astype(float)
            if merge(sketch_matrix(c, X1), sketch_matrix(c, X2)) != sketch_matrix(c, X1 + X2):
                bad += 1
    elapsed = time.perf_counter() - t0
    report(1, bad == 0 and elapsed < 30, f"{bad} mismatches over 2000 pairs, {elapsed:.1f}s (limit 30s)")


# --- 2 -------------------------------------------------------------------

def test_c02_loss_identities(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    r = rng.uniform(-700, 700, 100_000)
    lhs, rhs = _loss(r), _loss(-r) + r
    refl = float(np.max(np.abs(lhs - rhs) / np.maximum(1.0, np.abs(lhs))))
    worst1 = worst2 = 0.0
    for _ in range(1000):
        z = rng.standard_normal(int(rng.integers(1, 200))) * rng.choice([0.1, 1.0, 10.0, 100.0])
        n = z.size
        big, small = split_first(z)
        val = n * f_full(z, 1.0, 0.0, n)
        worst1 = max(worst1, abs(val - (big + small)) / abs(val))
        lam = 0.5
        _, f2, _ = objective_parts(z, 1.0, lam, n)
        a, b, c = split_second(z)
        val2 = n * (2 / lam) * f2
        worst2 = max(worst2, abs(val2 - (a + b + c)) / abs(val2))
    t = rng.uniform(-1, 1, 1_000_000) * 10.0 ** rng.uniform(-6, 3, 1_000_000)
    g1, g2 = small_part_g(t)
    elapsed = time.perf_counter() - t0
    ok = refl <= 1e-12 and worst1 <= 1e-10 and worst2 <= 1e-10 and g1.max() < 1 and g2.max() <= 3 and elapsed < 10
    report(2, ok, f"reflection {refl:.1e}, split1 {worst1:.1e}, split2 {worst2:.1e}, max g1 {g1.max():.4f}, max g2 {g2.max():.4f}, {elapsed:.1f}s")


# --- 3 -------------------------------------------------------------------

def test_c03_value_at_zero(report):
    X = np.random.default_rng(3).standard_normal((100, 4))
    errs = [abs(ObjectiveSpec.logistic(100, lam).value(X, 1.0, np.zeros(4)) - math.log(2)) for lam in (0, 0.1, 0.5, 1)]
    report(3, max(errs) <= 1e-12, f"max |f(0) - ln 2| = {max(errs):.1e}")


# --- 4 -------------------------------------------------------------------

def test_c04_gradient_check(report):
    rng = np.random.default_rng(4)
    worst = 0.0
    h = 1e-5
    for lam in (0.0, 0.1, 1.0):
        for _ in range(50):
            X = rng.standard_normal((20, 5))
            beta = rng.standard_normal(5)
            g = grad_f(X @ beta, X, 1.0, lam, 20)
            fd = np.array([
                (f_full(X @ (beta + h * e), 1.0, lam, 20) - f_full(X @ (beta - h * e), 1.0, lam, 20)) / (2 * h)
                for e in np.eye(5)
            ])
            worst = max(worst, float(np.max(np.abs(g - fd)) / max(np.max(np.abs(g)), 1e-12)))
    report(4, worst <= 1e-6, f"max relative error {worst:.1e} over 150 instances")


# --- 5 -------------------------------------------------------------------

def vertex_oracle(A, y):
    n, d = A.shape
    best = math.inf
    for idx in itertools.combinations(range(n), d):
        sub = A[list(idx)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        b = np.linalg.solve(sub, y[list(idx)])
        best = min(best, float(np.abs(A @ b - y).sum()))
    return best


def test_c05_l1_oracle(report):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        n, d = int(rng.integers(4, 13)), int(rng.integers(1, 4))
        A = rng.standard_normal((n, d))
        y = rng.standard_normal(n) * 2
        fit = solve_l1(np.hstack([A, -y[:, None]]))
        ref = vertex_oracle(A, y)
        worst = max(worst, abs(fit.objective - ref) / ref)
    exact = True
    for _ in range(50):
        y = rng.integers(-50, 51, 2 * int(rng.integers(0, 10)) + 1).astype(float)
        fit = solve_l1(np.column_stack([np.ones(y.size), -y]))
        exact &= fit.beta[0] == np.median(y)
    report(5, worst <= 1e-4 and exact, f"max relative gap {worst:.1e} over 100 instances; scalar medians exact: {exact}")


# --- 6 -------------------------------------------------------------------

def test_c06_endpoint_identities(report):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(100):
        eps, delta = rng.uniform(0.01, 0.25), rng.uniform(1e-3, 0.5)
        m1, q_m, h_m, mu = rng.uniform(1, 1e3), rng.uniform(1, 100), int(rng.integers(1, 20)), rng.uniform(0.01, 50)
        n = 10 ** rng.uniform(6, 12)
        M = n * rng.uniform(1e-4, 0.5)
        N = M * rng.uniform(1e-3, 0.9)
        e = endpoints(M, N, eps, delta, m1, q_m, h_m, mu, n)
        d1 = e.q2 - e.q1 - math.log2(8 * q_m * m1 * h_m / (eps**3 * delta))
        d2 = e.q3 - e.q2 - math.log2(N * eps**5 / (32 * m1 * mu * q_m))
        d3 = e.q4 - e.q3 - math.log2(8 * math.log(N * h_m / delta) / eps**4)
        worst = max(worst, abs(d1), abs(d2), abs(d3))
    report(6, worst <= 1e-10, f"max identity error {worst:.1e} over 100 draws")


# --- 7 -------------------------------------------------------------------

def test_c07_mu_formulas(report):
    n, mu = 10_000, 16
    X = gen_lower_bound(n, mu).rows
    mu1 = max(mu_ratio(X, [1.0], 1), mu_ratio(X, [-1.0], 1))
    mu2 = max(mu_ratio(X, [1.0], 2), mu_ratio(X, [-1.0], 2))
    closed = n * (1 - 1 / mu) / (math.sqrt(n) + n / mu)
    err = abs(mu1 - closed) / closed
    report(7, err <= 1e-9 and mu2 <= 2, f"mu1 {mu1:.12g} vs closed form {closed:.12g} (rel {err:.1e}); mu2 {mu2:.6f}")


# --- 8 -------------------------------------------------------------------

def test_c08_synthetic_ratios(report, logistic_run):
    med = medians(logistic_run)
    errors = sum(1 for r in logistic_run if r.error)
    small = SIZES[0]
    old, s10 = med[("old", small)].median_ratio, med[("s10", small)].median_ratio
    ok = errors == 0 and 5 <= old <= 12 and 1.2 <= s10 <= 4
    lines = []
    for size in SIZES:
        base = med[("old", size)].median_ratio
        row = {m: med[(m, size)].median_ratio for m in ("old", "s2", "s5", "s10")}
        ok &= all(row[m] < base for m in ("s2", "s5", "s10"))
        lines.append(f"{size}: " + " ".join(f"{m}={v:.2f}" for m, v in row.items()))
    report(8, ok, f"smallest size old={old:.2f} (need [5,12]) s10={s10:.2f} (need [1.2,4]); " + "; ".join(lines))


# --- 9 -------------------------------------------------------------------

def _svm_file(path, n, d, per_row, seed):
    rng = np.random.default_rng(seed)
    with open(path, "w") as fh:
        for _ in range(n):
            cols = np.sort(rng.choice(d, per_row, replace=False)) + 1
            vals = rng.integers(1, 10, per_row)
            label = "1" if rng.random() < 0.5 else "-1"
            fh.write(label + " " + " ".join(f"{c}:{v}" for c, v in zip(cols, vals)) + "\n")


def test_c09_sketch_time_scaling(report, logistic_run, tmp_path):
    med = medians(logistic_run)
    ratios = {}
    ok = True
    for s, name in ((2, "s2"), (5, "s5"), (10, "s10")):
        for size in SIZES:
            r = med[(name, size)].median_sketch_time_s / med[("old", size)].median_sketch_time_s
            ratios[(name, size)] = r
            ok &= r <= s + 1
    # nnz doubling at a fixed config: same n, d and flags, twice the entries per row.
    # Sizes are interleaved and the best of 7 rounds is kept, so a slow spell on a
    # shared machine hits every size alike.
    n, d = 20_000, 200
    per_rows = (10, 20, 40, 80)
    for per_row in per_rows:
        _svm_file(tmp_path / f"x{per_row}.svm", n, d, per_row, per_row)
    times = dict.fromkeys(per_rows, math.inf)
    for _ in range(7):
        for per_row in per_rows:
            args = ["sketch", "-i", str(tmp_path / f"x{per_row}.svm"), "--format", "svmlight", "--no-intercept",
                    "--rows", "2000", "--s", "5", "-o", str(tmp_path / "o.sk")]
            t0 = time.perf_counter()
            assert cli.main(args) == 0
            times[per_row] = min(times[per_row], time.perf_counter() - t0)
    growth = [times[2 * k] / times[k] for k in (10, 20, 40)]
    ok &= max(growth) <= 2
    worst = max(ratios.items(), key=lambda kv: kv[1] / int(kv[0][0][1:]))
    report(9, ok, "time ratio vs s=1: " + ", ".join(f"{k[0]}@{k[1]}={v:.2f}" for k, v in ratios.items())
           + f" (worst {worst[0]}); cmd_sketch growth per nnz doubling: " + ", ".join(f"{g:.2f}" for g in growth))


# --- 10 ------------------------------------------------------------------

def test_c10_l1_vs_cauchy(report):
    spec = harness.parse_spec({
        "dataset": {"kind": "synthetic", "n_half": 20000, "d": 100},
        "objective": "l1",
        "sizes": SIZES,
        "repetitions": 21,
        "seed": 0,
        "sketch": SKETCH,
        "methods": [{"name": "s10", "type": "sketch", "s": 10}, {"name": "cauchy", "type": "cauchy"}],
    })
    recs = harness.run_experiment(spec)
    med = medians(recs)
    errors = sum(1 for r in recs if r.error)
    ok = errors == 0
    parts = []
    for size in SIZES:
        a, b = med[("s10", size)].median_ratio, med[("cauchy", size)].median_ratio
        ok &= a <= b
        parts.append(f"{size}: sketch {a:.4f} vs cauchy {b:.4f}")
    report(10, ok, "; ".join(parts))


# --- 11 ------------------------------------------------------------------

def test_c11_sgd_failure(report, logistic_run):
    med = medians(logistic_run)
    sgd = med[("sgd", None)].median_ratio
    s10 = med[("s10", SIZES[0])].median_ratio
    report(11, sgd >= 50 and s10 <= 4, f"SGD median {sgd:.1f} over {med[('sgd', None)].count} runs (need >= 50); s10 at {SIZES[0]} rows {s10:.2f} (need <= 4)")


# --- 12 ------------------------------------------------------------------

def test_c12_sqrt_n_barrier(report):
    n, mu, lam = 10**6, 64, 1.0
    ds = gen_lower_bound(n, mu)
    X = ds.rows
    spec = ObjectiveSpec.logistic(n + 1, lam)
    full = solve_logistic(X, lam=lam)
    b = 8.0
    h_m = 3

    def ratio(N0, seed):
        cfg = SketchConfig(
            n=n + 1, d=1, h_m=h_m, N=N0, N0=N0, s=1, b=b, N_u=min(N0, math.ceil(n * b**-h_m)), p_u=b**-h_m, seed=seed,
        )
        st = sketch_matrix(cfg, X)
        fit = solve_logistic(st.buckets, st.weights, lam=lam, normalizer=n + 1)
        return approx_ratio(spec, X, 1.0, fit.beta, full)

    small_n0, big_n0 = math.ceil(n**0.25), math.ceil(3 * math.sqrt(n))
    small = float(np.median([ratio(small_n0, s) for s in range(11)]))
    big = float(np.median([ratio(big_n0, s) for s in range(11)]))
    report(12, small >= 10 * big, f"N0={small_n0}: median ratio {small:.3f}; N0={big_n0}: {big:.4f}; factor {small / big:.1f} (need >= 10)")


# --- 13 ------------------------------------------------------------------

def test_c13_contraction_dilation(report):
    n, d = 100_000, 5
    rng = np.random.default_rng(13)
    X = rng.standard_normal((n, d))
    mu_lb = estimate_mu(X, num_directions=64).mu
    cfg = plan_theory(n, d, 0.25, 0.1, 2.0, allow_no_compression=True)
    betas = rng.standard_normal((20, d))
    rep = measure_contraction_dilation(X, cfg, betas, num_seeds=100)
    st = rep.stats()
    ok = mu_lb <= 2 and bool(np.all(st["mean"] >= 0.5) and np.all(st["mean"] <= 3) and np.all(st["p10"] >= 0.4))
    report(13, ok, f"mu lower bound {mu_lb:.3f}; config rows {cfg.rows} (no compression at this n); "
           f"mean in [{st['mean'].min():.3f}, {st['mean'].max():.3f}], min p10 {st['p10'].min():.3f}")
