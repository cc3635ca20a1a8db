import math
from decimal import Decimal, localcontext

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from obsketch import objectives as ob
from obsketch.objectives import ObjectiveSpec, f1, f_full, grad_f, l1_objective, logit_loss, small_part_g


def loss_oracle(r: float) -> float:
    # 1 + e^r must keep ~15 significant digits of e^r down to r = -700
    with localcontext() as ctx:
        ctx.prec = 340
        x = Decimal(r)
        return float((Decimal(1) + x.exp()).ln())


finite = st.floats(-700, 700, allow_nan=False)
vectors = arrays(np.float64, st.integers(1, 40), elements=st.floats(-60, 60, allow_nan=False))


class TestLoss:
    def test_zero(self):
        assert logit_loss(0.0) == pytest.approx(0.6931471805599453, abs=1e-16)

    def test_large(self):
        assert logit_loss(1000.0) == pytest.approx(1000.0, rel=1e-12)
        assert logit_loss(-1000.0) == 0.0

    @pytest.mark.parametrize("r", [-50.0, -1.0, 0.3, 17.0])
    def test_reflection(self, r):
        assert logit_loss(r) - logit_loss(-r) == pytest.approx(r, abs=1e-12)

    @pytest.mark.parametrize("r", [-700.0, -40.0, -1e-8, 0.0, 1e-3, 2.5, 36.0, 300.0, 700.0])
    def test_oracle(self, r):
        assert logit_loss(r) == pytest.approx(loss_oracle(r), rel=1e-14, abs=1e-300)

    @settings(max_examples=200)
    @given(finite)
    def test_oracle_property(self, r):
        assert logit_loss(r) == pytest.approx(loss_oracle(r), rel=1e-13, abs=1e-300)

    def test_vector(self):
        out = logit_loss(np.array([-1.0, 0.0, 1.0]))
        assert out.shape == (3,)

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_non_finite(self, bad):
        with pytest.raises(ValueError):
            logit_loss(bad)

    def test_monotone(self):
        r = np.linspace(-800, 800, 20001)
        assert np.all(np.diff(ob._loss(r)) >= 0)

    def test_sigmoid_is_derivative(self):
        r = np.linspace(-30, 30, 61)
        h = 1e-6
        fd = (ob._loss(r + h) - ob._loss(r - h)) / (2 * h)
        assert np.allclose(ob._sigmoid(r), fd, atol=1e-8)


class TestF1:
    def test_zero(self):
        assert f1(np.zeros(7), 1.0, 7) == pytest.approx(math.log(2), abs=1e-15)

    @settings(max_examples=100)
    @given(vectors)
    def test_splitting(self, z):
        big, small = ob.split_first(z)
        assert len(z) * f1(z, 1.0, len(z)) == pytest.approx(big + small, rel=1e-10, abs=1e-12)

    def test_doubling_weights(self):
        z = np.random.default_rng(0).standard_normal(20)
        assert f1(z, 2.0, 20) == pytest.approx(2 * f1(z, 1.0, 20), rel=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            f1(np.zeros(3), np.ones(4), 3)


class TestFFull:
    @pytest.mark.parametrize("lam", [0.0, 0.1, 0.5, 1.0])
    def test_zero(self, lam):
        assert f_full(np.zeros(11), 1.0, lam, 11) == pytest.approx(math.log(2), abs=1e-15)

    @settings(max_examples=100)
    @given(vectors, st.floats(0, 5))
    def test_not_below_mean_loss(self, z, lam):
        n = len(z)
        assert f_full(z, 1.0, lam, n) >= f1(z, 1.0, n) - 1e-12 * max(1.0, f1(z, 1.0, n))

    def test_matches_variance_form(self):
        rng = np.random.default_rng(1)
        z = rng.standard_normal(50) * 3
        lam = 0.7
        loss = np.log1p(np.exp(z))
        expected = loss.mean() + lam / 2 * loss.var()
        assert f_full(z, 1.0, lam, 50) == pytest.approx(expected, rel=1e-12)

    @settings(max_examples=100)
    @given(vectors, st.floats(0.01, 5))
    def test_second_splitting(self, z, lam):
        n = len(z)
        _, f2, _ = ob.objective_parts(z, 1.0, lam, n)
        a, b, c = ob.split_second(z)
        assert n * (2 / lam) * f2 == pytest.approx(a + b + c, rel=1e-10, abs=1e-12)

    def test_negative_lambda(self):
        with pytest.raises(ValueError):
            f_full(np.zeros(3), 1.0, -0.1, 3)


class TestSmallPart:
    def test_zero(self):
        g1, g2 = small_part_g(0.0)
        assert g1 == pytest.approx(math.log(2), abs=1e-16)
        assert g2 == pytest.approx(math.log(2) ** 2, abs=1e-16)

    @settings(max_examples=300)
    @given(st.floats(-1e6, 1e6, allow_nan=False))
    def test_bounds(self, t):
        g1, g2 = small_part_g(t)
        assert g1 < 1
        assert g2 <= 3

    def test_bounds_dense(self):
        t = np.linspace(-50, 50, 100_001)
        g1, g2 = small_part_g(t)
        assert g1.max() < 1 and g2.max() <= 3


def fd_gradient(fun, beta, h=1e-6):
    g = np.zeros_like(beta)
    for j in range(beta.size):
        e = np.zeros_like(beta)
        e[j] = h
        g[j] = (fun(beta + e) - fun(beta - e)) / (2 * h)
    return g


class TestGradient:
    @pytest.mark.parametrize("lam", [0.0, 0.1, 1.0])
    def test_finite_differences(self, lam):
        rng = np.random.default_rng(int(lam * 10))
        for _ in range(10):
            X = rng.standard_normal((20, 5))
            w = rng.uniform(0.5, 2, 20)
            beta = rng.standard_normal(5)
            g = grad_f(X @ beta, X, w, lam, 20)
            fd = fd_gradient(lambda b: f_full(X @ b, w, lam, 20), beta)
            assert np.allclose(g, fd, rtol=1e-6, atol=1e-9)

    def test_symmetric_data(self):
        X = np.random.default_rng(2).standard_normal((10, 3))
        X = np.vstack([X, -X])
        assert np.allclose(grad_f(np.zeros(20), X, 1.0, 0.0, 20), 0, atol=1e-15)

    def test_weight_scaling(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((15, 4))
        z = X @ rng.standard_normal(4)
        assert np.allclose(grad_f(z, X, 3.0, 0.0, 15), 3 * grad_f(z, X, 1.0, 0.0, 15), rtol=1e-14)

    def test_sparse_rows(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((15, 4))
        z = X @ rng.standard_normal(4)
        assert np.allclose(grad_f(z, sp.csr_matrix(X), 1.0, 0.5, 15), grad_f(z, X, 1.0, 0.5, 15))

    def test_spec_gradient(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((12, 3))
        spec = ObjectiveSpec.logistic(12, 0.3)
        beta = rng.standard_normal(3)
        fd = fd_gradient(lambda b: spec.value(X, 1.0, b), beta)
        assert np.allclose(spec.gradient(X, 1.0, beta), fd, rtol=1e-6)


class TestL1:
    def test_exact_fit(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((30, 3))
        beta = rng.standard_normal(3)
        rows = np.hstack([X, -(X @ beta)[:, None]])
        assert l1_objective(rows, 1.0, np.append(beta, 1.0)) == pytest.approx(0, abs=1e-12)

    def test_median_reduction(self):
        y = np.array([3.0, -1.0, 4.0, 1.0, 5.0])
        rows = np.column_stack([np.ones(5), -y])
        assert l1_objective(rows, 1.0, np.array([2.0, 1.0])) == np.abs(2.0 - y).sum()

    @settings(max_examples=50)
    @given(st.floats(-10, 10, allow_nan=False))
    def test_homogeneity(self, c):
        rng = np.random.default_rng(1)
        rows = rng.standard_normal((10, 4))
        v = rng.standard_normal(4)
        assert ob.weighted_abs_sum(rows, 1.0, c * v) == pytest.approx(abs(c) * ob.weighted_abs_sum(rows, 1.0, v), rel=1e-12, abs=1e-12)

    def test_trailing_one_required(self):
        with pytest.raises(ValueError):
            l1_objective(np.ones((2, 2)), 1.0, np.array([1.0, 2.0]))


class TestSpec:
    def test_lambda_only_for_var_reg(self):
        with pytest.raises(ValueError):
            ObjectiveSpec("logistic", 0.5, 10)
        assert ObjectiveSpec.logistic(10, 0.5).kind == "logistic_var_reg"
        assert ObjectiveSpec.logistic(10, 0.0).kind == "logistic"

    @pytest.mark.parametrize("kw", [dict(kind="probit"), dict(kind="logistic_var_reg", lam=-1.0), dict(normalizer=0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ObjectiveSpec(**kw)

    def test_normalizer_for_sketch(self):
        # sketch rows carry weights; dividing by the original n keeps values comparable
        z = np.array([0.0, 0.0])
        assert ObjectiveSpec.logistic(100).value(np.eye(2), np.array([50.0, 50.0]), z) == pytest.approx(math.log(2))
