import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obsketch.probes import (
    decompose,
    default_q_max,
    endpoints,
    measure_contraction_dilation,
    mu_z,
    positive_estimate,
    weight_class,
)
from obsketch.sketch import SketchConfig, sketching_matrix


class TestWeightClass:
    @pytest.mark.parametrize("v,q", [(1.0, 0), (0.5, 1), (0.75, 0), (0.25, 2), (0.3, 1), (2.0**-10, 10), (0.999, 0)])
    def test_frozen(self, v, q):
        assert weight_class(v) == q

    @settings(max_examples=200)
    @given(st.floats(1e-300, 1.0))
    def test_interval(self, v):
        q = weight_class(v)
        assert 2.0 ** (-q - 1) < v <= 2.0**-q


class TestDecompose:
    def test_single_class(self):
        z = np.full(8, 2.0**-3)
        dec = decompose(z, q_max=10)
        assert list(dec.classes) == [3]
        assert dec.classes[3].mass == pytest.approx(1.0)

    @settings(max_examples=100)
    @given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=50).filter(lambda v: any(x != 0 for x in v)), st.integers(0, 30))
    def test_partition(self, vals, q_max):
        z = np.array(vals)
        dec = decompose(z, q_max)
        total = sum(dec.class_masses().values()) + dec.residual_mass
        expected = z[z > 0].sum() / np.abs(z).sum()
        assert total == pytest.approx(expected, abs=1e-12)
        assert dec.positive_mass == pytest.approx(expected, abs=1e-12)
        assert dec.positive_mass + dec.negative_mass == pytest.approx(1.0, abs=1e-12)

    def test_important_flag(self):
        z = np.array([0.9, 0.001, -0.099])
        dec = decompose(z, q_max=20, eps=0.1, mu=2.0)
        assert dec.threshold == pytest.approx(0.1 / 40)
        assert dec.classes[0].important
        assert not dec.classes[weight_class(0.001)].important

    def test_zero(self):
        with pytest.raises(ValueError):
            decompose(np.zeros(3), 5)

    def test_default_q_max(self):
        assert default_q_max(10**6, 2, 0.25) == math.ceil(math.log2(10**6 * 3 / 0.25))


params = st.fixed_dictionaries({
    "eps": st.floats(0.01, 0.25),
    "delta": st.floats(0.001, 0.5),
    "m1": st.floats(1, 1e3),
    "q_m": st.floats(1, 100),
    "h_m": st.integers(1, 20),
    "mu_z": st.floats(0.01, 50),
    "n": st.floats(1e6, 1e12),
    "M_frac": st.floats(1e-4, 0.5),
    "N_frac": st.floats(1e-3, 0.9),
})


class TestEndpoints:
    @settings(max_examples=100)
    @given(params)
    def test_difference_identities(self, p):
        M = p["M_frac"] * p["n"]
        N = p["N_frac"] * M
        e = endpoints(M, N, p["eps"], p["delta"], p["m1"], p["q_m"], p["h_m"], p["mu_z"], p["n"])
        eps, delta = p["eps"], p["delta"]
        assert e.q2 - e.q1 == pytest.approx(math.log2(8 * p["q_m"] * p["m1"] * p["h_m"] / (eps**3 * delta)), abs=1e-10)
        assert e.q3 - e.q2 == pytest.approx(math.log2(N * eps**5 / (32 * p["m1"] * p["mu_z"] * p["q_m"])), abs=1e-10)
        assert e.q4 - e.q3 == pytest.approx(math.log2(8 * math.log(N * p["h_m"] / delta) / eps**4), abs=1e-10)

    def test_full_sampling(self):
        e = endpoints(100, 10, 0.25, 0.1, 5, 10, 2, 1.0, 100)
        assert e.q1 == e.q2 == 0.0

    def test_no_collisions(self):
        e = endpoints(50, 50, 0.25, 0.1, 5, 10, 2, 1.0, 100)
        assert math.isinf(e.q3) and math.isinf(e.q4)

    def test_invalid(self):
        with pytest.raises(ValueError):
            endpoints(200, 10, 0.25, 0.1, 5, 10, 2, 1.0, 100)
        with pytest.raises(ValueError):
            endpoints(10, 10, 0.0, 0.1, 5, 10, 2, 1.0, 100)


def test_mu_z():
    assert mu_z(np.array([2.0, -1.0, -3.0])) == 2.0
    assert math.isinf(mu_z(np.array([-1.0])))


class TestContraction:
    def config(self, n, **kw):
        base = dict(n=n, d=1, h_m=3, N=50, N0=200, s=1, b=4.0, N_u=20, p_u=4.0**-3, seed=0)
        base.update(kw)
        return SketchConfig(**base)

    def test_nonpositive_z(self):
        X = -np.abs(np.random.default_rng(0).standard_normal((500, 1)))
        rep = measure_contraction_dilation(X, self.config(500), [[1.0]], num_seeds=20)
        assert np.all(rep.estimates == 0)

    def test_giant_coordinate_isolated(self):
        n = 2000
        z = -np.ones(n) * 0.01
        z[17] = 100.0
        X = z[:, None]
        cfg = self.config(n, s=10, N0=1000)
        rep = measure_contraction_dilation(X, cfg, [[1.0]], num_seeds=100)
        est = rep.estimates[:, 0]
        assert np.mean(est >= 0.75 * 100.0) >= 0.9

    def test_matches_direct_estimate(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((300, 2))
        cfg = self.config(300, d=2)
        betas = rng.standard_normal((3, 2))
        rep = measure_contraction_dilation(X, cfg, betas, seeds=[5, 9])
        for k, seed in enumerate([5, 9]):
            c = cfg.replace(seed=seed)
            for j, b in enumerate(betas):
                assert rep.estimates[k, j] == pytest.approx(positive_estimate(sketching_matrix(c), c.weights(), X, b))

    def test_report_csv(self, tmp_path):
        X = np.random.default_rng(2).standard_normal((100, 1))
        rep = measure_contraction_dilation(X, self.config(100), [[1.0], [-1.0]], num_seeds=5)
        p = tmp_path / "r.csv"
        rep.to_csv(p)
        lines = p.read_text().splitlines()
        assert lines[0] == "beta_index,statistic,value,true_positive_mass,num_seeds"
        assert len(lines) == 1 + 2 * 5
        st_ = rep.stats()
        assert np.all(st_["min"] <= st_["p10"]) and np.all(st_["p10"] <= st_["median"]) and np.all(st_["median"] <= st_["max"])

    def test_num_seeds_validation(self):
        with pytest.raises(ValueError):
            measure_contraction_dilation(np.ones((10, 1)), self.config(10), [[1.0]], num_seeds=0)
