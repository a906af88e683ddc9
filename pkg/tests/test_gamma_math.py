import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paqman.gamma_math import (
    GammaParams,
    gamma_exceedance,
    gamma_exceedance_step,
    service_count_pmf,
)


def mc_exceedance(u, v, w, z, n=10**6, seed=0):
    """Monte-Carlo oracle: empirical P(Y > X) over paired Gamma draws."""
    rng = np.random.default_rng(seed)
    y = rng.gamma(u, 1.0 / v, size=n)
    x = rng.gamma(w, 1.0 / z, size=n)
    p = np.mean(y > x)
    se = np.sqrt(max(p * (1 - p), 1e-12) / n)
    return p, se


class TestGammaParams:
    def test_valid(self):
        gp = GammaParams(shape=1.5, rate=2.0)
        assert gp.shape == 1.5

    @pytest.mark.parametrize("shape,rate", [(0, 1), (-1, 1), (1, 0), (1, -2)])
    def test_invalid(self, shape, rate):
        with pytest.raises(ValueError):
            GammaParams(shape=shape, rate=rate)


class TestExceedance:
    def test_exponential_first_variate(self):
        # single-term sum: (z/(v+z))^w
        assert gamma_exceedance(1, 2, 3, 1) == pytest.approx((1 / 3) ** 3, abs=1e-12)

    def test_two_exponential_races(self):
        assert gamma_exceedance(2, 1, 1, 1) == pytest.approx(0.75, abs=1e-12)

    def test_monte_carlo(self):
        p = gamma_exceedance(3, 1.5, 2.5, 0.7)
        p_mc, se = mc_exceedance(3, 1.5, 2.5, 0.7)
        assert abs(p - p_mc) <= 3 * se

    @pytest.mark.parametrize("bad", [dict(u=0), dict(u=1.5), dict(v=0), dict(w=-1), dict(z=0)])
    def test_domain_errors(self, bad):
        args = dict(u=2, v=1.0, w=1.0, z=1.0)
        args.update(bad)
        with pytest.raises(ValueError):
            gamma_exceedance(**args)

    def test_w_equal_one_geometric(self):
        # geometric closed form 1 - (v/(v+z))^u
        for u in (1, 3, 10):
            expected = 1 - (2.0 / 3.0) ** u
            assert gamma_exceedance(u, 2.0, 1.0, 1.0) == pytest.approx(expected, abs=1e-12)

    def test_monotone_limit_in_u(self):
        vals = [gamma_exceedance(u, 1.2, 2.0, 3.0) for u in range(1, 51)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))
        # strictly increasing until the increments fall below float resolution
        assert all(b > a for a, b in zip(vals[:20], vals[1:21]))
        assert vals[-1] > 0.999


class TestExceedanceStep:
    def test_from_exponential_races(self):
        assert gamma_exceedance_step(2, 1, 1, 1) == pytest.approx(0.25, abs=1e-12)

    def test_direct_substitution(self):
        assert gamma_exceedance_step(2, 3, 2, 1) == pytest.approx(0.09375, abs=1e-12)

    def test_consistency_with_difference(self):
        u, v, w, z = 5, 0.8, 1.7, 2.1
        diff = gamma_exceedance(u, v, w, z) - gamma_exceedance(u - 1, v, w, z)
        assert gamma_exceedance_step(u, v, w, z) == pytest.approx(diff, abs=1e-12)

    def test_requires_u_at_least_two(self):
        with pytest.raises(ValueError):
            gamma_exceedance_step(1, 1, 1, 1)


class TestProperties:
    @given(
        u=st.integers(min_value=1, max_value=200),
        v=st.floats(min_value=1e-3, max_value=1e3),
        w=st.floats(min_value=1e-3, max_value=1e3),
        z=st.floats(min_value=1e-3, max_value=1e3),
    )
    @settings(max_examples=200, deadline=None)
    def test_in_unit_interval(self, u, v, w, z):
        p = gamma_exceedance(u, v, w, z)
        assert 0.0 <= p <= 1.0

    @given(
        u=st.integers(min_value=2, max_value=100),
        v=st.floats(min_value=1e-2, max_value=1e2),
        w=st.floats(min_value=1e-2, max_value=1e2),
        z=st.floats(min_value=1e-2, max_value=1e2),
    )
    @settings(max_examples=100, deadline=None)
    def test_recursion_consistency(self, u, v, w, z):
        lhs = gamma_exceedance(u, v, w, z)
        rhs = gamma_exceedance(u - 1, v, w, z) + gamma_exceedance_step(u, v, w, z)
        assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_monte_carlo_grid(self):
        rng = np.random.default_rng(20240817)
        n = 10**6
        for u in (1, 2, 5):
            for v in (0.5, 1.5, 3.0):
                for w in (0.5, 1.5, 3.0):
                    for z in (0.5, 1.5, 3.0):
                        p = gamma_exceedance(u, v, w, z)
                        y = rng.gamma(u, 1.0 / v, size=n)
                        x = rng.gamma(w, 1.0 / z, size=n)
                        p_mc = np.mean(y > x)
                        se = np.sqrt(max(p_mc * (1 - p_mc), 1e-12) / n)
                        assert abs(p - p_mc) <= 3 * se, (u, v, w, z)


class TestServiceCountPmf:
    def test_matches_exceedance_steps(self):
        mu, alpha, beta = 2.5, 1.7, 3.3
        pmf = service_count_pmf(6, mu, alpha, beta)
        assert pmf[0] == pytest.approx(gamma_exceedance(1, mu, alpha, beta), abs=1e-12)
        for n in range(1, 7):
            assert pmf[n] == pytest.approx(
                gamma_exceedance_step(n + 1, mu, alpha, beta), abs=1e-12
            )

    def test_sums_below_one(self):
        pmf = service_count_pmf(100, 1.0, 1.5, 2.0)
        assert 0 < pmf.sum() <= 1.0 + 1e-12
