import numpy as np
import pytest
from scipy import integrate

from paqman.grids import RateGrid
from paqman.smdp import SmdpPolicySolver
from paqman.rtt_single import (
    RttSingleConfig,
    RttSingleModel,
    RttState,
    build_generator,
    decision_transition_matrix,
    transient_matrix,
)
from paqman.zero_rtt import Action


def taylor_expm(A, terms=1000):
    """Truncated power-series oracle for the matrix exponential."""
    result = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, terms + 1):
        term = term @ A / k
        result = result + term
        if np.max(np.abs(term)) < 1e-300:
            break
    return result


def mc_decision_matrix(beta, mu, L, r, reps, rng):
    """Event-simulation oracle for the inter-decision queue transitions.

    Phase one simulates the uniformized birth-death jump chain over the
    window of length r; phase two uses that the number of departure
    opportunities before an Exp(beta) deadline is geometric.
    """
    total = beta + mu
    p_birth = beta / total
    counts = np.zeros((L + 1, L + 1))
    for q0 in range(L + 1):
        q = np.full(reps, q0)
        n_events = rng.poisson(total * r, size=reps)
        for k in range(int(n_events.max())):
            active = n_events > k
            birth = rng.random(reps) < p_birth
            up = active & birth
            down = active & ~birth
            q[up] = np.minimum(q[up] + 1, L)
            q[down] = np.maximum(q[down] - 1, 0)
        # failures before the first success in the departure/decision race
        deaths = rng.geometric(p_birth, size=reps) - 1
        q = np.maximum(q - deaths, 0)
        counts[q0] = np.bincount(q, minlength=L + 1)
    return counts / reps


def assert_within_3se(empirical, exact, reps):
    se = np.sqrt(exact * (1.0 - exact) / reps)
    assert np.all(np.abs(empirical - exact) <= 3.0 * se + 1e-9)


class TestBuildGenerator:
    def test_pure_death_two_state(self):
        np.testing.assert_array_equal(build_generator(0.0, 1.0, 1), [[0, 0], [1, -1]])

    def test_birth_death_three_state(self):
        expected = [[-2, 2, 0], [3, -5, 2], [0, 3, -3]]
        np.testing.assert_array_equal(build_generator(2.0, 3.0, 2), expected)

    def test_generator_axioms(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            gen = build_generator(rng.uniform(0, 10), rng.uniform(0.1, 10), rng.integers(1, 9))
            np.testing.assert_allclose(gen.sum(axis=1), 0.0, atol=1e-12)
            off_diag = gen - np.diag(np.diag(gen))
            assert np.all(off_diag >= 0)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            build_generator(1.0, 1.0, 0)
        with pytest.raises(ValueError):
            build_generator(-1.0, 1.0, 2)
        with pytest.raises(ValueError):
            build_generator(1.0, 0.0, 2)


class TestTransientMatrix:
    def test_zero_time_identity(self):
        gen = build_generator(2.0, 3.0, 4)
        np.testing.assert_array_equal(transient_matrix(gen, 0.0), np.eye(5))

    def test_two_state_pure_death_closed_form(self):
        gen = build_generator(0.0, 1.0, 1)
        for t in (0.1, 0.7, 2.5):
            expected = [[1.0, 0.0], [1.0 - np.exp(-t), np.exp(-t)]]
            np.testing.assert_allclose(transient_matrix(gen, t), expected, atol=1e-12)

    def test_matches_power_series(self):
        gen = build_generator(2.0, 3.0, 5)
        t = 0.7
        np.testing.assert_allclose(transient_matrix(gen, t), taylor_expm(t * gen), atol=1e-10)

    def test_row_stochastic_across_grid(self):
        for beta in (0.5, 5.0, 800.0):
            for mu in (1.0, 800.0):
                for t in (1e-4, 0.01, 1.0):
                    for L in (1, 5):
                        P = transient_matrix(build_generator(beta, mu, L), t)
                        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)
                        assert np.all(P >= -1e-15)

    def test_semigroup_property(self):
        gen = build_generator(3.0, 2.0, 6)
        s, t = 0.3, 0.9
        lhs = transient_matrix(gen, s + t)
        rhs = transient_matrix(gen, s) @ transient_matrix(gen, t)
        np.testing.assert_allclose(lhs, rhs, atol=1e-8)

    def test_rejects_negative_time(self):
        with pytest.raises(ValueError):
            transient_matrix(build_generator(1.0, 1.0, 1), -0.1)


class TestDecisionTransitionMatrix:
    def test_symmetric_two_state_closed_form(self):
        P = decision_transition_matrix(1.0, 1.0, 1, 0.0)
        np.testing.assert_allclose(P, [[1.0, 0.0], [0.5, 0.5]], atol=1e-12)

    def test_asymmetric_two_state_closed_form(self):
        P = decision_transition_matrix(3.0, 2.0, 1, 0.0)
        np.testing.assert_allclose(P, [[1.0, 0.0], [0.4, 0.6]], atol=1e-12)

    def test_zero_window_is_pure_death_resolvent(self):
        # with r = 0 the queue can only shrink before the next decision
        P = decision_transition_matrix(2.0, 3.0, 4, 0.0)
        assert np.all(np.triu(P, k=1) == pytest.approx(0.0, abs=1e-12))

    def test_row_stochastic_across_grid(self):
        for beta in (0.5, 8.0, 800.0):
            for mu in (1.0, 800.0):
                for r in (0.0, 0.002, 0.05):
                    for L in (1, 10):
                        P = decision_transition_matrix(beta, mu, L, r)
                        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)
                        assert np.all(P >= -1e-12)

    def test_matches_event_simulation(self):
        rng = np.random.default_rng(20240818)
        reps = 10**6
        for beta, mu, L, r in ((2.0, 3.0, 5, 0.4), (5.0, 2.0, 3, 0.1), (1.0, 1.0, 4, 1.0)):
            exact = decision_transition_matrix(beta, mu, L, r)
            empirical = mc_decision_matrix(beta, mu, L, r, reps, rng)
            assert_within_3se(empirical, exact, reps)

    def test_matches_quadrature(self):
        # window phase composed with the integrated pure-death phase
        beta, mu, L, r = 2.0, 3.0, 3, 0.4
        G_window = build_generator(beta, mu, L)
        G_death = build_generator(0.0, mu, L)
        resolvent = np.empty((L + 1, L + 1))
        for a in range(L + 1):
            for b in range(L + 1):
                resolvent[a, b], _ = integrate.quad(
                    lambda t: transient_matrix(G_death, t)[a, b] * beta * np.exp(-beta * t),
                    0.0,
                    np.inf,
                )
        expected = transient_matrix(G_window, r) @ resolvent
        np.testing.assert_allclose(
            decision_transition_matrix(beta, mu, L, r), expected, atol=1e-7
        )


def make_config(**overrides):
    defaults = dict(
        mu=8.0,
        buffer=5,
        eta=0.5,
        penalty=1e6,
        rtt=0.1,
        grid=RateGrid.log_spaced(1.0, 64.0, 13),
        rate_step=1.0,
    )
    defaults.update(overrides)
    return RttSingleConfig(**defaults)


class TestRttSingleModel:
    def test_rows_sum_to_one(self):
        model = RttSingleModel(make_config())
        for s in range(model.n_states):
            for a in (Action.ADMIT, Action.DROP):
                _, probs = model.transition_row(s, a)
                assert probs.sum() == pytest.approx(1.0, abs=1e-9)

    def test_rate_indices_follow_updates(self):
        cfg = make_config()
        model = RttSingleModel(cfg)
        i = 6
        beta = float(cfg.grid.values[i])
        n_q = cfg.buffer + 1
        idx, _ = model.transition_row(i * n_q + 2, Action.ADMIT)
        expected = {j for j, _ in cfg.grid.interpolate(beta + cfg.rate_step)}
        assert set(idx // n_q) == expected
        idx, _ = model.transition_row(i * n_q + 2, Action.DROP)
        expected = {j for j, _ in cfg.grid.interpolate(beta / 2.0)}
        assert set(idx // n_q) == expected

    def test_rate_rounding_preserves_log_mean(self):
        cfg = make_config()
        model = RttSingleModel(cfg)
        for i, beta in enumerate(cfg.grid.values[:-1]):
            pairs = model._rate_targets[i][Action.ADMIT]
            mean_log = sum(w * np.log(cfg.grid.values[j]) for j, w in pairs)
            assert mean_log == pytest.approx(np.log(beta + cfg.rate_step), abs=1e-12)

    def test_full_buffer_admit_matches_drop_queue_row(self):
        # at Q = L the admit increment is capped, so the queue row is the
        # drop row at index L; only the successor rate differs
        cfg = make_config()
        model = RttSingleModel(cfg)
        n_q = cfg.buffer + 1
        s = 4 * n_q + cfg.buffer
        idx_a, p_admit = model.transition_row(s, Action.ADMIT)
        idx_d, p_drop = model.transition_row(s, Action.DROP)
        marg_a = np.bincount(idx_a % n_q, weights=p_admit, minlength=n_q)
        marg_d = np.bincount(idx_d % n_q, weights=p_drop, minlength=n_q)
        np.testing.assert_allclose(marg_a, marg_d, atol=1e-15)

    def test_transition_matches_event_simulation(self):
        cfg = make_config(buffer=4)
        model = RttSingleModel(cfg)
        rng = np.random.default_rng(7)
        reps = 2 * 10**5
        n_q = cfg.buffer + 1
        i, q = 5, 2
        beta = float(cfg.grid.values[i])
        empirical = mc_decision_matrix(beta, cfg.mu, cfg.buffer, cfg.rtt, reps, rng)
        idx, probs = model.transition_row(i * n_q + q, Action.ADMIT)
        marginal = np.bincount(idx % n_q, weights=probs, minlength=n_q)
        assert_within_3se(empirical[q + 1], marginal, reps)

    def test_reward_values(self):
        grid = RateGrid.log_spaced(1.0, 1024.0, 11)
        cfg = make_config(mu=800.0, eta=0.05, grid=grid)
        model = RttSingleModel(cfg)
        i = int(grid.snap(800.0))
        beta = float(grid.values[i])
        n_q = cfg.buffer + 1
        assert model.reward(i * n_q + 1, Action.ADMIT) == pytest.approx(
            np.sqrt(beta + 1.0) - np.sqrt(beta)
        )
        assert model.reward(i * n_q + 1, Action.DROP) == pytest.approx(
            np.sqrt(beta / 2.0) - np.sqrt(beta)
        )

    def test_reward_penalty_on_violation(self):
        cfg = make_config(mu=8.0, eta=0.5, buffer=10)
        model = RttSingleModel(cfg)
        n_q = cfg.buffer + 1
        # (q + 1) / mu > eta needs q + 1 > 4
        s = 3 * n_q + 4
        beta = float(cfg.grid.values[3])
        expected = -cfg.penalty + np.sqrt(beta + 1.0) - np.sqrt(beta)
        assert model.reward(s, Action.ADMIT) == pytest.approx(expected)
        # the drop indicator uses the uncapped queue
        assert model.reward(3 * n_q + 4, Action.DROP) > -cfg.penalty / 2

    def test_sojourn(self):
        cfg = make_config(rtt=0.002, grid=RateGrid.log_spaced(100.0, 500.0, 3))
        model = RttSingleModel(cfg)
        n_q = cfg.buffer + 1
        assert model.sojourn(0 * n_q, Action.ADMIT) == pytest.approx(0.012)
        assert model.sojourn(2 * n_q, Action.DROP) == pytest.approx(0.004)

    def test_sojourn_limit_is_rtt(self):
        cfg = make_config(rtt=0.01, grid=RateGrid.log_spaced(1e9, 1e10, 2))
        model = RttSingleModel(cfg)
        assert model.sojourn(0, Action.ADMIT) == pytest.approx(0.01, rel=1e-6)

    def test_build_arrays_matches_transition_row(self):
        model = RttSingleModel(make_config(buffer=3, grid=RateGrid.log_spaced(1.0, 16.0, 5)))
        P, R, tau = model.build_arrays()
        for a in (Action.ADMIT, Action.DROP):
            dense = P[a].toarray()
            for s in range(model.n_states):
                idx, probs = model.transition_row(s, a)
                row = np.zeros(model.n_states)
                row[idx] = probs
                np.testing.assert_allclose(dense[s], row, atol=1e-15)
                assert R[s, a] == model.reward(s, a)
                assert tau[s, a] == model.sojourn(s, a)

    def test_state_round_trip(self):
        model = RttSingleModel(make_config())
        s = model.state_index(3, 2)
        state = model.state_of(s)
        assert state == RttState(queue=2, rate_param=float(model.rate_values[3]))


class TestSolvedPolicy:
    def test_longer_rtt_drops_earlier(self):
        # feedback arrives one RTT late, so a slower loop must shed load
        # sooner: the long-RTT drop region contains the short-RTT one, up
        # to single-cell boundary jitter at this coarse grid
        grid = RateGrid.log_spaced(8.0, 960.0, 24)
        common = dict(mu=800.0, buffer=50, eta=0.05, penalty=1e6, grid=grid, rate_step=1.5)
        actions = {}
        for rtt in (0.002, 0.010):
            model = RttSingleModel(RttSingleConfig(rtt=rtt, **common))
            policy = SmdpPolicySolver(tolerance=1e-6).fit(model).policy_
            assert policy.converged
            actions[rtt] = policy.action_grid()
        short, long = actions[0.002], actions[0.010]
        assert short.sum() > 0
        assert long.sum() > short.sum()
        assert int(np.sum(short > long)) <= 3

    def test_drop_region_grows_with_rate(self):
        # per-rate admit thresholds decrease as the arrival rate grows
        grid = RateGrid.log_spaced(8.0, 960.0, 24)
        cfg = RttSingleConfig(
            rtt=0.002, mu=800.0, buffer=50, eta=0.05, penalty=1e6, grid=grid, rate_step=1.5
        )
        policy = SmdpPolicySolver(tolerance=1e-6).fit(RttSingleModel(cfg)).policy_
        grid_actions = policy.action_grid()
        first_drop = np.array(
            [np.argmax(row) if row.any() else row.size for row in grid_actions]
        )
        assert np.all(np.diff(first_drop) <= 0)
