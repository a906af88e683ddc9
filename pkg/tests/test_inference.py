import numpy as np
import pytest
from scipy import stats

from paqman.inference import (
    FitResult,
    FlowRateMLE,
    ObservationLog,
    UnidentifiableModelError,
    current_rate,
    fit,
    fit_polynomial,
    log_likelihood,
    rate_trajectory,
    score,
)


def simulate_log(alpha, beta1, actions, seed=0):
    rng = np.random.default_rng(seed)
    betas = rate_trajectory(alpha, beta1, actions)[: len(actions)]
    w = rng.gamma(alpha, 1.0 / betas)
    return ObservationLog(w, np.asarray(actions))


def aimd_pattern(k, period=10, drops_per_period=1):
    actions = np.zeros(k, dtype=np.int8)
    actions[period - 1 :: period] = 1
    return actions[:k]


def grid_search_oracle(log, alpha, beta1, n=200):
    """200 x 200 grid maximiser of the log-likelihood around the truth.

    Exploits that for fixed actions every rate is affine in (alpha, beta1),
    so whole grid rows evaluate as one matrix expression.
    """
    from scipy.special import gammaln

    from paqman.inference import _rate_partials

    w = log.interarrivals
    k = len(log)
    sum_log_w = np.sum(np.log(w))
    alphas = np.linspace(0.8 * alpha, 1.2 * alpha, n)
    betas = np.linspace(0.6 * beta1, 1.6 * beta1, n)
    d_alpha, d_beta1 = _rate_partials(alpha, log)  # action-only quantities
    best = (-np.inf, None, None)
    for a_ in alphas:
        # rates for every beta1 candidate at once: (n, k)
        rates = betas[:, None] * d_beta1[None, :] + a_ * d_alpha[None, :]
        lls = (
            a_ * np.sum(np.log(rates), axis=1)
            + (a_ - 1.0) * sum_log_w
            - rates @ w
            - k * gammaln(a_)
        )
        i = int(np.argmax(lls))
        if lls[i] > best[0]:
            best = (float(lls[i]), a_, float(betas[i]))
    return best


class TestObservationLog:
    def test_validation(self):
        with pytest.raises(ValueError):
            ObservationLog(np.array([1.0, -1.0]), np.array([0, 0]))
        with pytest.raises(ValueError):
            ObservationLog(np.array([1.0, 1.0]), np.array([0, 2]))
        with pytest.raises(ValueError):
            ObservationLog(np.array([1.0]), np.array([0]))
        with pytest.raises(ValueError):
            ObservationLog(np.array([1.0, 1.0]), np.array([0]))

    def test_csv_round_trip(self, tmp_path):
        log = simulate_log(1.5, 3.0, aimd_pattern(50))
        path = tmp_path / "log.csv"
        log.to_csv(path)
        loaded = ObservationLog.from_csv(path)
        np.testing.assert_array_equal(loaded.interarrivals, log.interarrivals)
        np.testing.assert_array_equal(loaded.actions, log.actions)


class TestRateTrajectory:
    def test_admit_then_drop(self):
        np.testing.assert_allclose(rate_trajectory(2, 8, [0, 1]), [8, 10, 5])

    def test_all_drops(self):
        np.testing.assert_allclose(rate_trajectory(1, 1, [1, 1, 1]), [1, 0.5, 0.25, 0.125])

    def test_all_admits(self):
        np.testing.assert_allclose(rate_trajectory(1.5, 3, [0, 0]), [3, 4.5, 6])

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            rate_trajectory(0, 1, [0])


class TestLogLikelihood:
    def test_exponential_single_observation(self):
        log = ObservationLog(np.array([2.0, 1.0]), np.array([0, 0]))
        # only checking the first term analytically: use k=1 via direct formula
        ll = log_likelihood(1.0, 0.5, ObservationLog(np.array([2.0, 1e-9]), np.array([0, 0])))
        # easier: compare against the sum of exponential log-densities
        betas = rate_trajectory(1.0, 0.5, [0, 0])[:2]
        expected = sum(
            stats.expon.logpdf(w, scale=1.0 / b)
            for w, b in zip([2.0, 1e-9], betas)
        )
        assert ll == pytest.approx(expected, rel=1e-10)

    def test_matches_gamma_density_product(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            alpha = rng.uniform(0.5, 3.0)
            beta1 = rng.uniform(0.5, 5.0)
            actions = rng.integers(0, 2, size=6)
            log = simulate_log(alpha, beta1, actions, seed=rng.integers(2**31))
            betas = rate_trajectory(alpha, beta1, actions)[:6]
            expected = sum(
                stats.gamma.logpdf(w, a=alpha, scale=1.0 / b)
                for w, b in zip(log.interarrivals, betas)
            )
            assert log_likelihood(alpha, beta1, log) == pytest.approx(expected, abs=1e-10)

    def test_sentinel_for_invalid(self):
        log = ObservationLog(np.array([1.0, 1.0]), np.array([0, 0]))
        assert log_likelihood(-1.0, 1.0, log) < -1e200


class TestScore:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            alpha = rng.uniform(0.5, 3.0)
            beta1 = rng.uniform(0.5, 5.0)
            actions = rng.integers(0, 2, size=20)
            log = simulate_log(alpha, beta1, actions, seed=rng.integers(2**31))
            ga, gb = score(alpha, beta1, log)
            ha, hb = 1e-6 * alpha, 1e-6 * beta1
            fa = (log_likelihood(alpha + ha, beta1, log) - log_likelihood(alpha - ha, beta1, log)) / (2 * ha)
            fb = (log_likelihood(alpha, beta1 + hb, log) - log_likelihood(alpha, beta1 - hb, log)) / (2 * hb)
            assert ga == pytest.approx(fa, rel=1e-5, abs=1e-7)
            assert gb == pytest.approx(fb, rel=1e-5, abs=1e-7)

    def test_all_admit_beta1_partial(self):
        from paqman.inference import _rate_partials

        log = simulate_log(1.5, 2.0, np.zeros(10, dtype=int))
        _, d_beta1 = _rate_partials(1.5, log)
        np.testing.assert_allclose(d_beta1, 1.0)

    def test_all_drop_alpha_partial(self):
        from paqman.inference import _rate_partials

        log = simulate_log(1.5, 2.0, np.ones(10, dtype=int))
        d_alpha, _ = _rate_partials(1.5, log)
        np.testing.assert_allclose(d_alpha, 0.0)


class TestFit:
    def test_synthetic_recovery_and_grid_search(self):
        alpha, beta1 = 1.5, 40.0
        actions = aimd_pattern(10_000)
        log = simulate_log(alpha, beta1, actions, seed=3)
        result = fit(log)
        assert result.converged
        assert abs(result.alpha_hat - alpha) / alpha < 0.10
        best = grid_search_oracle(log, alpha, beta1)
        assert abs(result.alpha_hat - best[1]) / best[1] < 0.02
        assert result.log_likelihood >= best[0] - 1e-6

    def test_maximizer_dominates_truth(self):
        log = simulate_log(1.0, 2.0, aimd_pattern(2000), seed=4)
        result = fit(log)
        assert result.log_likelihood >= log_likelihood(1.0, 2.0, log)

    def test_duplicated_log_same_maximizer(self):
        log = simulate_log(1.5, 3.0, aimd_pattern(2000), seed=5)
        doubled = ObservationLog(
            np.concatenate([log.interarrivals, log.interarrivals]),
            np.concatenate([log.actions, log.actions]),
        )
        r1, r2 = fit(log), fit(doubled)
        # doubling only works as an invariance check when the replayed rate
        # trajectory matches, i.e. the history returns near beta1; compare
        # the likelihood landscape optima instead of exact equality
        assert r2.alpha_hat == pytest.approx(r1.alpha_hat, rel=0.1)

    def test_consistency_trend(self):
        alpha, beta1 = 1.5, 10.0
        errors = []
        for k in (100, 1000, 10_000):
            errs = []
            for seed in range(20):
                log = simulate_log(alpha, beta1, aimd_pattern(k), seed=seed)
                errs.append(abs(fit(log).alpha_hat - alpha))
            errors.append(np.mean(errs))
        assert errors[2] <= errors[1] <= errors[0]

    def test_change_of_units(self):
        # The additive rate increment equals the shape parameter in fixed
        # time units, so the model family is not closed under rescaling
        # time. Two things still hold exactly and are checked here:
        # (a) densities transform with the Jacobian: scaling the data by
        #     1/c and every rate by c shifts the log-likelihood by k*log(c);
        # (b) the fit on rescaled data is still a maximiser, so it
        #     dominates the naively rescaled original estimate.
        c = 1000.0
        log = simulate_log(1.5, 3.0, aimd_pattern(3000), seed=6)
        scaled = ObservationLog(log.interarrivals / c, log.actions)
        alpha, beta1 = 1.5, 3.0
        k = len(log)
        betas = rate_trajectory(alpha, beta1, log.actions)[:k]
        ll_scaled_rates = float(
            np.sum(stats.gamma.logpdf(scaled.interarrivals, a=alpha, scale=1.0 / (c * betas)))
        )
        assert ll_scaled_rates == pytest.approx(
            log_likelihood(alpha, beta1, log) + k * np.log(c), rel=1e-12
        )

        r1 = fit(log)
        r2 = fit(scaled)
        assert r2.converged
        assert r2.log_likelihood >= log_likelihood(r1.alpha_hat, c * r1.beta1_hat, scaled) - 1e-6


class TestFitPolynomial:
    def test_aimd_recovery(self):
        # drops at random rates, so both update maps are sampled across a
        # wide range and their coefficients are individually identifiable
        # (a strictly periodic pattern evaluates the drop map at a single
        # rate, leaving slope and intercept collinear)
        alpha, k = 1.5, 10_000
        rng = np.random.default_rng(7)
        actions = (rng.random(k) < 0.15).astype(np.int8)
        log = simulate_log(alpha, alpha * 20.0, actions, seed=17)
        result, poly = fit_polynomial(log, up_degree=1, down_degree=1)
        # data follow effective-rate maps f_up(x) = x + 1, f_down(x) = x / 2
        assert poly.up_coefficients[0] == pytest.approx(1.0, rel=0.15)
        assert poly.up_coefficients[1] == pytest.approx(1.0, rel=0.05)
        assert poly.down_coefficients[1] == pytest.approx(0.5, rel=0.10)
        assert result.alpha_hat == pytest.approx(alpha, rel=0.10)

    def test_zero_drop_history_unidentifiable(self):
        log = simulate_log(1.5, 3.0, np.zeros(100, dtype=int), seed=8)
        with pytest.raises(UnidentifiableModelError):
            fit_polynomial(log, 1, 1)

    def test_nested_model_dominance(self):
        # cubic growth data: richer up-map must fit at least as well as AIMD
        rng = np.random.default_rng(9)
        alpha = 1.5
        k = 2000
        actions = aimd_pattern(k, period=8)
        lam = np.empty(k)
        lam[0] = 5.0
        for n in range(1, k):
            if actions[n - 1]:
                lam[n] = lam[n - 1] / 2.0
            else:
                x = lam[n - 1]
                # mild quadratic growth; the period-8 sawtooth stays bounded
                lam[n] = x + 0.4 + 0.002 * x**2
        betas = alpha * lam
        w = rng.gamma(alpha, 1.0 / betas)
        log = ObservationLog(w, actions)
        aimd_result = fit(log)
        poly_result, _ = fit_polynomial(log, up_degree=3, down_degree=1)
        assert poly_result.log_likelihood >= aimd_result.log_likelihood - 1e-6


class TestCurrentRate:
    def test_replay(self):
        result = FitResult(2.0, 8.0, 0.0, True, 0.0)
        assert current_rate(result, [0, 1]) == pytest.approx(5.0)

    def test_empty_history(self):
        result = FitResult(2.0, 8.0, 0.0, True, 0.0)
        assert current_rate(result, []) == pytest.approx(8.0)

    def test_long_synthetic_history(self):
        alpha, beta1 = 1.5, 20.0
        actions = aimd_pattern(10_000)
        log = simulate_log(alpha, beta1, actions, seed=10)
        result = fit(log)
        truth = rate_trajectory(alpha, beta1, actions)[-1]
        est = current_rate(result, actions)
        assert est == pytest.approx(truth, rel=0.25)


class TestEstimator:
    def test_fit_predict(self):
        log = simulate_log(1.5, 5.0, aimd_pattern(3000), seed=11)
        est = FlowRateMLE().fit(log.interarrivals, log.actions)
        traj = est.predict([0, 0, 1])
        assert traj.shape == (4,)
        assert est.alpha_ == pytest.approx(1.5, rel=0.2)
