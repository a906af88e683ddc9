"""Maximum-likelihood inference of traffic-flow parameters.

Observed interarrival times are Gamma distributed with a common shape and a
rate parameter driven by the congestion-control recursion (additive increase
on admit, halving on drop). The shape and the initial rate are estimated
jointly by quasi-Newton ascent in log-parameters; a polynomial
congestion-control variant fits the update maps as well.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special
from sklearn.base import BaseEstimator

__all__ = [
    "ObservationLog",
    "FitResult",
    "PolynomialCC",
    "UnidentifiableModelError",
    "rate_trajectory",
    "log_likelihood",
    "score",
    "fit",
    "fit_polynomial",
    "current_rate",
    "FlowRateMLE",
]

# returned in place of -inf so optimisers keep a usable objective
LOG_LIKELIHOOD_FLOOR = -1e300


class UnidentifiableModelError(ValueError):
    """The action history carries no information about a parameter."""


@dataclass(frozen=True)
class ObservationLog:
    """Interarrival times (seconds) paired with the drop/admit actions."""

    interarrivals: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.interarrivals, dtype=float)
        a = np.asarray(self.actions, dtype=np.int8)
        if w.ndim != 1 or a.ndim != 1 or w.size != a.size:
            raise ValueError("interarrivals and actions must be 1-D and equally long")
        if w.size < 2:
            raise ValueError("need at least 2 observations")
        if np.any(w <= 0):
            raise ValueError("interarrival times must be strictly positive")
        if not np.all(np.isin(a, (0, 1))):
            raise ValueError("actions must be 0 (admit) or 1 (drop)")
        object.__setattr__(self, "interarrivals", w)
        object.__setattr__(self, "actions", a)

    def __len__(self) -> int:
        return self.interarrivals.size

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["interarrival_seconds", "action"])
            for w, a in zip(self.interarrivals, self.actions):
                writer.writerow([repr(float(w)), int(a)])

    @classmethod
    def from_csv(cls, path) -> "ObservationLog":
        ws, acts = [], []
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            for row in reader:
                ws.append(float(row["interarrival_seconds"]))
                acts.append(int(row["action"]))
        return cls(np.array(ws), np.array(acts))


@dataclass
class FitResult:
    alpha_hat: float
    beta1_hat: float
    log_likelihood: float
    converged: bool
    gradient_norm: float

    def __post_init__(self):
        if not (self.alpha_hat > 0 and self.beta1_hat > 0):
            raise ValueError("fitted parameters must be positive")

    def as_row(self) -> dict:
        return {
            "alpha_hat": self.alpha_hat,
            "beta1_hat": self.beta1_hat,
            "log_likelihood": self.log_likelihood,
            "converged": int(self.converged),
            "gradient_norm": self.gradient_norm,
        }


@dataclass
class PolynomialCC:
    """Fitted congestion-control update polynomials over effective rates.

    Coefficients are ascending (constant term first); ``up`` applies after
    an admit, ``down`` after a drop.
    """

    up_coefficients: np.ndarray
    down_coefficients: np.ndarray

    def __post_init__(self):
        self.up_coefficients = np.asarray(self.up_coefficients, dtype=float)
        self.down_coefficients = np.asarray(self.down_coefficients, dtype=float)

    def up(self, rate: float) -> float:
        return float(np.polynomial.polynomial.polyval(rate, self.up_coefficients))

    def down(self, rate: float) -> float:
        return float(np.polynomial.polynomial.polyval(rate, self.down_coefficients))


def rate_trajectory(alpha: float, beta1: float, actions) -> np.ndarray:
    """Rate parameters implied by the action history.

    Returns beta_1 .. beta_{k+1} with beta_{t+1} = beta_t + alpha after an
    admit and beta_t / 2 after a drop.
    """
    if not (alpha > 0 and beta1 > 0):
        raise ValueError("alpha and beta1 must be positive")
    actions = np.asarray(actions, dtype=np.int8)
    betas = np.empty(actions.size + 1)
    betas[0] = beta1
    for t, a in enumerate(actions):
        betas[t + 1] = betas[t] / 2.0 if a else betas[t] + alpha
    return betas


def log_likelihood(alpha: float, beta1: float, log: ObservationLog) -> float:
    """Gamma log-likelihood of the interarrivals under the rate recursion.

    alpha * sum(log beta_n) + (alpha - 1) * sum(log W_n)
    - sum(beta_n W_n) - k * log Gamma(alpha).
    Non-finite values are replaced by a large negative sentinel.
    """
    if not (alpha > 0 and beta1 > 0):
        return LOG_LIKELIHOOD_FLOOR
    w = log.interarrivals
    k = len(log)
    betas = rate_trajectory(alpha, beta1, log.actions)[:k]
    value = (
        alpha * np.sum(np.log(betas))
        + (alpha - 1.0) * np.sum(np.log(w))
        - np.sum(betas * w)
        - k * special.gammaln(alpha)
    )
    if not np.isfinite(value):
        return LOG_LIKELIHOOD_FLOOR
    return float(value)


def _rate_partials(alpha: float, log: ObservationLog):
    """Recursive partials of beta_n w.r.t. alpha and beta_1."""
    a = log.actions
    k = len(log)
    d_alpha = np.zeros(k)
    d_beta1 = np.ones(k)
    for n in range(1, k):
        if a[n - 1]:
            d_alpha[n] = 0.5 * d_alpha[n - 1]
            d_beta1[n] = 0.5 * d_beta1[n - 1]
        else:
            d_alpha[n] = 1.0 + d_alpha[n - 1]
            d_beta1[n] = d_beta1[n - 1]
    return d_alpha, d_beta1


def score(alpha: float, beta1: float, log: ObservationLog):
    """Analytic gradient (d/d alpha, d/d beta1) of the log-likelihood."""
    if not (alpha > 0 and beta1 > 0):
        raise ValueError("alpha and beta1 must be positive")
    w = log.interarrivals
    k = len(log)
    betas = rate_trajectory(alpha, beta1, log.actions)[:k]
    d_alpha, d_beta1 = _rate_partials(alpha, log)
    common = alpha / betas - w
    g_alpha = (
        np.sum(np.log(betas))
        + np.sum(common * d_alpha)
        + np.sum(np.log(w))
        - k * special.digamma(alpha)
    )
    g_beta1 = np.sum(common * d_beta1)
    return float(g_alpha), float(g_beta1)


def _moment_init(log: ObservationLog):
    """Method-of-moments start assuming a constant rate over the first
    stretch of interarrivals."""
    head = log.interarrivals[: min(len(log), 200)]
    mean = float(head.mean())
    var = float(head.var())
    if var <= 0:
        alpha0 = 1.0
    else:
        alpha0 = max(mean * mean / var, 1e-3)
    beta0 = alpha0 / mean
    return alpha0, beta0


def fit(log: ObservationLog, gradient_tolerance: float = 1e-6) -> FitResult:
    """Maximise the log-likelihood over (alpha, beta1).

    Optimisation runs in log-parameters so positivity is structural; the
    reported gradient norm is taken in that parameterisation. At least 10
    observations are recommended for a stable fit (not enforced).
    """
    alpha0, beta0 = _moment_init(log)
    x0 = np.log([alpha0, beta0])

    def neg_ll(x):
        alpha, beta1 = np.exp(x)
        return -log_likelihood(alpha, beta1, log)

    def neg_grad(x):
        alpha, beta1 = np.exp(x)
        ga, gb = score(alpha, beta1, log)
        return -np.array([ga * alpha, gb * beta1])

    res = optimize.minimize(
        neg_ll,
        x0,
        jac=neg_grad,
        method="L-BFGS-B",
        options={"gtol": gradient_tolerance * 1e-2, "ftol": 1e-14, "maxiter": 500},
    )
    # Newton polish on the analytic score; the quasi-Newton step above gets
    # close but its stopping rule is looser than the reported tolerance
    x = res.x
    for _ in range(50):
        g = neg_grad(x)
        if np.linalg.norm(g) < gradient_tolerance * 0.1:
            break
        h = 1e-5
        H = np.empty((2, 2))
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            H[:, i] = (neg_grad(x + e) - neg_grad(x - e)) / (2 * h)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)):
            break
        base = neg_ll(x)
        for scale in (1.0, 0.5, 0.25, 0.1, 0.02):
            x_try = x - scale * step
            if neg_ll(x_try) <= base:
                x = x_try
                break
        else:
            break
    alpha_hat, beta1_hat = np.exp(x)
    grad_norm = float(np.linalg.norm(neg_grad(x)))
    return FitResult(
        alpha_hat=float(alpha_hat),
        beta1_hat=float(beta1_hat),
        log_likelihood=log_likelihood(float(alpha_hat), float(beta1_hat), log),
        converged=grad_norm < gradient_tolerance,
        gradient_norm=grad_norm,
    )


def _polynomial_trajectory(alpha, lam1, up_coeffs, down_coeffs, actions, k):
    """Effective-rate trajectory under polynomial update maps; returns None
    if the maps leave the positive half-line."""
    lam = np.empty(k)
    lam[0] = lam1
    # exploratory optimiser steps can overflow; the finite check rejects them
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(1, k):
            coeffs = down_coeffs if actions[n - 1] else up_coeffs
            nxt = np.polynomial.polynomial.polyval(lam[n - 1], coeffs)
            if not np.isfinite(nxt) or nxt <= 0:
                return None
            lam[n] = nxt
    return lam


def _polynomial_log_likelihood(params, log, up_degree, down_degree):
    k = len(log)
    alpha = np.exp(params[0])
    lam1 = np.exp(params[1])
    up_coeffs = params[2 : 2 + up_degree + 1]
    down_coeffs = params[2 + up_degree + 1 :]
    lam = _polynomial_trajectory(alpha, lam1, up_coeffs, down_coeffs, log.actions, k)
    if lam is None:
        return LOG_LIKELIHOOD_FLOOR
    betas = alpha * lam
    w = log.interarrivals
    value = (
        alpha * np.sum(np.log(betas))
        + (alpha - 1.0) * np.sum(np.log(w))
        - np.sum(betas * w)
        - k * special.gammaln(alpha)
    )
    if not np.isfinite(value):
        return LOG_LIKELIHOOD_FLOOR
    return float(value)


def fit_polynomial(log: ObservationLog, up_degree: int, down_degree: int):
    """Joint MLE of (alpha, beta1) and polynomial update-map coefficients.

    The update maps act on the effective rate beta/alpha; gradients for the
    coefficients are taken numerically. The observation count should be
    large relative to the parameter count for a stable fit.
    """
    if up_degree < 0 or down_degree < 0:
        raise ValueError("polynomial degrees must be non-negative")
    n_drops = int(log.actions.sum())
    n_admits = len(log) - n_drops
    if n_drops == 0:
        raise UnidentifiableModelError(
            "action history contains no drops; the drop update map is unidentifiable"
        )
    if n_admits == 0:
        raise UnidentifiableModelError(
            "action history contains no admits; the admit update map is unidentifiable"
        )

    aimd = fit(log)
    alpha0 = aimd.alpha_hat
    lam0 = aimd.beta1_hat / alpha0
    # start from the additive-increase / halving shape embedded in the degrees
    up0 = np.zeros(up_degree + 1)
    if up_degree >= 1:
        up0[0], up0[1] = 1.0, 1.0
    else:
        up0[0] = lam0 + 1.0
    down0 = np.zeros(down_degree + 1)
    if down_degree >= 1:
        down0[1] = 0.5
    else:
        down0[0] = max(lam0 / 2.0, 1e-6)
    x0 = np.concatenate(([np.log(alpha0), np.log(lam0)], up0, down0))

    def neg_ll(x):
        return -_polynomial_log_likelihood(x, log, up_degree, down_degree)

    res = optimize.minimize(neg_ll, x0, method="Nelder-Mead",
                            options={"maxiter": 4000, "xatol": 1e-8, "fatol": 1e-10})
    res = optimize.minimize(neg_ll, res.x, method="BFGS",
                            options={"maxiter": 500})
    alpha_hat = float(np.exp(res.x[0]))
    beta1_hat = float(alpha_hat * np.exp(res.x[1]))
    grad_norm = float(np.linalg.norm(res.jac)) if res.jac is not None else np.inf
    result = FitResult(
        alpha_hat=alpha_hat,
        beta1_hat=beta1_hat,
        log_likelihood=-float(res.fun),
        converged=bool(res.success) or grad_norm < 1e-3,
        gradient_norm=grad_norm,
    )
    poly = PolynomialCC(
        up_coefficients=res.x[2 : 2 + up_degree + 1].copy(),
        down_coefficients=res.x[2 + up_degree + 1 :].copy(),
    )
    return result, poly


def current_rate(result: FitResult, actions) -> float:
    """Rate estimate after replaying the action history from the fit."""
    betas = rate_trajectory(result.alpha_hat, result.beta1_hat, actions)
    return float(betas[-1])


class FlowRateMLE(BaseEstimator):
    """Estimator-style wrapper: fit on (interarrivals, actions), then
    reconstruct rates for arbitrary action histories with ``predict``."""

    def __init__(self, gradient_tolerance: float = 1e-6):
        self.gradient_tolerance = gradient_tolerance

    def fit(self, interarrivals, actions):
        log = ObservationLog(np.asarray(interarrivals), np.asarray(actions))
        self.result_ = fit(log, gradient_tolerance=self.gradient_tolerance)
        self.alpha_ = self.result_.alpha_hat
        self.beta1_ = self.result_.beta1_hat
        return self

    def predict(self, actions) -> np.ndarray:
        return rate_trajectory(self.alpha_, self.beta1_, actions)
