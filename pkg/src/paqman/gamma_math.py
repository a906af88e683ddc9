"""Closed-form race probabilities between Gamma random variables.

The probability that an integer-shape Gamma variate exceeds an independent
Gamma variate is the basic quantity behind every transition probability in
the negligible-feedback queue model: "at least n packets served before the
next arrival" is exactly such a race.
"""

from dataclasses import dataclass
from math import exp, lgamma, log

import numpy as np

__all__ = [
    "GammaParams",
    "gamma_exceedance",
    "gamma_exceedance_step",
    "service_count_pmf",
]


@dataclass(frozen=True)
class GammaParams:
    """Shape/rate parameter pair of a Gamma distribution."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0):
            raise ValueError(f"shape must be positive, got {self.shape}")
        if not (self.rate > 0):
            raise ValueError(f"rate must be positive, got {self.rate}")


def _check_args(u, v, w, z):
    if u != int(u) or u < 1:
        raise ValueError(f"first shape must be a positive integer, got {u}")
    for name, val in (("v", v), ("w", w), ("z", z)):
        if not (val > 0):
            raise ValueError(f"{name} must be positive, got {val}")


def _log_term(k: int, v: float, w: float, z: float) -> float:
    # log of Gamma(k+w)/(Gamma(k+1)Gamma(w)) (v/(v+z))^k (z/(v+z))^w,
    # a negative-binomial mass; evaluated in log space so large k, w do
    # not overflow the Gamma function.
    return (
        lgamma(k + w)
        - lgamma(k + 1)
        - lgamma(w)
        + k * (log(v) - log(v + z))
        + w * (log(z) - log(v + z))
    )


def gamma_exceedance(u: int, v: float, w: float, z: float) -> float:
    """P(Y > X) for independent Y ~ Gamma(u, v), X ~ Gamma(w, z), integer u.

    Returns the finite sum over k = 0..u-1 of negative-binomial masses;
    monotone increasing in u and always in [0, 1].
    """
    _check_args(u, v, w, z)
    total = 0.0
    for k in range(int(u)):
        total += exp(_log_term(k, v, w, z))
    return min(total, 1.0)


def gamma_exceedance_step(u: int, v: float, w: float, z: float) -> float:
    """Increment ``gamma_exceedance(u) - gamma_exceedance(u - 1)`` for u >= 2.

    Equals the probability that the race is decided exactly at the
    (u-1)-th stage, i.e. the k = u-1 term of the closed-form sum.
    """
    _check_args(u, v, w, z)
    if u < 2:
        raise ValueError(f"u must be >= 2 for the recursion step, got {u}")
    return exp(_log_term(int(u) - 1, v, w, z))


def service_count_pmf(n_max: int, mu: float, alpha: float, beta: float) -> np.ndarray:
    """Probabilities of exactly n = 0..n_max exponential(mu) services
    completing before one Gamma(alpha, beta) interarrival elapses.

    Vectorised helper: entry n equals the k = n term of the closed-form
    exceedance sum with (v, w, z) = (mu, alpha, beta).
    """
    if n_max < 0:
        raise ValueError("n_max must be non-negative")
    for name, val in (("mu", mu), ("alpha", alpha), ("beta", beta)):
        if not (val > 0):
            raise ValueError(f"{name} must be positive, got {val}")
    k = np.arange(n_max + 1)
    from scipy.special import gammaln

    log_terms = (
        gammaln(k + alpha)
        - gammaln(k + 1)
        - gammaln(alpha)
        + k * (np.log(mu) - np.log(mu + beta))
        + alpha * (np.log(beta) - np.log(mu + beta))
    )
    return np.exp(log_terms)
