"""Negligible-feedback queue model: Gamma interarrivals, exponential service.

State is (queue length, arrival rate parameter). Admitting a packet bumps
the queue and additively increases the rate parameter; dropping halves it.
Between two arrivals the number of completed services follows the
closed-form Gamma race law, which gives every transition row.
"""

from dataclasses import dataclass
from enum import IntEnum
from math import sqrt

import numpy as np
from scipy import sparse

from .gamma_math import service_count_pmf
from .grids import RateGrid
from .smdp import TransitionModel

__all__ = [
    "Action",
    "ZeroRttState",
    "ZeroRttConfig",
    "admit_rate_update",
    "drop_rate_update",
    "ZeroRttModel",
]


class Action(IntEnum):
    ADMIT = 0
    DROP = 1


@dataclass(frozen=True)
class ZeroRttState:
    queue: int
    rate_param: float  # beta, 1/seconds

    def __post_init__(self):
        if self.queue < 0:
            raise ValueError("queue must be non-negative")
        if not (self.rate_param > 0):
            raise ValueError("rate_param must be positive")


@dataclass(frozen=True)
class ZeroRttConfig:
    """Model parameters: Gamma shape, service rate (packets/s), buffer size,
    target delay (s), delay-violation penalty, and the admissible rate grid."""

    alpha: float
    mu: float
    buffer: int
    eta: float
    penalty: float
    grid: RateGrid

    def __post_init__(self):
        if not (self.alpha > 0 and self.mu > 0 and self.eta > 0 and self.penalty > 0):
            raise ValueError("alpha, mu, eta and penalty must be positive")
        if self.buffer < 1:
            raise ValueError("buffer must be at least 1")


def admit_rate_update(beta: float, alpha: float) -> float:
    """Rate parameter after an admit: beta + alpha (unit additive increase
    of the effective rate beta/alpha)."""
    if not (beta > 0 and alpha > 0):
        raise ValueError("beta and alpha must be positive")
    return beta + alpha


def drop_rate_update(beta: float) -> float:
    """Rate parameter after a drop: beta / 2 (multiplicative decrease)."""
    if not (beta > 0):
        raise ValueError("beta must be positive")
    return beta / 2.0


class ZeroRttModel(TransitionModel):
    """Enumerable SMDP over (queue, rate-grid index) states.

    State index convention: ``rate_index * (buffer + 1) + queue``.
    Transition rows, rewards and sojourns are exact; off-grid rate updates
    are represented by two-point stochastic rounding in log space (see
    ``RateGrid.interpolate``). With the buffer full, an admit still follows the
    admit rate branch but the intermediate queue is capped at the buffer.
    """

    def __init__(self, config: ZeroRttConfig):
        self.config = config
        self.buffer = config.buffer
        self.rate_values = config.grid.values
        self.n_states = len(config.grid) * (config.buffer + 1)
        # per rate index and action: (grid index, weight) pairs representing
        # the updated rate by stochastic rounding on the grid
        grid = config.grid
        self._rate_targets = [
            (
                grid.interpolate(admit_rate_update(beta, config.alpha)),
                grid.interpolate(drop_rate_update(beta)),
            )
            for beta in grid.values
        ]

    # -- state indexing -------------------------------------------------

    def state_index(self, rate_index: int, queue: int) -> int:
        return rate_index * (self.buffer + 1) + queue

    def state_of(self, index: int) -> ZeroRttState:
        n_q = self.buffer + 1
        return ZeroRttState(queue=index % n_q, rate_param=float(self.rate_values[index // n_q]))

    # -- SMDP contract --------------------------------------------------

    def transition_row(self, state: int, action: int):
        n_q = self.buffer + 1
        i, q = divmod(state, n_q)
        # queue immediately after the action, before any service
        q_mid = min(q + 1, self.buffer) if action == Action.ADMIT else q
        idx_parts, prob_parts = [], []
        for j, weight in self._rate_targets[i][action]:
            beta_next = float(self.rate_values[j])
            # P(exactly n services before the next arrival), n = 0..q_mid-1;
            # the empty-queue entry absorbs the complementary mass so the
            # row sums to one exactly.
            if q_mid > 0:
                pmf = service_count_pmf(q_mid - 1, self.config.mu, self.config.alpha, beta_next)
            else:
                pmf = np.empty(0)
            probs = np.empty(q_mid + 1)
            probs[1:] = pmf[::-1]  # q' = q_mid - n for n services
            probs[0] = max(1.0 - pmf.sum(), 0.0)
            idx_parts.append(j * n_q + np.arange(q_mid + 1))
            prob_parts.append(weight * probs)
        return np.concatenate(idx_parts), np.concatenate(prob_parts)

    def reward(self, state: int, action: int) -> float:
        n_q = self.buffer + 1
        i, q = divmod(state, n_q)
        beta = float(self.rate_values[i])
        alpha = self.config.alpha
        if action == Action.ADMIT:
            violation = (q + 1) / self.config.mu > self.config.eta
            gain = sqrt((beta + alpha) / alpha) - sqrt(beta / alpha)
        else:
            violation = q / self.config.mu > self.config.eta
            gain = sqrt(beta / (2 * alpha)) - sqrt(beta / alpha)
        return (-self.config.penalty if violation else 0.0) + gain

    def sojourn(self, state: int, action: int) -> float:
        n_q = self.buffer + 1
        i = state // n_q
        beta = float(self.rate_values[i])
        alpha = self.config.alpha
        if action == Action.ADMIT:
            return alpha / (beta + alpha)
        return 2 * alpha / beta

    # -- vectorised builder ---------------------------------------------

    def build_arrays(self):
        cfg = self.config
        n_q = self.buffer + 1
        n_r = len(self.rate_values)
        S = self.n_states
        R = np.empty((S, 2))
        tau = np.empty((S, 2))
        P = []
        for a in (Action.ADMIT, Action.DROP):
            rows = []
            cols = []
            vals = []
            for i in range(n_r):
                for j, weight in self._rate_targets[i][a]:
                    beta_next = float(self.rate_values[j])
                    # shared pmf table: exactly n services before next arrival
                    pmf = service_count_pmf(self.buffer, cfg.mu, cfg.alpha, beta_next)
                    csum = np.concatenate(([0.0], np.cumsum(pmf)))
                    for q in range(n_q):
                        s = i * n_q + q
                        q_mid = min(q + 1, self.buffer) if a == Action.ADMIT else q
                        probs = np.empty(q_mid + 1)
                        probs[1:] = pmf[:q_mid][::-1]
                        probs[0] = max(1.0 - csum[q_mid], 0.0)
                        rows.extend([s] * (q_mid + 1))
                        cols.extend(j * n_q + np.arange(q_mid + 1))
                        vals.extend(weight * probs)
            P.append(sparse.csr_matrix((vals, (rows, cols)), shape=(S, S)))
        for s in range(S):
            for a in (Action.ADMIT, Action.DROP):
                R[s, a] = self.reward(s, a)
                tau[s, a] = self.sojourn(s, a)
        return P, R, tau
