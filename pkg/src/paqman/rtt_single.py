"""Single-flow queue model with a feedback delay of one round-trip time.

Decisions are taken on packet arrivals spaced at least one RTT apart.
During the RTT window the source still sends at the pre-decision rate and
every arrival is admitted while there is room, so the queue evolves as a
birth-death chain; after the window only departures occur until the next
decision packet arrives an Exp(beta) time later. Composing the two phases
gives a closed-form inter-decision transition matrix.
"""

from dataclasses import dataclass
from math import sqrt

import numpy as np
from scipy import sparse, stats

from .grids import RateGrid
from .smdp import TransitionModel
from .zero_rtt import Action

__all__ = [
    "RttState",
    "RttSingleConfig",
    "build_generator",
    "transient_matrix",
    "decision_transition_matrix",
    "RttSingleModel",
]


@dataclass(frozen=True)
class RttState:
    queue: int
    rate_param: float  # beta, 1/seconds

    def __post_init__(self):
        if self.queue < 0:
            raise ValueError("queue must be non-negative")
        if not (self.rate_param > 0):
            raise ValueError("rate_param must be positive")


@dataclass(frozen=True)
class RttSingleConfig:
    """Model parameters: service rate (packets/s), buffer size, target
    delay (s), delay-violation penalty, round-trip time (s), admissible
    rate grid and the additive rate step applied after an admit."""

    mu: float
    buffer: int
    eta: float
    penalty: float
    rtt: float
    grid: RateGrid
    rate_step: float

    def __post_init__(self):
        if not (self.mu > 0 and self.eta > 0 and self.penalty > 0):
            raise ValueError("mu, eta and penalty must be positive")
        if not (self.rtt >= 0):
            raise ValueError("rtt must be non-negative")
        if not (self.rate_step > 0):
            raise ValueError("rate_step must be positive")
        if self.buffer < 1:
            raise ValueError("buffer must be at least 1")


def build_generator(arrival_rate: float, mu: float, L: int) -> np.ndarray:
    """Birth-death intensity matrix on queue lengths 0..L.

    Births at ``arrival_rate`` (suppressed at the full buffer), deaths at
    ``mu`` (suppressed at the empty queue); ``arrival_rate=0`` gives the
    pure-death generator of the post-window phase.
    """
    if L < 1:
        raise ValueError("L must be at least 1")
    if not (mu > 0):
        raise ValueError("mu must be positive")
    if arrival_rate < 0:
        raise ValueError("arrival_rate must be non-negative")
    n = L + 1
    gen = np.zeros((n, n))
    for q in range(n):
        if q < L:
            gen[q, q + 1] = arrival_rate
        if q > 0:
            gen[q, q - 1] = mu
        gen[q, q] = -gen[q].sum()
    return gen


def transient_matrix(gen: np.ndarray, t: float) -> np.ndarray:
    """e^{t gen} for a CTMC generator, by uniformization.

    The Poisson mixture over powers of the uniformized stochastic matrix
    is truncated once the remaining tail mass drops below 1e-12, which
    keeps every row stochastic to the same accuracy.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    n = gen.shape[0]
    rate = float(np.max(-np.diag(gen)))
    if t == 0 or rate == 0:
        return np.eye(n)
    lam = rate * t
    K = stats.poisson.isf(1e-12, lam)
    K = int(K) + 1
    U = np.eye(n) + gen / rate  # uniformized jump chain
    weights = stats.poisson.pmf(np.arange(K + 1), lam)
    result = weights[0] * np.eye(n)
    power = np.eye(n)
    for k in range(1, K + 1):
        power = power @ U
        result += weights[k] * power
    # renormalise the truncated tail onto the diagonal
    result += np.diag(1.0 - result.sum(axis=1))
    return result


def decision_transition_matrix(beta: float, mu: float, L: int, r: float) -> np.ndarray:
    """Queue-length transition matrix between consecutive decision epochs.

    Equals beta * e^{r G_i} (beta I - G)^{-1}: the birth-death window of
    length r followed by the pure-death phase integrated against the
    Exp(beta) time to the next decision. The resolvent is applied by
    back-substitution on its lower-bidiagonal structure, never inverted.
    """
    if not (beta > 0):
        raise ValueError("beta must be positive")
    E = transient_matrix(build_generator(beta, mu, L), r)
    # columns of Z = E (beta I - G)^{-1}; the pure-death resolvent couples
    # column j only to column j + 1
    Z = np.empty_like(E)
    Z[:, L] = E[:, L] / (beta + mu)
    for j in range(L - 1, -1, -1):
        diag = beta if j == 0 else beta + mu
        Z[:, j] = (E[:, j] + mu * Z[:, j + 1]) / diag
    return beta * Z


class RttSingleModel(TransitionModel):
    """Enumerable SMDP over (queue, rate-grid index) states with feedback
    delay.

    State index convention matches the zero-feedback model:
    ``rate_index * (buffer + 1) + queue``. Both the RTT window and the
    exponential horizon use the rate in force at the decision epoch; the
    action's rate change takes effect only at the next epoch.
    """

    def __init__(self, config: RttSingleConfig):
        self.config = config
        self.buffer = config.buffer
        self.rate_values = config.grid.values
        self.n_states = len(config.grid) * (config.buffer + 1)
        # stochastic rounding of the rate updates onto the grid
        grid = config.grid
        self._rate_targets = [
            (
                grid.interpolate(beta + config.rate_step),
                grid.interpolate(beta / 2.0),
            )
            for beta in grid.values
        ]
        self._decision_matrices = {}

    # -- state indexing -------------------------------------------------

    def state_index(self, rate_index: int, queue: int) -> int:
        return rate_index * (self.buffer + 1) + queue

    def state_of(self, index: int) -> RttState:
        n_q = self.buffer + 1
        return RttState(queue=index % n_q, rate_param=float(self.rate_values[index // n_q]))

    def decision_matrix(self, rate_index: int) -> np.ndarray:
        """Cached P_i for the grid rate at ``rate_index``."""
        P = self._decision_matrices.get(rate_index)
        if P is None:
            cfg = self.config
            P = decision_transition_matrix(
                float(self.rate_values[rate_index]), cfg.mu, cfg.buffer, cfg.rtt
            )
            P.setflags(write=False)
            self._decision_matrices[rate_index] = P
        return P

    # -- SMDP contract --------------------------------------------------

    def transition_row(self, state: int, action: int):
        n_q = self.buffer + 1
        i, q = divmod(state, n_q)
        q_mid = min(q + 1, self.buffer) if action == Action.ADMIT else q
        row = self.decision_matrix(i)[q_mid]
        targets = self._rate_targets[i][action]
        idx = np.concatenate([j * n_q + np.arange(n_q) for j, _ in targets])
        probs = np.concatenate([w * row for _, w in targets])
        return idx, probs

    def reward(self, state: int, action: int) -> float:
        cfg = self.config
        n_q = self.buffer + 1
        i, q = divmod(state, n_q)
        beta = float(self.rate_values[i])
        if action == Action.ADMIT:
            violation = (q + 1) / cfg.mu > cfg.eta
            gain = sqrt(beta + cfg.rate_step) - sqrt(beta)
        else:
            violation = q / cfg.mu > cfg.eta
            gain = sqrt(beta / 2.0) - sqrt(beta)
        return (-cfg.penalty if violation else 0.0) + gain

    def sojourn(self, state: int, action: int) -> float:
        i = state // (self.buffer + 1)
        return self.config.rtt + 1.0 / float(self.rate_values[i])

    # -- vectorised builder ---------------------------------------------

    def build_arrays(self):
        n_q = self.buffer + 1
        n_r = len(self.rate_values)
        S = self.n_states
        R = np.empty((S, 2))
        tau = np.empty((S, 2))
        P = []
        # queue-row selection per action: admit reads row min(q+1, L)
        admit_rows = np.minimum(np.arange(n_q) + 1, self.buffer)
        drop_rows = np.arange(n_q)
        for a, row_sel in ((Action.ADMIT, admit_rows), (Action.DROP, drop_rows)):
            blocks = sparse.lil_matrix((S, S))
            for i in range(n_r):
                block = self.decision_matrix(i)[row_sel]
                for j, w in self._rate_targets[i][a]:
                    blocks[i * n_q : (i + 1) * n_q, j * n_q : (j + 1) * n_q] = w * block
            P.append(blocks.tocsr())
        for s in range(S):
            for a in (Action.ADMIT, Action.DROP):
                R[s, a] = self.reward(s, a)
                tau[s, a] = self.sojourn(s, a)
        return P, R, tau
