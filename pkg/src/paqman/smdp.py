"""Average-reward SMDP solving via the data-transformation method.

A semi-Markov decision process with finite state space is first converted
to an equivalent discrete-time MDP (rewards become reward rates, transition
rows gain a self-loop remainder) and then solved with relative value
iteration under the span-seminorm stopping rule.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from sklearn.base import BaseEstimator

from .grids import RateGrid

__all__ = [
    "ADMIT",
    "DROP",
    "TransitionModel",
    "TransformedMdp",
    "PolicyTable",
    "transform",
    "solve",
    "lookup",
    "SmdpPolicySolver",
]

ADMIT = 0
DROP = 1

# Q-value ties break toward admit (action 0), the throughput-preserving action.
_TIE_TOL = 1e-12


class TransitionModel:
    """Contract for an enumerable SMDP.

    Concrete models expose a finite indexable state space and, per
    (state, action), a successor distribution, a reward and an expected
    sojourn time. ``build_arrays`` may be overridden with a vectorised
    builder; the default loops over ``transition_row``.
    """

    n_states: int
    n_actions: int = 2

    def transition_row(self, state: int, action: int):
        """Return (successor_indices, probabilities) for one (s, a)."""
        raise NotImplementedError

    def reward(self, state: int, action: int) -> float:
        raise NotImplementedError

    def sojourn(self, state: int, action: int) -> float:
        raise NotImplementedError

    def build_arrays(self):
        """Return (P, R, tau): P a list of csr matrices (one per action),
        R and tau arrays of shape (n_states, n_actions)."""
        S, A = self.n_states, self.n_actions
        R = np.empty((S, A))
        tau = np.empty((S, A))
        P = []
        for a in range(A):
            rows, cols, vals = [], [], []
            for s in range(S):
                idx, p = self.transition_row(s, a)
                rows.extend([s] * len(idx))
                cols.extend(idx)
                vals.extend(p)
                R[s, a] = self.reward(s, a)
                tau[s, a] = self.sojourn(s, a)
            P.append(sparse.csr_matrix((vals, (rows, cols)), shape=(S, S)))
        return P, R, tau


@dataclass
class TransformedMdp:
    """Discrete-time view of an SMDP produced by ``transform``."""

    P: list  # csr matrix per action
    R: np.ndarray  # (S, A) reward rates
    tau: float  # uniform step length used in the transformation
    sojourn: np.ndarray  # (S, A) original sojourn times

    @property
    def n_states(self) -> int:
        return self.R.shape[0]

    @property
    def n_actions(self) -> int:
        return self.R.shape[1]


@dataclass
class PolicyTable:
    """Immutable solved policy: one action per state plus solver metadata."""

    actions: np.ndarray  # int8, 0=admit, 1=drop
    gain: float  # long-run reward per second
    bias: np.ndarray  # relative values, reference state at 0
    residual_span: float
    iterations: int
    converged: bool
    rate_values: Optional[np.ndarray] = None  # packets/s, queue-model layout
    buffer: Optional[int] = None

    def __post_init__(self):
        self.actions = np.asarray(self.actions, dtype=np.int8)
        self.actions.setflags(write=False)
        self.bias = np.asarray(self.bias, dtype=float)
        self.bias.setflags(write=False)

    def state_index(self, rate_index: int, queue: int) -> int:
        if self.buffer is None:
            raise ValueError("policy has no (rate, queue) layout")
        return rate_index * (self.buffer + 1) + queue

    def action_grid(self) -> np.ndarray:
        """Actions as a (n_rates, buffer + 1) grid."""
        if self.buffer is None or self.rate_values is None:
            raise ValueError("policy has no (rate, queue) layout")
        return np.asarray(self.actions).reshape(len(self.rate_values), self.buffer + 1)

    def predict(self, states: Sequence) -> np.ndarray:
        """Vectorised lookup over (queue, rate) pairs."""
        return np.array([lookup(self, q, b) for q, b in states], dtype=np.int8)

    def to_csv(self, path) -> None:
        if self.buffer is None or self.rate_values is None:
            raise ValueError("only (rate, queue)-shaped policies serialise to CSV")
        n_q = self.buffer + 1
        with open(path, "w") as f:
            f.write(f"# gain={self.gain!r}\n")
            f.write(f"# residual_span={self.residual_span!r}\n")
            f.write(f"# iterations={self.iterations}\n")
            f.write(f"# converged={int(self.converged)}\n")
            f.write(f"# buffer={self.buffer}\n")
            f.write("rate_index,rate_value_pkts_per_s,queue,action,bias\n")
            for i, rv in enumerate(self.rate_values):
                for q in range(n_q):
                    s = i * n_q + q
                    f.write(
                        f"{i},{float(rv)!r},{q},{int(self.actions[s])},{float(self.bias[s])!r}\n"
                    )

    @classmethod
    def from_csv(cls, path) -> "PolicyTable":
        meta = {}
        rows = []
        with open(path) as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    key, _, val = line[1:].strip().partition("=")
                    meta[key.strip()] = val.strip()
                    continue
                if line.startswith("rate_index"):
                    continue
                rows.append(line.split(","))
        buffer = int(meta["buffer"])
        n_q = buffer + 1
        n_states = len(rows)
        actions = np.zeros(n_states, dtype=np.int8)
        bias = np.zeros(n_states)
        rate_values = np.zeros(n_states // n_q)
        for ri, rv, q, act, b in rows:
            s = int(ri) * n_q + int(q)
            rate_values[int(ri)] = float(rv)
            actions[s] = int(act)
            bias[s] = float(b)
        return cls(
            actions=actions,
            gain=float(meta["gain"]),
            bias=bias,
            residual_span=float(meta["residual_span"]),
            iterations=int(meta["iterations"]),
            converged=bool(int(meta["converged"])),
            rate_values=rate_values,
            buffer=buffer,
        )


def transform(model: TransitionModel, tau_fraction: float = 0.5) -> TransformedMdp:
    """Convert an SMDP to an equivalent discrete-time MDP.

    The step length is ``tau = tau_fraction * min(s,a) sojourn(s, a)``.
    Rewards become reward rates R/sojourn; off-diagonal transition mass is
    scaled by tau/sojourn and the diagonal absorbs the remainder, so every
    transformed row stays a probability vector.
    """
    if not (0 < tau_fraction <= 1):
        raise ValueError(f"tau_fraction must lie in (0, 1], got {tau_fraction}")
    P, R, tau_sa = model.build_arrays()
    if np.any(tau_sa <= 0):
        raise ValueError("all sojourn times must be positive")
    tau = tau_fraction * float(tau_sa.min())
    R_bar = R / tau_sa
    S = model.n_states
    P_bar = []
    for a in range(model.n_actions):
        scale = tau / tau_sa[:, a]
        Pa = sparse.diags(scale) @ P[a]
        Pa = Pa + sparse.diags(1.0 - scale)
        P_bar.append(sparse.csr_matrix(Pa))
    return TransformedMdp(P=P_bar, R=R_bar, tau=tau, sojourn=tau_sa)


def solve(
    mdp: TransformedMdp,
    tolerance: float = 1e-6,
    max_iterations: int = 100_000,
    rate_values: Optional[np.ndarray] = None,
    buffer: Optional[int] = None,
) -> PolicyTable:
    """Relative value iteration on the transformed MDP.

    Stops when the span seminorm of successive value differences drops
    below ``tolerance``; the midpoint of that difference is the gain
    (reward per second, since transformed rewards are rates). The bias is
    normalised to the reference state 0 every sweep to prevent drift.
    """
    S, A = mdp.n_states, mdp.n_actions
    V = np.zeros(S)
    span = np.inf
    Q = np.empty((S, A))
    it = 0
    for it in range(1, max_iterations + 1):
        for a in range(A):
            Q[:, a] = mdp.R[:, a] + mdp.P[a] @ V
        V_new = Q.max(axis=1)
        diff = V_new - V
        span = float(diff.max() - diff.min())
        gain = 0.5 * float(diff.max() + diff.min())
        V = V_new - V_new[0]
        if span < tolerance:
            break
    # lowest action index whose Q-value is within the tie tolerance of the best
    best = Q.max(axis=1)
    actions = (Q >= best[:, None] - _TIE_TOL).argmax(axis=1).astype(np.int8)
    return PolicyTable(
        actions=actions,
        gain=gain,
        bias=V.copy(),
        residual_span=span,
        iterations=it,
        converged=span < tolerance,
        rate_values=None if rate_values is None else np.asarray(rate_values, dtype=float),
        buffer=buffer,
    )


def lookup(policy: PolicyTable, queue: int, beta: float) -> int:
    """Action for a (queue, rate) pair; the rate is snapped to the policy
    grid and the queue clamped to [0, buffer]."""
    if policy.buffer is None or policy.rate_values is None:
        raise ValueError("policy has no (rate, queue) layout")
    grid = RateGrid(policy.rate_values)
    i = grid.snap(beta)
    q = min(max(int(queue), 0), policy.buffer)
    return int(policy.actions[policy.state_index(i, q)])


class SmdpPolicySolver(BaseEstimator):
    """Estimator-style front end: fit a TransitionModel, predict actions.

    Parameters mirror ``transform``/``solve``; after ``fit`` the solved
    table is available as ``policy_``.
    """

    def __init__(self, tau_fraction: float = 0.5, tolerance: float = 1e-6,
                 max_iterations: int = 100_000):
        self.tau_fraction = tau_fraction
        self.tolerance = tolerance
        self.max_iterations = max_iterations

    def fit(self, model: TransitionModel, y=None):
        mdp = transform(model, self.tau_fraction)
        rate_values = getattr(model, "rate_values", None)
        buffer = getattr(model, "buffer", None)
        self.policy_ = solve(
            mdp,
            tolerance=self.tolerance,
            max_iterations=self.max_iterations,
            rate_values=rate_values,
            buffer=buffer,
        )
        return self

    def predict(self, states) -> np.ndarray:
        return self.policy_.predict(states)
