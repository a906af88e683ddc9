"""Multi-flow queue model with per-flow feedback delays.

Each flow becomes eligible for its next decision one RTT after its last
one; the remaining time span is the flow's offset. The next decision time
is the minimum over per-flow delayed exponential clocks, and between
decisions the queue is a birth-death chain whose birth rate drops as flows
leave their windows. The inter-decision law factorises into closed-form
blocks (one per winning flow and offset segment) built from matrix
exponentials and a resolvent; a trajectory sampler consistent with those
blocks feeds a tabular average-reward learner over a discretised state.
"""

from dataclasses import dataclass, field
from math import sqrt

import numpy as np

from .rtt_single import build_generator, transient_matrix
from .zero_rtt import Action

__all__ = [
    "FlowSpec",
    "MultiFlowState",
    "MultiFlowConfig",
    "KernelBlock",
    "offsets",
    "interval_generator",
    "canonical_partition",
    "kernel_block",
    "multi_reward",
    "sample_step",
    "Discretization",
    "DiscretizedPolicy",
    "learn_policy",
]


@dataclass(frozen=True)
class FlowSpec:
    """Static description of one flow: feedback delay and starting rate."""

    rtt: float
    initial_rate: float

    def __post_init__(self):
        if not (self.rtt > 0):
            raise ValueError("rtt must be positive")
        if not (self.initial_rate > 0):
            raise ValueError("initial_rate must be positive")


@dataclass
class MultiFlowState:
    """Decision-epoch snapshot: which flow's packet arrived, the queue,
    and per-flow rates and ages (time since that flow's last decision)."""

    incoming_flow: int
    queue: int
    rates: np.ndarray
    ages: np.ndarray

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=float)
        self.ages = np.asarray(self.ages, dtype=float)
        n = self.rates.size
        if not (0 <= self.incoming_flow < n):
            raise ValueError("incoming_flow out of range")
        if self.ages.size != n:
            raise ValueError("rates and ages must have equal length")
        if self.queue < 0:
            raise ValueError("queue must be non-negative")
        if np.any(self.rates <= 0):
            raise ValueError("rates must be positive")
        if np.any(self.ages < 0):
            raise ValueError("ages must be non-negative")


@dataclass(frozen=True)
class MultiFlowConfig:
    """Scenario parameters shared by the kernel, sampler and learner."""

    flows: tuple
    mu: float
    buffer: int
    eta: float
    penalty: float
    rate_step: float

    def __post_init__(self):
        if len(self.flows) < 1:
            raise ValueError("need at least one flow")
        if not (self.mu > 0 and self.eta > 0 and self.rate_step > 0):
            raise ValueError("mu, eta and rate_step must be positive")
        if self.penalty < 0:
            raise ValueError("penalty must be non-negative")
        if self.buffer < 1:
            raise ValueError("buffer must be at least 1")

    @property
    def n_flows(self) -> int:
        return len(self.flows)


@dataclass
class KernelBlock:
    """Joint mass of (next decision in (a, b], winner = target flow,
    queue transition) as a matrix over (start queue, end queue);
    ``start_queue`` is the row selected by the state and action (the
    admit increment applies before the window)."""

    interval: tuple
    target_flow: int
    matrix: np.ndarray
    start_queue: int

    @property
    def row(self) -> np.ndarray:
        return self.matrix[self.start_queue]


def offsets(state: MultiFlowState, flows):
    """Remaining window spans c_m = max(0, rtt_m - age_m) and the flow
    ordering by increasing span (ties broken by flow index)."""
    c = np.array([max(0.0, f.rtt - u) for f, u in zip(flows, state.ages)])
    order = np.argsort(c, kind="stable")
    return c, order


def interval_generator(order, c_rates, mu: float, L: int, k: int) -> np.ndarray:
    """Queue generator on the k-th offset segment (1-based).

    Flows whose window has not yet closed keep injecting admitted packets,
    so the birth rate is the sum of the rates of flows ordered at
    positions k..n; k = n + 1 gives the pure-death generator.
    """
    n = len(order)
    if not (1 <= k <= n + 1):
        raise ValueError(f"segment index must lie in 1..{n + 1}, got {k}")
    birth = float(np.sum(np.asarray(c_rates)[np.asarray(order)[k - 1 :]]))
    return build_generator(birth, mu, L)


def canonical_partition(state: MultiFlowState, flows):
    """Split (0, inf) at the distinct offsets: the segments on which the
    inter-decision law has a single closed form."""
    c, _ = offsets(state, flows)
    points = np.unique(c[c > 0])
    edges = np.concatenate(([0.0], points, [np.inf]))
    return [(float(a), float(b)) for a, b in zip(edges[:-1], edges[1:])]


def kernel_block(
    state: MultiFlowState,
    action: int,
    flows,
    mu: float,
    L: int,
    target_flow: int,
    interval,
) -> KernelBlock:
    """Closed-form block of the inter-decision transition kernel.

    ``interval`` must lie inside one offset segment (split at the offsets
    with ``canonical_partition`` and sum). The block is zero whenever the
    target flow's clock has not started by the beginning of the interval.
    The exponential-race weights are folded into scalars bounded by one so
    only non-negative-time matrix exponentials ever appear.
    """
    a, b = interval
    if not (0.0 <= a < b):
        raise ValueError("need 0 <= a < b")
    start_queue = min(state.queue + 1, L) if action == Action.ADMIT else state.queue
    c, order = offsets(state, flows)
    c_sorted = c[order]
    n = len(order)
    # l = number of clocks already running at the segment start
    l = int(np.searchsorted(c_sorted, a, side="right"))
    seg_end = c_sorted[l] if l < n else np.inf
    if b > seg_end + 1e-15:
        raise ValueError("interval straddles an offset breakpoint")
    shape = (L + 1, L + 1)
    if l == 0 or c[target_flow] > a:
        return KernelBlock(
            interval=(a, b),
            target_flow=target_flow,
            matrix=np.zeros(shape),
            start_queue=start_queue,
        )
    active = order[:l]
    rates = state.rates
    # window phase: product of segment matrix exponentials up to c_{(l)}
    window = np.eye(L + 1)
    prev = 0.0
    for k in range(l):
        span = c_sorted[k] - prev
        if span > 0:
            window = window @ transient_matrix(
                interval_generator(order, rates, mu, L, k + 1), span
            )
        prev = c_sorted[k]
    H = interval_generator(order, rates, mu, L, l + 1)
    s = float(rates[active].sum())
    M = s * np.eye(L + 1) - H

    def weighted_exp(x):
        # exp(-sum_k beta_k (x - c_k)) * e^{(x - c_(l)) H}; vanishes at inf
        if np.isinf(x):
            return np.zeros(shape)
        w = float(np.exp(-np.sum(rates[active] * (x - c[active]))))
        return w * transient_matrix(H, x - prev)

    integral = np.linalg.solve(M, weighted_exp(a) - weighted_exp(b))
    matrix = float(rates[target_flow]) * (window @ integral)
    return KernelBlock(
        interval=(a, b), target_flow=target_flow, matrix=matrix, start_queue=start_queue
    )


def multi_reward(state: MultiFlowState, action: int, config: MultiFlowConfig) -> float:
    """Delay penalty plus the square-root throughput increment of the
    incoming flow; a drop halves only that flow's rate."""
    beta = float(state.rates[state.incoming_flow])
    if action == Action.ADMIT:
        violation = (state.queue + 1) / config.mu > config.eta
        gain = sqrt(beta + config.rate_step) - sqrt(beta)
    else:
        violation = state.queue / config.mu > config.eta
        gain = sqrt(beta / 2.0) - sqrt(beta)
    return (-config.penalty if violation else 0.0) + gain


def _updated_rates(state: MultiFlowState, action: int, rate_step: float) -> np.ndarray:
    rates = state.rates.copy()
    j = state.incoming_flow
    if action == Action.ADMIT:
        rates[j] += rate_step
    else:
        # floor keeps repeated halvings from underflowing to zero
        rates[j] = max(rates[j] / 2.0, 1e-9)
    return rates


def _evolve_queue(q, boundaries, birth_rates, mu, L, horizon, rng):
    """Exact birth-death simulation over piecewise-constant birth rates,
    via a thinned uniformized event stream."""
    t = 0.0
    for (a, b), birth in zip(boundaries, birth_rates):
        lo, hi = max(a, t), min(b, horizon)
        if hi <= lo:
            continue
        total = birth + mu
        if total <= 0:
            continue
        if birth == 0.0 and q == 0:
            continue
        t_ev = lo + rng.exponential(1.0 / total)
        while t_ev < hi:
            if rng.random() < birth / total:
                q = min(q + 1, L)
            else:
                q = max(q - 1, 0)
                if q == 0 and birth == 0.0:
                    break  # absorbing: no births can refill the queue
            t_ev += rng.exponential(1.0 / total)
        if hi == horizon:
            break
    return q


def sample_step(state: MultiFlowState, action: int, config: MultiFlowConfig, rng):
    """Draw one inter-decision transition consistent with the kernel.

    The action bumps the queue (capped) immediately; the competing
    delayed-exponential clocks and the queue births all run at the rates
    in force at this epoch, and the incoming flow's rate update takes
    effect at the next epoch. Returns (next state, sojourn seconds).
    """
    flows = config.flows
    mu, L = config.mu, config.buffer
    c, order = offsets(state, flows)
    clocks = c + rng.exponential(1.0 / state.rates)
    winner = int(np.argmin(clocks))
    sojourn = float(clocks[winner])

    q0 = min(state.queue + 1, L) if action == Action.ADMIT else state.queue
    c_sorted = c[order]
    edges = np.concatenate(([0.0], c_sorted, [np.inf]))
    boundaries = list(zip(edges[:-1], edges[1:]))
    birth_rates = [
        float(state.rates[order[k:]].sum()) for k in range(len(order) + 1)
    ]
    queue = _evolve_queue(q0, boundaries, birth_rates, mu, L, sojourn, rng)

    ages = state.ages + sojourn
    ages[winner] = 0.0
    next_state = MultiFlowState(
        incoming_flow=winner,
        queue=queue,
        rates=_updated_rates(state, action, config.rate_step),
        ages=ages,
    )
    return next_state, sojourn


# ---------------------------------------------------------------------------
# Tabular policy learning over a discretised state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Discretization:
    """Finite binning of the continuous state: queue exact, rates in
    log-spaced bins, ages in {[0, r/2), [r/2, r), [r, inf)} per flow."""

    rate_min: float
    rate_max: float
    n_rate_bins: int = 16

    def __post_init__(self):
        if not (0 < self.rate_min < self.rate_max):
            raise ValueError("need 0 < rate_min < rate_max")
        if self.n_rate_bins < 2:
            raise ValueError("need at least 2 rate bins")

    @property
    def rate_edges(self) -> np.ndarray:
        return np.exp(
            np.linspace(np.log(self.rate_min), np.log(self.rate_max), self.n_rate_bins + 1)
        )

    def rate_bin(self, rate: float) -> int:
        edges = self.rate_edges
        return int(np.clip(np.searchsorted(edges, rate, side="right") - 1, 0, self.n_rate_bins - 1))

    def rate_representative(self, bin_index: int) -> float:
        edges = self.rate_edges
        return float(np.sqrt(edges[bin_index] * edges[bin_index + 1]))

    @staticmethod
    def age_bin(age: float, rtt: float) -> int:
        if age < rtt / 2.0:
            return 0
        if age < rtt:
            return 1
        return 2

    def state_key(self, state: MultiFlowState, flows) -> tuple:
        rates = tuple(self.rate_bin(r) for r in state.rates)
        ages = tuple(self.age_bin(u, f.rtt) for u, f in zip(state.ages, flows))
        return (state.incoming_flow, state.queue, rates, ages)


@dataclass
class DiscretizedPolicy:
    """Greedy policy over discretised states with Q-values and visit
    counts; unseen states fall back to the immediate-reward maximiser."""

    discretization: Discretization
    config: MultiFlowConfig
    q_values: dict  # state key -> np.ndarray of 2 action values
    visits: dict  # state key -> int
    episodes: int
    seed: int
    gain_estimate: float

    def action_for_key(self, key: tuple):
        q = self.q_values.get(key)
        if q is None:
            return None
        return int(np.argmax(q)) if q[Action.ADMIT] < q[Action.DROP] else int(Action.ADMIT)

    def predict_state(self, state: MultiFlowState) -> int:
        key = self.discretization.state_key(state, self.config.flows)
        action = self.action_for_key(key)
        if action is None:
            rewards = [multi_reward(state, a, self.config) for a in (Action.ADMIT, Action.DROP)]
            action = int(np.argmax(rewards))
        return action

    def undervisited(self, threshold: int = 100) -> int:
        """Number of encountered states seen fewer than ``threshold`` times."""
        return sum(1 for v in self.visits.values() if v < threshold)

    def to_csv(self, path) -> None:
        disc = self.discretization
        with open(path, "w") as f:
            f.write(f"# episodes={self.episodes}\n")
            f.write(f"# seed={self.seed}\n")
            f.write(f"# gain_estimate={self.gain_estimate!r}\n")
            f.write(f"# n_flows={self.config.n_flows}\n")
            f.write(f"# rate_min={disc.rate_min!r}\n")
            f.write(f"# rate_max={disc.rate_max!r}\n")
            f.write(f"# n_rate_bins={disc.n_rate_bins}\n")
            edges = ";".join(repr(float(e)) for e in disc.rate_edges)
            f.write(f"# rate_bin_edges={edges}\n")
            f.write("# age_bins=0:[0,rtt/2) 1:[rtt/2,rtt) 2:[rtt,inf)\n")
            f.write("incoming_flow,queue,rate_bins,age_bins,action,q_admit,q_drop,visits\n")
            for key in sorted(self.q_values):
                flow, queue, rates, ages = key
                q = self.q_values[key]
                f.write(
                    f"{flow},{queue},{'|'.join(map(str, rates))},{'|'.join(map(str, ages))},"
                    f"{self.action_for_key(key)},{float(q[0])!r},{float(q[1])!r},"
                    f"{self.visits.get(key, 0)}\n"
                )

    @classmethod
    def from_csv(cls, path, config: MultiFlowConfig) -> "DiscretizedPolicy":
        meta = {}
        q_values = {}
        visits = {}
        with open(path) as f:
            for line in f:
                line = line.strip()
                if not line or line.startswith("incoming_flow"):
                    continue
                if line.startswith("#"):
                    key, _, val = line[1:].strip().partition("=")
                    meta[key.strip()] = val.strip()
                    continue
                flow, queue, rates, ages, _, q0, q1, v = line.split(",")
                key = (
                    int(flow),
                    int(queue),
                    tuple(int(x) for x in rates.split("|")),
                    tuple(int(x) for x in ages.split("|")),
                )
                q_values[key] = np.array([float(q0), float(q1)])
                visits[key] = int(v)
        disc = Discretization(
            rate_min=float(meta["rate_min"]),
            rate_max=float(meta["rate_max"]),
            n_rate_bins=int(meta["n_rate_bins"]),
        )
        return cls(
            discretization=disc,
            config=config,
            q_values=q_values,
            visits=visits,
            episodes=int(meta["episodes"]),
            seed=int(meta["seed"]),
            gain_estimate=float(meta["gain_estimate"]),
        )


def initial_state(config: MultiFlowConfig) -> MultiFlowState:
    """Start as if every flow just had a decision-free first packet: ages
    equal to the RTTs, queue empty, flow 0 incoming."""
    return MultiFlowState(
        incoming_flow=0,
        queue=0,
        rates=np.array([f.initial_rate for f in config.flows]),
        ages=np.array([f.rtt for f in config.flows]),
    )


def learn_policy(
    config: MultiFlowConfig,
    discretization: Discretization,
    episodes: int,
    seed: int,
    learning_rate: float = 0.1,
    gain_rate: float = 0.01,
) -> DiscretizedPolicy:
    """Average-reward tabular learning over sampled transitions.

    Rewards are scaled to rates (reward / sojourn); the running gain
    estimate is subtracted so the Q-values are relative. Exploration is
    epsilon-greedy, decaying linearly from 1 to 0.05 over the first half
    of the transitions. Deterministic for a fixed seed.
    """
    if episodes < 1:
        raise ValueError("episodes must be positive")
    rng = np.random.default_rng(seed)
    flows = config.flows
    q_values = {}
    visits = {}
    gain = 0.0
    state = initial_state(config)
    key = discretization.state_key(state, flows)
    half = max(episodes // 2, 1)
    for step in range(episodes):
        q = q_values.get(key)
        if q is None:
            q = np.zeros(2)
            q_values[key] = q
        epsilon = max(1.0 - 0.95 * step / half, 0.05)
        if rng.random() < epsilon:
            action = int(rng.integers(2))
        else:
            action = int(np.argmax(q)) if q[0] < q[1] else int(Action.ADMIT)
        reward = multi_reward(state, action, config)
        next_state, sojourn = sample_step(state, action, config, rng)
        next_key = discretization.state_key(next_state, flows)
        next_q = q_values.get(next_key)
        next_best = float(next_q.max()) if next_q is not None else 0.0
        rate_reward = reward / sojourn
        target = rate_reward - gain + next_best
        greedy = action == (int(np.argmax(q)) if q[0] < q[1] else int(Action.ADMIT))
        delta = target - q[action]
        q[action] += learning_rate * delta
        if greedy:
            gain += gain_rate * (rate_reward - gain + next_best - float(q.max()))
        visits[key] = visits.get(key, 0) + 1
        state, key = next_state, next_key
    return DiscretizedPolicy(
        discretization=discretization,
        config=config,
        q_values=q_values,
        visits=visits,
        episodes=episodes,
        seed=seed,
        gain_estimate=gain,
    )
