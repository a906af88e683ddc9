"""Discrete-event simulation of AIMD traffic through a finite buffer.

Three traffic generators mirror the queue models exactly: Gamma
interarrivals with instant rate feedback, a single Poisson flow whose rate
updates take effect one feedback delay later, and several delayed flows
racing for the next decision. A pluggable admission policy (solved table,
learned table, CoDel, droptail) decides at each decision epoch; every
arrival, departure, decision and rate change is recorded as an event so
traces can be audited and time-averaged.
"""

import csv
from dataclasses import dataclass, field
from enum import Enum
from math import sqrt

import numpy as np

from .rtt_multi import MultiFlowConfig, MultiFlowState, offsets
from .rtt_single import RttSingleConfig
from .smdp import PolicyTable, lookup
from .zero_rtt import Action, ZeroRttConfig

__all__ = [
    "EventKind",
    "SimEvent",
    "SimTrace",
    "Observation",
    "AdmitAllPolicy",
    "DroptailPolicy",
    "CodelPolicy",
    "TablePolicy",
    "LearnedPolicy",
    "run_replication",
    "TraceStats",
    "AggregateReport",
    "aggregate",
]


class EventKind(str, Enum):
    ARRIVAL = "arrival"
    DECISION = "decision"
    DEPARTURE = "departure"
    RATE_CHANGE = "rate_change"


@dataclass(frozen=True)
class SimEvent:
    """One timestamped simulation event. ``queue_after`` is the backlog
    once the event's effect is applied; ``rate_after`` is the effective
    aggregate packet arrival rate (packets/s) in force after the event;
    ``action`` is "admit", "drop" or "forced_drop" for arrivals and
    decisions, empty otherwise. ``flow`` is -1 for departures."""

    time: float
    kind: EventKind
    flow: int
    queue_after: int
    rate_after: float
    action: str = ""


@dataclass
class SimTrace:
    """Ordered event record of one replication plus the scenario snapshot
    that produced it."""

    events: list
    config: dict
    seed: int

    @property
    def duration(self) -> float:
        return self.events[-1].time if self.events else 0.0

    @property
    def admitted(self) -> int:
        return sum(
            1
            for e in self.events
            if e.kind in (EventKind.ARRIVAL, EventKind.DECISION) and e.action == "admit"
        )

    @property
    def departures(self) -> int:
        return sum(1 for e in self.events if e.kind == EventKind.DEPARTURE)

    @property
    def final_queue(self) -> int:
        for e in reversed(self.events):
            return e.queue_after
        return 0

    @property
    def is_conserved(self) -> bool:
        return self.admitted == self.departures + self.final_queue

    def drop_counts(self):
        policy = sum(1 for e in self.events if e.action == "drop")
        forced = sum(1 for e in self.events if e.action == "forced_drop")
        return policy, forced

    def decision_times(self, flow: int):
        return [e.time for e in self.events if e.kind == EventKind.DECISION and e.flow == flow]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["time", "kind", "flow", "queue_after", "rate_after", "action"])
            for e in self.events:
                writer.writerow(
                    [repr(e.time), e.kind.value, e.flow, e.queue_after, repr(e.rate_after), e.action]
                )


@dataclass(frozen=True)
class Observation:
    """What a policy may see at a decision epoch. ``rate`` is the model's
    rate parameter (the lookup coordinate); ``sojourn_estimate`` is the
    expected queueing delay of the arriving packet at ingress."""

    now: float
    queue: int
    buffer: int
    rate: float
    sojourn_estimate: float
    model_state: object = None


class AdmitAllPolicy:
    """Admit every packet; useful for marginal-distribution checks."""

    def decide(self, obs: Observation) -> int:
        return int(Action.ADMIT)


class DroptailPolicy:
    """Admit until the buffer is full.

    Droptail losses are silent: the loss-blind source never learns about
    them, so they leave the arrival rate untouched."""

    drops_signal_source = False

    def decide(self, obs: Observation) -> int:
        return int(Action.DROP) if obs.queue >= obs.buffer else int(Action.ADMIT)


class CodelPolicy:
    """Delay-based controller: once the ingress sojourn estimate stays
    above ``target`` for a full ``interval``, drop, then keep dropping on a
    cadence that shrinks as interval/sqrt(consecutive drops) until the
    sojourn falls below target again."""

    def __init__(self, target: float = 0.05, interval: float = 0.1):
        if not (target > 0 and interval > 0):
            raise ValueError("target and interval must be positive")
        self.target = target
        self.interval = interval
        self.first_above_time = None
        self.dropping = False
        self.count = 0
        self.drop_next = 0.0

    def decide(self, obs: Observation) -> int:
        sojourn, now = obs.sojourn_estimate, obs.now
        if sojourn < self.target:
            self.first_above_time = None
            self.dropping = False
            return int(Action.ADMIT)
        if self.first_above_time is None:
            self.first_above_time = now + self.interval
            return int(Action.ADMIT)
        if self.dropping:
            if now >= self.drop_next:
                self.count += 1
                self.drop_next = now + self.interval / sqrt(self.count)
                return int(Action.DROP)
            return int(Action.ADMIT)
        if now >= self.first_above_time:
            self.dropping = True
            self.count = 1
            self.drop_next = now + self.interval / sqrt(self.count)
            return int(Action.DROP)
        return int(Action.ADMIT)


class TablePolicy:
    """Stateless lookup into a solved (queue, rate) policy table."""

    def __init__(self, table: PolicyTable):
        self.table = table

    def decide(self, obs: Observation) -> int:
        return lookup(self.table, obs.queue, obs.rate)


class LearnedPolicy:
    """Lookup into a learned multi-flow policy via the full model state."""

    def __init__(self, policy):
        self.policy = policy

    def decide(self, obs: Observation) -> int:
        if obs.model_state is None:
            raise ValueError("learned policy needs the full model state")
        return self.policy.predict_state(obs.model_state)


def run_replication(
    model_config,
    policy,
    n_arrivals: int,
    seed: int,
    rate_bounds=None,
    overflow_halves_rate: bool = False,
) -> SimTrace:
    """Simulate one replication of ``n_arrivals`` packet arrivals.

    Dispatches on the model config type. ``rate_bounds`` clamps the flow
    rate parameter after every update (useful to pin the rate). Buffer
    overflows are recorded as forced drops and leave the rate untouched
    unless ``overflow_halves_rate`` is set. Ties between a departure and
    an arrival at the same timestamp resolve departures first (the
    continuous-time models almost surely never produce ties). The trace is
    deterministic given (config, policy, seed).
    """
    if n_arrivals < 1:
        raise ValueError("n_arrivals must be positive")
    if isinstance(model_config, ZeroRttConfig):
        return _run_zero_rtt(model_config, policy, n_arrivals, seed, rate_bounds,
                             overflow_halves_rate)
    if isinstance(model_config, RttSingleConfig):
        return _run_rtt_single(model_config, policy, n_arrivals, seed, rate_bounds,
                               overflow_halves_rate)
    if isinstance(model_config, MultiFlowConfig):
        return _run_rtt_multi(model_config, policy, n_arrivals, seed, rate_bounds,
                              overflow_halves_rate)
    raise TypeError(f"unsupported model config: {type(model_config).__name__}")


def _clamp(beta, rate_bounds):
    if rate_bounds is None:
        return beta
    lo, hi = rate_bounds
    return min(max(beta, lo), hi)


def _run_zero_rtt(config, policy, n_arrivals, seed, rate_bounds, overflow_halves_rate):
    rng = np.random.default_rng(seed)
    alpha, mu, L = config.alpha, config.mu, config.buffer
    beta = _clamp(alpha * mu, rate_bounds)  # start at an arrival rate of mu
    events = []
    t, q = 0.0, 0
    for _ in range(n_arrivals):
        t_arr = t + rng.gamma(alpha, 1.0 / beta)
        _drain(events, rng, mu, t, t_arr, q, beta / alpha)
        q = _queue_after_drain(events, q)
        t = t_arr
        obs = Observation(now=t, queue=q, buffer=L, rate=beta, sojourn_estimate=q / mu)
        action = policy.decide(obs)
        new_beta = beta
        if action == Action.ADMIT:
            if q < L:
                q += 1
                label = "admit"
                new_beta = beta + alpha
            else:
                label = "forced_drop"
                if overflow_halves_rate:
                    new_beta = beta / 2.0
        else:
            label = "drop"
            if getattr(policy, "drops_signal_source", True):
                new_beta = beta / 2.0
        new_beta = _clamp(new_beta, rate_bounds)
        events.append(SimEvent(t, EventKind.DECISION, 0, q, beta / alpha, label))
        if new_beta != beta:
            events.append(SimEvent(t, EventKind.RATE_CHANGE, 0, q, new_beta / alpha))
            beta = new_beta
    return SimTrace(events=events, config=_snapshot(config, "zero_rtt"), seed=seed)


def _queue_after_drain(events, fallback):
    return events[-1].queue_after if events else fallback


def _drain(events, rng, mu, t_from, t_to, q, rate_now):
    """Exponential-service departures on (t_from, t_to); returns t_to."""
    t = t_from
    while q > 0:
        t_dep = t + rng.exponential(1.0 / mu)
        if t_dep > t_to:  # at an exact tie the departure goes first
            break
        t = t_dep
        q -= 1
        events.append(SimEvent(t, EventKind.DEPARTURE, -1, q, rate_now))
    return t_to


def _run_rtt_single(config, policy, n_arrivals, seed, rate_bounds, overflow_halves_rate):
    rng = np.random.default_rng(seed)
    mu, L, r, step = config.mu, config.buffer, config.rtt, config.rate_step
    beta = _clamp(mu, rate_bounds)  # start at an arrival rate of mu
    events = []
    t, q = 0.0, 0
    arrivals = 0
    while arrivals < n_arrivals:
        # decision packet at time t, rate beta
        obs = Observation(now=t, queue=q, buffer=L, rate=beta, sojourn_estimate=q / mu)
        action = policy.decide(obs)
        new_beta = beta
        if action == Action.ADMIT:
            if q < L:
                q += 1
                label = "admit"
                new_beta = beta + step
            else:
                label = "forced_drop"
                if overflow_halves_rate:
                    new_beta = beta / 2.0
        else:
            label = "drop"
            if getattr(policy, "drops_signal_source", True):
                new_beta = beta / 2.0
        new_beta = _clamp(new_beta, rate_bounds)
        events.append(SimEvent(t, EventKind.DECISION, 0, q, beta, label))
        arrivals += 1
        # feedback window (t, t+r]: in-flight arrivals at the old rate
        t_gate = t + r
        now = t
        while arrivals < n_arrivals:
            t_a = now + rng.exponential(1.0 / beta)
            if t_a >= t_gate:
                break
            now = _drain(events, rng, mu, now, t_a, q, beta)
            q = _queue_after_drain(events, q)
            if q < L:
                q += 1
                label = "admit"
            else:
                label = "forced_drop"
            events.append(SimEvent(t_a, EventKind.ARRIVAL, 0, q, beta, label))
            now = t_a
            arrivals += 1
        if arrivals >= n_arrivals:
            break
        # post-window gap to the next decision arrival, still at the old rate
        t_next = t_gate + rng.exponential(1.0 / beta)
        _drain(events, rng, mu, now, t_next, q, beta)
        q = _queue_after_drain(events, q)
        t = t_next
        if new_beta != beta:
            events.append(SimEvent(t, EventKind.RATE_CHANGE, 0, q, new_beta))
            beta = new_beta
    return SimTrace(events=events, config=_snapshot(config, "rtt_single"), seed=seed)


def _run_rtt_multi(config, policy, n_arrivals, seed, rate_bounds, overflow_halves_rate):
    rng = np.random.default_rng(seed)
    mu, L = config.mu, config.buffer
    flows = config.flows
    n = config.n_flows
    rates = np.array([f.initial_rate for f in flows])
    ages = np.array([f.rtt for f in flows])
    events = []
    t, q = 0.0, 0
    incoming = 0
    arrivals = 0
    while arrivals < n_arrivals:
        state = MultiFlowState(incoming_flow=incoming, queue=q, rates=rates.copy(),
                               ages=ages.copy())
        obs = Observation(
            now=t, queue=q, buffer=L, rate=float(rates.sum()),
            sojourn_estimate=q / mu, model_state=state,
        )
        action = policy.decide(obs)
        new_rates = rates.copy()
        if action == Action.ADMIT:
            if q < L:
                q += 1
                label = "admit"
                new_rates[incoming] += config.rate_step
            else:
                label = "forced_drop"
                if overflow_halves_rate:
                    new_rates[incoming] = max(new_rates[incoming] / 2.0, 1e-9)
        else:
            label = "drop"
            if getattr(policy, "drops_signal_source", True):
                new_rates[incoming] = max(new_rates[incoming] / 2.0, 1e-9)
        if rate_bounds is not None:
            new_rates[incoming] = _clamp(new_rates[incoming], rate_bounds)
        events.append(SimEvent(t, EventKind.DECISION, incoming, q, float(rates.sum()), label))
        arrivals += 1
        # race for the next decision; in-window flows keep injecting
        c, _ = offsets(state, flows)
        clocks = c + rng.exponential(1.0 / rates)
        winner = int(np.argmin(clocks))
        sojourn = float(clocks[winner])
        next_arrival = np.where(
            c > 0, rng.exponential(1.0 / rates), np.inf
        )  # first in-window arrival per flow (relative times)
        elapsed = 0.0
        next_dep = rng.exponential(1.0 / mu) if q > 0 else np.inf
        while arrivals < n_arrivals:
            m = int(np.argmin(next_arrival))
            t_a = next_arrival[m]
            if min(t_a, next_dep) >= sojourn:
                break
            if next_dep <= t_a:
                elapsed = next_dep
                q -= 1
                events.append(
                    SimEvent(t + elapsed, EventKind.DEPARTURE, -1, q, float(rates.sum()))
                )
                next_dep = elapsed + rng.exponential(1.0 / mu) if q > 0 else np.inf
                continue
            elapsed = t_a
            if q == 0:
                next_dep = np.inf
            if q < L:
                q += 1
                label = "admit"
            else:
                label = "forced_drop"
            events.append(SimEvent(t + t_a, EventKind.ARRIVAL, m, q, float(rates.sum()), label))
            arrivals += 1
            if next_dep == np.inf:
                next_dep = elapsed + rng.exponential(1.0 / mu)
            draw = t_a + rng.exponential(1.0 / rates[m])
            next_arrival[m] = draw if draw < c[m] else np.inf
        if arrivals >= n_arrivals:
            break
        # drain the remaining stretch up to the decision epoch
        while q > 0 and next_dep < sojourn:
            q -= 1
            events.append(SimEvent(t + next_dep, EventKind.DEPARTURE, -1, q, float(rates.sum())))
            next_dep += rng.exponential(1.0 / mu)
        t += sojourn
        ages = ages + sojourn
        ages[winner] = 0.0
        if new_rates[incoming] != rates[incoming]:
            events.append(
                SimEvent(t, EventKind.RATE_CHANGE, incoming, q, float(new_rates.sum()))
            )
        rates = new_rates
        incoming = winner
    return SimTrace(events=events, config=_snapshot(config, "rtt_multi"), seed=seed)


def _snapshot(config, model: str) -> dict:
    snap = {"model": model, "mu": config.mu, "buffer": config.buffer}
    if model == "zero_rtt":
        snap["initial_rate"] = config.mu  # effective packets/s
    elif model == "rtt_single":
        snap["initial_rate"] = config.mu
    else:
        snap["initial_rate"] = float(sum(f.initial_rate for f in config.flows))
    return snap


# ---------------------------------------------------------------------------
# Stationary statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceStats:
    """Time-averaged congestion indicators over the post-burn-in stretch."""

    mean_queue: float
    mean_delay: float
    mean_rate: float
    throughput: float
    utilization: float
    policy_drops: int
    forced_drops: int
    duration: float


@dataclass(frozen=True)
class AggregateReport:
    per_trace: tuple
    pooled: TraceStats

    def to_csv(self, path) -> None:
        cols = [
            "trace", "mean_queue", "mean_delay", "mean_rate", "throughput",
            "utilization", "policy_drops", "forced_drops", "duration",
        ]
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(cols)
            rows = list(enumerate(self.per_trace)) + [("pooled", self.pooled)]
            for name, s in rows:
                writer.writerow(
                    [name, repr(s.mean_queue), repr(s.mean_delay), repr(s.mean_rate),
                     repr(s.throughput), repr(s.utilization), s.policy_drops,
                     s.forced_drops, repr(s.duration)]
                )


def _step_average(times, values, t0, t1):
    """Time average of a piecewise-constant signal holding ``values[i]``
    on [times[i], times[i+1]), over the window [t0, t1]."""
    if t1 <= t0:
        return float(values[-1])
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    ends = np.append(times[1:], t1)
    spans = np.clip(np.minimum(ends, t1) - np.maximum(times, t0), 0.0, None)
    return float(np.sum(spans * values) / (t1 - t0))


def trace_stats(trace: SimTrace, burn_in_fraction: float) -> TraceStats:
    if not (0 <= burn_in_fraction < 1):
        raise ValueError("burn_in_fraction must lie in [0, 1)")
    mu = trace.config["mu"]
    t_end = trace.duration
    t0 = burn_in_fraction * t_end
    times = [0.0] + [e.time for e in trace.events]
    queues = [0] + [e.queue_after for e in trace.events]
    rates = [trace.config["initial_rate"]] + [e.rate_after for e in trace.events]
    mean_queue = _step_average(times, queues, t0, t_end)
    mean_rate = _step_average(times, rates, t0, t_end)
    departures = sum(
        1 for e in trace.events if e.kind == EventKind.DEPARTURE and e.time >= t0
    )
    span = t_end - t0
    throughput = departures / span if span > 0 else 0.0
    policy_drops, forced_drops = trace.drop_counts()
    return TraceStats(
        mean_queue=mean_queue,
        mean_delay=mean_queue / mu,
        mean_rate=mean_rate,
        throughput=throughput,
        utilization=throughput / mu,
        policy_drops=policy_drops,
        forced_drops=forced_drops,
        duration=span,
    )


def aggregate(traces, burn_in_fraction: float = 0.2) -> AggregateReport:
    """Per-trace and duration-weighted pooled stationary statistics."""
    traces = list(traces)
    if not traces:
        raise ValueError("need at least one trace")
    stats = tuple(trace_stats(tr, burn_in_fraction) for tr in traces)
    weights = np.array([s.duration for s in stats])
    weights = weights / weights.sum()
    mu = traces[0].config["mu"]

    def wmean(attr):
        return float(np.sum(weights * np.array([getattr(s, attr) for s in stats])))

    pooled = TraceStats(
        mean_queue=wmean("mean_queue"),
        mean_delay=wmean("mean_queue") / mu,
        mean_rate=wmean("mean_rate"),
        throughput=wmean("throughput"),
        utilization=wmean("throughput") / mu,
        policy_drops=sum(s.policy_drops for s in stats),
        forced_drops=sum(s.forced_drops for s in stats),
        duration=float(sum(s.duration for s in stats)),
    )
    return AggregateReport(per_trace=stats, pooled=pooled)
