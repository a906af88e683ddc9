"""Scenario configuration for experiments.

Configs are flat text files with dotted keys (``section.key = value``),
one assignment per line, parseable from any language. A scenario pins the
queue model, the link, the traffic source, the reward, the discretisation
and the run protocol; a SHA-256 hash of the canonical key/value listing is
stamped into every output file for provenance.
"""

import hashlib
from dataclasses import dataclass, field, replace

from .grids import DEFAULT_PACKET_SIZE_BITS, RateGrid
from .rtt_multi import Discretization, FlowSpec, MultiFlowConfig
from .rtt_single import RttSingleConfig
from .zero_rtt import ZeroRttConfig

__all__ = ["ScenarioError", "ScenarioConfig", "parse_dotted_keys"]

MODELS = ("zero_rtt", "rtt_single", "rtt_multi")

FULL_SCALE_REPLICATIONS = 200
FULL_SCALE_ARRIVALS = 50_000


class ScenarioError(ValueError):
    """Invalid scenario file or inconsistent parameter combination."""


def parse_dotted_keys(text: str) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment."""
    mapping = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ScenarioError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise ScenarioError(f"line {lineno}: empty key or value")
        if key in mapping:
            raise ScenarioError(f"line {lineno}: duplicate key {key!r}")
        mapping[key] = value
    return mapping


def _parse_flows(value: str):
    """Flows as comma-separated ``rtt_seconds:initial_rate_pkts`` pairs."""
    flows = []
    for part in value.split(","):
        rtt, sep, rate = part.strip().partition(":")
        if not sep:
            raise ScenarioError(f"flow spec {part!r} must be rtt_seconds:rate_pkts")
        try:
            flows.append(FlowSpec(rtt=float(rtt), initial_rate=float(rate)))
        except ValueError as exc:
            raise ScenarioError(f"bad flow spec {part!r}: {exc}") from None
    return tuple(flows)


@dataclass(frozen=True)
class ScenarioConfig:
    """One experiment scenario. Rates in the file are effective packet
    rates; link speed is given in Mbit/s and converted via the packet
    size."""

    model: str
    service_rate_mbit: float
    buffer_packets: int
    packet_size_bits: float = DEFAULT_PACKET_SIZE_BITS
    alpha: float = 1.5
    rate_min_mbit: float = 0.01
    rate_max_mbit: float = 12.0
    rtt_seconds: float = 0.002
    rate_step_pkts: float = 1.5
    flows: tuple = ()
    eta_seconds: float = 0.05
    penalty: float = 1e6
    rate_grid_size: int = 64
    rate_bins: int = 16
    age_bins: int = 3
    replications: int = 20
    arrivals_per_run: int = 10_000
    seed: int = 0
    burn_in_fraction: float = 0.2

    _KEYS = {
        "model": ("model", str),
        "link.service_rate_mbit": ("service_rate_mbit", float),
        "link.packet_size_bits": ("packet_size_bits", float),
        "link.buffer_packets": ("buffer_packets", int),
        "traffic.alpha": ("alpha", float),
        "traffic.rate_min_mbit": ("rate_min_mbit", float),
        "traffic.rate_max_mbit": ("rate_max_mbit", float),
        "traffic.rtt_seconds": ("rtt_seconds", float),
        "traffic.rate_step_pkts": ("rate_step_pkts", float),
        "traffic.flows": ("flows", _parse_flows),
        "reward.eta_seconds": ("eta_seconds", float),
        "reward.penalty": ("penalty", float),
        "discretization.rate_grid_size": ("rate_grid_size", int),
        "discretization.rate_bins": ("rate_bins", int),
        "discretization.age_bins": ("age_bins", int),
        "run.replications": ("replications", int),
        "run.arrivals_per_run": ("arrivals_per_run", int),
        "run.seed": ("seed", int),
        "run.burn_in_fraction": ("burn_in_fraction", float),
    }

    def __post_init__(self):
        if self.model not in MODELS:
            raise ScenarioError(f"model must be one of {MODELS}, got {self.model!r}")
        positive = {
            "service_rate_mbit": self.service_rate_mbit,
            "packet_size_bits": self.packet_size_bits,
            "alpha": self.alpha,
            "rate_min_mbit": self.rate_min_mbit,
            "rate_max_mbit": self.rate_max_mbit,
            "rtt_seconds": self.rtt_seconds,
            "rate_step_pkts": self.rate_step_pkts,
            "eta_seconds": self.eta_seconds,
            "penalty": self.penalty,
        }
        for name, value in positive.items():
            if not (value > 0):
                raise ScenarioError(f"{name} must be positive, got {value}")
        if self.buffer_packets < 1:
            raise ScenarioError("buffer_packets must be at least 1")
        if self.rate_min_mbit >= self.rate_max_mbit:
            raise ScenarioError("traffic.rate_min_mbit must be below rate_max_mbit")
        if self.rate_grid_size < 2 or self.rate_bins < 2:
            raise ScenarioError("rate_grid_size and rate_bins must be at least 2")
        if self.age_bins != 3:
            raise ScenarioError("age_bins is fixed at 3 in this release")
        if self.replications < 1 or self.arrivals_per_run < 1:
            raise ScenarioError("replications and arrivals_per_run must be positive")
        if not (0 <= self.burn_in_fraction < 1):
            raise ScenarioError("burn_in_fraction must lie in [0, 1)")
        if self.model == "rtt_multi" and not self.flows:
            raise ScenarioError("rtt_multi needs traffic.flows")
        if self.model != "rtt_multi" and self.flows:
            raise ScenarioError("traffic.flows only applies to model rtt_multi")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ScenarioConfig":
        kwargs = {}
        for key, raw in mapping.items():
            if key not in cls._KEYS:
                raise ScenarioError(f"unknown configuration key {key!r}")
            name, convert = cls._KEYS[key]
            try:
                kwargs[name] = convert(raw)
            except ScenarioError:
                raise
            except (TypeError, ValueError) as exc:
                raise ScenarioError(f"bad value for {key}: {raw!r} ({exc})") from None
        if "model" not in kwargs:
            raise ScenarioError("missing required key 'model'")
        if "service_rate_mbit" not in kwargs:
            raise ScenarioError("missing required key 'link.service_rate_mbit'")
        if "buffer_packets" not in kwargs:
            raise ScenarioError("missing required key 'link.buffer_packets'")
        try:
            return cls(**kwargs)
        except ValueError as exc:
            raise ScenarioError(str(exc)) from None

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        try:
            text = open(path).read()
        except OSError as exc:
            raise ScenarioError(f"cannot read config {path}: {exc}") from None
        return cls.from_mapping(parse_dotted_keys(text))

    def with_overrides(self, seed=None, full_scale=False) -> "ScenarioConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        if full_scale:
            cfg = replace(
                cfg,
                replications=FULL_SCALE_REPLICATIONS,
                arrivals_per_run=FULL_SCALE_ARRIVALS,
            )
        return cfg

    # -- derived quantities -------------------------------------------------

    @property
    def mu_pkts(self) -> float:
        return self.service_rate_mbit * 1e6 / self.packet_size_bits

    def _mbit_to_pkts(self, mbit: float) -> float:
        return mbit * 1e6 / self.packet_size_bits

    def build_grid(self) -> RateGrid:
        lo = self._mbit_to_pkts(self.rate_min_mbit)
        hi = self._mbit_to_pkts(self.rate_max_mbit)
        if self.model == "zero_rtt":
            return RateGrid.from_effective_range(lo, hi, self.rate_grid_size, self.alpha)
        return RateGrid.log_spaced(lo, hi, self.rate_grid_size)

    def build_model_config(self):
        if self.model == "zero_rtt":
            return ZeroRttConfig(
                alpha=self.alpha,
                mu=self.mu_pkts,
                buffer=self.buffer_packets,
                eta=self.eta_seconds,
                penalty=self.penalty,
                grid=self.build_grid(),
            )
        if self.model == "rtt_single":
            return RttSingleConfig(
                mu=self.mu_pkts,
                buffer=self.buffer_packets,
                eta=self.eta_seconds,
                penalty=self.penalty,
                rtt=self.rtt_seconds,
                grid=self.build_grid(),
                rate_step=self.rate_step_pkts,
            )
        return MultiFlowConfig(
            flows=self.flows,
            mu=self.mu_pkts,
            buffer=self.buffer_packets,
            eta=self.eta_seconds,
            penalty=self.penalty,
            rate_step=self.rate_step_pkts,
        )

    def build_discretization(self) -> Discretization:
        return Discretization(
            rate_min=self._mbit_to_pkts(self.rate_min_mbit),
            rate_max=self._mbit_to_pkts(self.rate_max_mbit),
            n_rate_bins=self.rate_bins,
        )

    # -- provenance ---------------------------------------------------------

    def canonical_text(self) -> str:
        reverse = {name: key for key, (name, _) in self._KEYS.items()}
        lines = []
        for name in sorted(reverse):
            value = getattr(self, name)
            if name == "flows":
                value = ",".join(f"{f.rtt!r}:{f.initial_rate!r}" for f in value)
            lines.append(f"{reverse[name]} = {value}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]
