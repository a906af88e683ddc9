"""Rate discretisation grid and unit conversions.

All internal rates are in packets/second. Link speeds given in Mbit/s are
converted through a configurable packet size (default 12,500 bits), which
makes a 50 ms target delay correspond to 20 packets at 5 Mbit/s and 40
packets at 10 Mbit/s.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = ["DEFAULT_PACKET_SIZE_BITS", "mbit_to_pkts", "pkts_to_mbit", "RateGrid"]

DEFAULT_PACKET_SIZE_BITS = 12_500.0


def mbit_to_pkts(rate_mbit: float, packet_size_bits: float = DEFAULT_PACKET_SIZE_BITS) -> float:
    """Convert a rate in Mbit/s to packets/s."""
    return rate_mbit * 1e6 / packet_size_bits


def pkts_to_mbit(rate_pkts: float, packet_size_bits: float = DEFAULT_PACKET_SIZE_BITS) -> float:
    """Convert a rate in packets/s to Mbit/s."""
    return rate_pkts * packet_size_bits / 1e6


@dataclass(frozen=True)
class RateGrid:
    """Finite, strictly increasing grid of admissible rate parameters.

    Rate updates produced by the congestion-control recursion are snapped
    to the nearest grid point in log space (ties break toward the lower
    index) and clamped at the grid bounds, which keeps the decision-process
    state space finite.
    """

    values: np.ndarray
    _log_values: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size < 1:
            raise ValueError("grid must be a non-empty 1-D array")
        if np.any(values <= 0):
            raise ValueError("grid values must be positive")
        if np.any(np.diff(values) <= 0):
            raise ValueError("grid values must be strictly increasing")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_log_values", np.log(values))

    @classmethod
    def log_spaced(cls, lo: float, hi: float, n: int) -> "RateGrid":
        """n log-spaced points spanning [lo, hi]."""
        if not (0 < lo < hi):
            raise ValueError("need 0 < lo < hi")
        if n < 2:
            raise ValueError("need at least 2 grid points")
        return cls(np.exp(np.linspace(np.log(lo), np.log(hi), n)))

    @classmethod
    def from_effective_range(
        cls, lambda_min: float, lambda_max: float, n: int, alpha: float
    ) -> "RateGrid":
        """Grid over rate parameters beta = alpha * lambda for log-spaced
        effective rates lambda in [lambda_min, lambda_max] (packets/s)."""
        return cls.log_spaced(alpha * lambda_min, alpha * lambda_max, n)

    def __len__(self) -> int:
        return self.values.size

    def snap(self, beta: float) -> int:
        """Index of the nearest grid point in log space, clamped to bounds.

        Ties break toward the lower index so that snapping is deterministic.
        """
        if not (beta > 0):
            raise ValueError(f"rate must be positive, got {beta}")
        logs = self._log_values
        x = np.log(beta)
        if x <= logs[0]:
            return 0
        if x >= logs[-1]:
            return logs.size - 1
        hi = int(np.searchsorted(logs, x))
        lo = hi - 1
        # tie (equidistant in log space) goes to the lower index
        if (x - logs[lo]) <= (logs[hi] - x):
            return lo
        return hi

    def snap_value(self, beta: float) -> float:
        return float(self.values[self.snap(beta)])

    def interpolate(self, beta: float):
        """Two-point log-linear weights representing an off-grid rate.

        Returns a list of (index, weight) pairs whose weights sum to 1 and
        whose log-space barycentre is log(beta). Values on a grid point or
        outside the grid collapse to a single pair. Used as a stochastic
        rounding of rate updates: nearest-point snapping would freeze the
        rate wherever the grid spacing exceeds the update step, cutting the
        state space into non-communicating pieces.
        """
        if not (beta > 0):
            raise ValueError(f"rate must be positive, got {beta}")
        logs = self._log_values
        x = np.log(beta)
        if x <= logs[0]:
            return [(0, 1.0)]
        if x >= logs[-1]:
            return [(logs.size - 1, 1.0)]
        hi = int(np.searchsorted(logs, x))
        if logs[hi] == x:
            return [(hi, 1.0)]
        lo = hi - 1
        w_hi = float((x - logs[lo]) / (logs[hi] - logs[lo]))
        return [(lo, 1.0 - w_hi), (hi, w_hi)]
