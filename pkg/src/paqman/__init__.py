"""paqman: model-based drop/admit policies for active queue management.

Solves average-reward semi-Markov decision processes describing AIMD
traffic through a finite buffer (with and without feedback delay), learns
tabular policies where exact solving is infeasible, infers source
parameters from interarrival logs, and evaluates everything against CoDel
and droptail in a discrete-event simulator.
"""

from .gamma_math import GammaParams, gamma_exceedance, gamma_exceedance_step, service_count_pmf
from .grids import DEFAULT_PACKET_SIZE_BITS, RateGrid, mbit_to_pkts, pkts_to_mbit
from .inference import (
    FitResult,
    FlowRateMLE,
    ObservationLog,
    PolynomialCC,
    UnidentifiableModelError,
    fit,
    fit_polynomial,
    log_likelihood,
    rate_trajectory,
    score,
)
from .rtt_multi import (
    Discretization,
    DiscretizedPolicy,
    FlowSpec,
    MultiFlowConfig,
    MultiFlowState,
    kernel_block,
    learn_policy,
    multi_reward,
    sample_step,
)
from .rtt_single import RttSingleConfig, RttSingleModel, RttState
from .scenario import ScenarioConfig, ScenarioError
from .simulator import (
    AdmitAllPolicy,
    CodelPolicy,
    DroptailPolicy,
    LearnedPolicy,
    SimEvent,
    SimTrace,
    TablePolicy,
    aggregate,
    run_replication,
)
from .smdp import PolicyTable, SmdpPolicySolver, TransitionModel, lookup, solve, transform
from .zero_rtt import Action, ZeroRttConfig, ZeroRttModel, ZeroRttState

__version__ = "0.1.0"

__all__ = [
    "Action",
    "AdmitAllPolicy",
    "CodelPolicy",
    "DEFAULT_PACKET_SIZE_BITS",
    "Discretization",
    "DiscretizedPolicy",
    "DroptailPolicy",
    "FitResult",
    "FlowRateMLE",
    "FlowSpec",
    "GammaParams",
    "LearnedPolicy",
    "MultiFlowConfig",
    "MultiFlowState",
    "ObservationLog",
    "PolicyTable",
    "PolynomialCC",
    "RateGrid",
    "RttSingleConfig",
    "RttSingleModel",
    "RttState",
    "ScenarioConfig",
    "ScenarioError",
    "SimEvent",
    "SimTrace",
    "SmdpPolicySolver",
    "TablePolicy",
    "TransitionModel",
    "UnidentifiableModelError",
    "ZeroRttConfig",
    "ZeroRttModel",
    "ZeroRttState",
    "aggregate",
    "fit",
    "fit_polynomial",
    "gamma_exceedance",
    "gamma_exceedance_step",
    "kernel_block",
    "learn_policy",
    "log_likelihood",
    "lookup",
    "mbit_to_pkts",
    "multi_reward",
    "pkts_to_mbit",
    "rate_trajectory",
    "run_replication",
    "sample_step",
    "score",
    "service_count_pmf",
    "solve",
    "transform",
]
