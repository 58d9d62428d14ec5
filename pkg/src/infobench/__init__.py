"""Information-theoretic model benchmarking for conceptual rainfall-runoff models."""

__version__ = "0.1.0"

from .series import TimeSeries
from .dynamics import (
    AbcParams,
    Forcing,
    HymodParams,
    ModelState,
    NashParams,
    SimulationResult,
    simulate,
)
from .info import (
    DiscretizationSpec,
    InfoValue,
    JointHistogram,
    conditional_mi,
    entropy,
    f_divergence,
    joint_histogram,
    linear_metrics,
    mutual_information,
    transfer_entropy,
)
