"""Operator spreading and fast scrambling: random circuits, spin chains and classical oscillators."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .weights import (  # noqa: E402
    CircuitParams,
    TransitionMatrix,
    WeightDistribution,
    build_transition_matrix,
    evolve,
    initial_distribution,
    mean_commutator,
    scrambling_time,
    step,
)

__all__ = [
    "CircuitParams",
    "TransitionMatrix",
    "WeightDistribution",
    "build_transition_matrix",
    "evolve",
    "initial_distribution",
    "mean_commutator",
    "scrambling_time",
    "step",
    "__version__",
]
