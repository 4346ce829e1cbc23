# __init__.py

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("tt-aggregation")
except PackageNotFoundError:  # pragma: no cover
    # Running from a source checkout (main.py or tests) without installing
    __version__ = "unknown"
finally:
    del version, PackageNotFoundError

from .exceptions import (
    AggregationError,
    BudgetExceededError,
    ConfigError,
    NumericalError,
    SimulationAborted,
    ValidationError,
    VerificationError,
)
from .tt_core import (
    BrownianSpec,
    CPKernel,
    DenseKernel,
    KernelSpec,
    MultiIndex,
    SubsetCodec,
    TTKernel,
    brownian_element,
    build_brownian_tt,
)
from .parallel import ExecutionPlan, PartitionPlan, make_partition
from .kinetics import ConcentrationState, KernelSet, rhs_total
from .integrator import InitialCondition, MomentSeries, TimeGrid, integrate, rk2_step
from .config import SimulationConfig, load_config
