# config.py

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

from tt_aggregation.exceptions import ConfigError, ValidationError
from tt_aggregation.integrator import InitialCondition, TimeGrid
from tt_aggregation.kinetics import REPRESENTATIONS
from tt_aggregation.parallel import FFT_LENGTH_POLICIES, ExecutionPlan
from tt_aggregation.tt_core import KernelSpec

logger = logging.getLogger(__name__)

TOP_LEVEL_KEYS = {
    "N", "D", "kernels", "initial_condition", "time", "record_every",
    "output", "execution", "representation", "verify", "seed",
}


@dataclass(frozen=True)
class ExecutionSettings:
    """
    Parameters of the ExecutionPlan a run uses.

    Attributes:
        workers (int): Thread pool size.
        fft_length (str): "pow2" or "fast".
        deterministic (bool): Fixed-order reductions.
        parallel_fft (bool): Run the fiber FFTs on ``workers`` scipy threads.
        parallel_blocks (bool): Split the size coordinate into ``workers`` blocks.
    """

    workers: int = 1
    fft_length: str = "pow2"
    deterministic: bool = True
    parallel_fft: bool = True
    parallel_blocks: bool = True

    def __post_init__(self):
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError(f"execution.workers must be an integer >= 1, got {self.workers!r}")
        if self.fft_length not in FFT_LENGTH_POLICIES:
            raise ConfigError(f"execution.fft_length must be one of {FFT_LENGTH_POLICIES}, got {self.fft_length!r}")

    def plan(self, workers=None):
        """
        Builds the ExecutionPlan these settings describe.

        Args:
            workers (int, optional): Pool size overriding ``self.workers``.

        Returns:
            ExecutionPlan: A fresh plan; close it or use it as a context manager.
        """
        return ExecutionPlan(
            self.workers if workers is None else workers,
            self.fft_length,
            self.deterministic,
            parallel_fft=self.parallel_fft,
            parallel_blocks=self.parallel_blocks,
        )


@dataclass(frozen=True)
class SimulationConfig:
    """
    Everything needed to run, verify or benchmark one problem.

    Attributes:
        mode_size (int): N, number of size classes.
        max_order (int): D, the largest collision order allowed.
        kernels (tuple of KernelSpec): One kernel per collision order d <= D.
        initial_condition (InitialCondition): State at t0.
        time (TimeGrid): The uniform time grid.
        record_every (int): Record moments and snapshots every this many steps.
        output (str): Output directory.
        execution (ExecutionSettings): Parallel execution parameters.
        representation (str): "tt", "cp", "dense" or "auto".
        verify (bool): Check fast paths against the dense oracle before running.
        seed (int): Seed for random states in verification.
    """

    mode_size: int
    max_order: int
    kernels: tuple
    initial_condition: InitialCondition = InitialCondition()
    time: TimeGrid = TimeGrid()
    record_every: int = 1
    output: str = "output"
    execution: ExecutionSettings = ExecutionSettings()
    representation: str = "tt"
    verify: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kernels", tuple(self.kernels))
        if not isinstance(self.mode_size, int) or self.mode_size < 2:
            raise ConfigError(f"N must be an integer >= 2, got {self.mode_size!r}")
        if not isinstance(self.max_order, int) or self.max_order < 2:
            raise ConfigError(f"D must be an integer >= 2, got {self.max_order!r}")
        if not self.kernels:
            raise ConfigError("no collision orders configured")
        orders = [spec.order for spec in self.kernels]
        if len(set(orders)) != len(orders):
            raise ConfigError(f"each collision order may appear once, got {orders}")
        if max(orders) > self.max_order:
            raise ConfigError(f"kernel order {max(orders)} exceeds D = {self.max_order}")
        if not isinstance(self.record_every, int) or self.record_every < 1:
            raise ConfigError(f"record_every must be an integer >= 1, got {self.record_every!r}")
        if self.representation not in REPRESENTATIONS:
            raise ConfigError(f"unknown representation {self.representation!r}; use one of {REPRESENTATIONS}")
        if self.mode_size & (self.mode_size - 1):
            logger.warning("N = %d is not a power of two; FFT padding and block partitions work best "
                           "with powers of two", self.mode_size)

    def execution_plan(self):
        """A fresh ExecutionPlan built from ``execution``."""
        return self.execution.plan()

    def replace(self, **changes):
        """A copy with ``changes`` applied; validation runs again."""
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        """The JSON form read back by ``from_dict``."""
        return {
            "N": self.mode_size,
            "D": self.max_order,
            "kernels": [spec.to_dict() for spec in self.kernels],
            "initial_condition": {
                "kind": self.initial_condition.kind,
                "c0": self.initial_condition.c0,
                "values": list(self.initial_condition.values),
            },
            "time": {"t0": self.time.t0, "dt": self.time.dt, "steps": self.time.steps},
            "record_every": self.record_every,
            "output": self.output,
            "execution": dataclasses.asdict(self.execution),
            "representation": self.representation,
            "verify": self.verify,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data, base_dir=None):
        """
        Parses the JSON form; relative table paths resolve against ``base_dir``.

        Raises:
            ConfigError: On unknown keys, missing fields or invalid values.
        """
        unknown = set(data) - TOP_LEVEL_KEYS
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        for key in ("N", "D", "kernels", "time"):
            if key not in data:
                raise ConfigError(f"configuration is missing {key!r}")
        try:
            return cls(
                mode_size=data["N"],
                max_order=data["D"],
                kernels=[KernelSpec.from_dict(spec, base_dir) for spec in data["kernels"]],
                initial_condition=InitialCondition(**data.get("initial_condition", {})),
                time=TimeGrid(**data["time"]),
                record_every=data.get("record_every", 1),
                output=data.get("output", "output"),
                execution=ExecutionSettings(**data.get("execution", {})),
                representation=data.get("representation", "tt"),
                verify=bool(data.get("verify", False)),
                seed=int(data.get("seed", 0)),
            )
        except ConfigError:
            raise
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc
        except TypeError as exc:
            # Unexpected keyword arguments in one of the nested sections
            raise ConfigError(f"malformed configuration section: {exc}") from exc
        except ValueError as exc:
            # Strings where numbers are expected
            raise ConfigError(f"invalid configuration value: {exc}") from exc


def load_config(path):
    """
    Reads a configuration file, or the ``config`` section of a run manifest.

    Raises:
        OSError: If the file cannot be read.
        ConfigError: If it is not valid JSON or not a valid configuration.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as handle:
        try:
            data = json.load(handle)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ConfigError(f"{path}: not valid UTF-8 JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    if "config" in data and "versions" in data:
        logger.info("%s is a run manifest; using its embedded configuration", path)
        data = data["config"]
    try:
        return SimulationConfig.from_dict(data, base_dir=path.parent)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
