# bench.py

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from tt_aggregation.config import ExecutionSettings, SimulationConfig
from tt_aggregation.exceptions import ValidationError
from tt_aggregation.integrator import InitialCondition, TimeGrid, integrate
from tt_aggregation.kinetics import KernelSet
from tt_aggregation.tt_core import KernelSpec

logger = logging.getLogger(__name__)

# Exponents of the ternary generalized Brownian kernel used for scaling runs
TERNARY_BROWNIAN_MU = (1.0 / 3.0, -1.0 / 3.0, 0.0)


@dataclass
class BenchmarkReport:
    """
    Wall times and speedups of a fixed problem over several worker counts.

    Attributes:
        mode_size (int): N.
        max_order (int): D.
        steps (int): RK2 steps per timed run.
        worker_counts (list of int): Pool sizes, in run order.
        times_sec (list of float): Median wall time per pool size.
        speedups (list of float): Single-worker time divided by each time.
    """

    mode_size: int
    max_order: int
    steps: int
    worker_counts: list = field(default_factory=list)
    times_sec: list = field(default_factory=list)
    speedups: list = field(default_factory=list)

    def to_dict(self):
        """The bench_report.json document."""
        return {
            "N": self.mode_size,
            "D": self.max_order,
            "steps": self.steps,
            "worker_counts": list(self.worker_counts),
            "times_sec": list(self.times_sec),
            "speedups": list(self.speedups),
        }

    def write(self, path):
        """
        Writes ``to_dict()`` as indented JSON.

        Args:
            path (str or Path): Destination file, usually bench_report.json.
        """
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.to_dict(), handle, indent=2)

    def format_table(self):
        """Plain-text table with the columns: workers, time in seconds, speedup."""
        lines = [f"{'Number of CPU-cores':>20} | {'time, sec':>10} | {'Speedup':>8}", "-" * 46]
        for workers, seconds, speedup in zip(self.worker_counts, self.times_sec, self.speedups):
            lines.append(f"{workers:>20d} | {seconds:>10.2f} | {speedup:>8.2f}")
        return "\n".join(lines)


def default_benchmark_config(mode_size=2 ** 17, steps=100, dt=1e-3):
    """
    Pure ternary aggregation with the generalized Brownian kernel, monodisperse start.
    """
    return SimulationConfig(
        mode_size=mode_size,
        max_order=3,
        kernels=(KernelSpec("brownian", 3, mu=TERNARY_BROWNIAN_MU),),
        initial_condition=InitialCondition("monodisperse", c0=1.0),
        time=TimeGrid(0.0, dt, steps),
        record_every=steps,
        execution=ExecutionSettings(workers=1),
    )


def median_time(func, repeats=5):
    """Median wall time of ``repeats`` calls to ``func``."""
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        func()
        samples.append(time.perf_counter() - start)
    return float(np.median(samples))


def run_scaling_benchmark(config, worker_counts, repeats=3, warmup=True):
    """
    Times the same integration with every worker count.

    One warm-up run per worker count is discarded, then the median of
    ``repeats`` timed runs is reported. Kernels are built once, outside the
    timings. A single-worker baseline is added if the list lacks one.

    Args:
        config (SimulationConfig): Problem to integrate.
        worker_counts (iterable of int): Pool sizes to measure.
        repeats (int): Timed runs per pool size.
        warmup (bool): Whether to discard one run first.

    Returns:
        BenchmarkReport: Timings and speedups relative to one worker.
    """
    worker_counts = [int(w) for w in worker_counts]
    if not worker_counts or min(worker_counts) < 1:
        raise ValidationError(f"worker counts must be a non-empty list of positive integers, got {worker_counts}")
    if 1 not in worker_counts:
        logger.info("adding a single-worker baseline to %s", worker_counts)
        worker_counts.insert(0, 1)

    kernels = KernelSet.from_specs(config.kernels, config.mode_size, config.representation)
    report = BenchmarkReport(config.mode_size, config.max_order, config.time.steps)
    for workers in worker_counts:
        with config.execution.plan(workers) as plan:
            def run():
                integrate(config, plan=plan, kernels=kernels)

            if warmup:
                run()
            seconds = median_time(run, repeats)
        report.worker_counts.append(workers)
        report.times_sec.append(seconds)
        logger.info("workers=%d: median %.3f s over %d runs", workers, seconds, repeats)

    baseline = report.times_sec[report.worker_counts.index(1)]
    report.speedups = [baseline / seconds for seconds in report.times_sec]
    return report
