# cli.py

import argparse
import dataclasses
import json
import logging
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from tt_aggregation import __version__
from tt_aggregation.bench import run_scaling_benchmark
from tt_aggregation.config import load_config
from tt_aggregation.exceptions import (
    ConfigError,
    NumericalError,
    SimulationAborted,
    ValidationError,
    VerificationError,
)
from tt_aggregation.integrator import MOMENT_COLUMNS, constant_kernel_m0, integrate
from tt_aggregation.kinetics import (
    ConcentrationState,
    rhs_cp_P,
    rhs_cp_Q,
    rhs_dense_P,
    rhs_dense_Q,
    rhs_tt_P,
    rhs_tt_Q,
)
from tt_aggregation.tt_core import cp_from_spec, dense_from_spec, symmetry_defect, tt_from_spec

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3

VERIFY_TOLERANCE = 1e-10
VERIFY_STATES = 5
# Full double precision for every numeric output
FLOAT_FORMAT = "%.17g"
LOG_FORMAT = "%(asctime)s|%(name)s|%(levelname)s| %(message)s"


@dataclasses.dataclass(frozen=True)
class VerificationRow:
    order: int
    path: str
    p_error: float
    q_error: float

    @property
    def worst(self):
        """The larger of the gain and loss errors."""
        return max(self.p_error, self.q_error)


def _relative_error(approx, exact):
    scale = np.max(np.abs(exact))
    error = np.max(np.abs(approx - exact))
    return float(error / scale) if scale > 0 else float(error)


def verify_specs(specs, mode_size, rng, states=VERIFY_STATES, plan=None):
    """
    Compares the TT and CP right-hand sides of every kernel spec with the dense oracle.

    Table kernels have no fast path; their dense tables are checked for symmetry
    instead (reported with ``path="symmetry"`` in the p_error column).

    Args:
        specs (iterable of KernelSpec): Kernels to check.
        mode_size (int): N.
        rng (numpy.random.Generator): Source of random nonnegative states.
        states (int): Number of random states per kernel.
        plan (ExecutionPlan, optional): Plan for the fast paths.

    Returns:
        list of VerificationRow: Maximum relative errors per order and path.
    """
    rows = []
    for spec in specs:
        oracle = dense_from_spec(spec, mode_size)
        if spec.kind == "table":
            rows.append(VerificationRow(spec.order, "symmetry", symmetry_defect(oracle, rng=rng), 0.0))
            continue
        fast_paths = (
            ("tt", tt_from_spec(spec, mode_size), rhs_tt_P, rhs_tt_Q),
            ("cp", cp_from_spec(spec, mode_size), rhs_cp_P, rhs_cp_Q),
        )
        errors = {name: [0.0, 0.0] for name, *_ in fast_paths}
        for _ in range(states):
            state = ConcentrationState(rng.random(mode_size))
            p_exact, q_exact = rhs_dense_P(oracle, state), rhs_dense_Q(oracle, state)
            for name, kernel, gain, loss in fast_paths:
                errors[name][0] = max(errors[name][0], _relative_error(gain(kernel, state, plan), p_exact))
                errors[name][1] = max(errors[name][1], _relative_error(loss(kernel, state, plan), q_exact))
        rows.extend(VerificationRow(spec.order, name, *errors[name]) for name, *_ in fast_paths)
    return rows


def _format_verification(rows):
    lines = [f"{'order':>5} | {'path':>8} | {'max rel err P':>14} | {'max rel err Q':>14}"]
    for row in rows:
        lines.append(f"{row.order:>5d} | {row.path:>8} | {row.p_error:>14.3e} | {row.q_error:>14.3e}")
    return "\n".join(lines)


def _guarded(action):
    """Runs ``action`` and maps failures onto exit codes."""
    try:
        return action()
    except (ConfigError, ValidationError) as exc:
        code, message = EXIT_VALIDATION, f"validation error: {exc}"
    except (NumericalError, VerificationError) as exc:
        code, message = EXIT_NUMERICAL, f"numerical failure: {exc}"
    except OSError as exc:
        code, message = EXIT_IO, f"I/O error: {exc}"
    logger.error(message)
    print(message, file=sys.stderr)
    return code


def _versions():
    return {
        "tt_aggregation": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def _write_snapshot(directory, step, state):
    sizes = np.arange(1, state.mode_size + 1)
    np.savetxt(
        directory / f"n_{step}.csv",
        np.column_stack([sizes, state.n]),
        fmt=["%d", FLOAT_FORMAT],
        delimiter=",",
        header="k,n",
        comments="",
    )


def _check_verification(rows):
    failures = [row for row in rows if row.worst > VERIFY_TOLERANCE]
    if failures:
        raise VerificationError(
            "; ".join(f"order {r.order} {r.path}: {r.worst:.3e}" for r in failures)
            + f" exceed tolerance {VERIFY_TOLERANCE:g}"
        )


def cmd_simulate(config_path, output=None, workers=None):
    """
    Integrates the configured problem and writes moments.csv, n_<step>.csv
    snapshots and manifest.json.

    Args:
        config_path (str or Path): Configuration file or run manifest.
        output (str, optional): Overrides the configured output directory.
        workers (int, optional): Overrides the configured worker count.

    Returns:
        int: Exit code.
    """

    def action():
        config = load_config(config_path)
        if workers is not None:
            config = config.replace(execution=dataclasses.replace(config.execution, workers=workers))
        if output is not None:
            config = config.replace(output=str(output))

        if config.verify:
            rng = np.random.default_rng(config.seed)
            rows = verify_specs(config.kernels, config.mode_size, rng)
            logger.info("oracle verification before the run:\n%s", _format_verification(rows))
            _check_verification(rows)

        directory = Path(config.output)
        directory.mkdir(parents=True, exist_ok=True)
        try:
            final, series = integrate(
                config, on_record=lambda step, state: _write_snapshot(directory, step, state)
            )
        except SimulationAborted as exc:
            _write_moments(directory / "moments.csv", exc.series)
            raise

        _write_moments(directory / "moments.csv", series)
        _log_constant_kernel_reference(config, series)
        manifest = {
            "config": config.to_dict(),
            "versions": _versions(),
            "workers": config.execution.workers,
            "created": datetime.now(timezone.utc).isoformat(),
            "final_t": final.t,
            "records": len(series),
            "negativity_flag": series.flagged,
        }
        with open(directory / "manifest.json", "w", encoding="utf-8") as handle:
            json.dump(manifest, handle, indent=2)
        print(f"wrote {len(series)} moment records to {directory / 'moments.csv'}")
        return EXIT_OK

    return _guarded(action)


def _log_constant_kernel_reference(config, series):
    # Only a single constant kernel with a monodisperse start has a closed form
    if len(config.kernels) != 1 or config.kernels[0].kind != "constant":
        return
    if config.initial_condition.kind != "monodisperse" or config.initial_condition.c0 <= 0:
        return
    spec, last = config.kernels[0], series[-1]
    exact = constant_kernel_m0(last.t - config.time.t0, spec.order, spec.c, config.initial_condition.c0)
    logger.info("M0(t=%g) = %.12g, closed form %.12g, relative error %.3e",
                last.t, last.m0, exact, abs(last.m0 - exact) / exact)


def _write_moments(path, series):
    np.savetxt(path, series.to_array(), fmt=FLOAT_FORMAT, delimiter=",",
               header=",".join(MOMENT_COLUMNS), comments="")


def cmd_verify(config_path, seed=None, states=VERIFY_STATES):
    """
    Checks the TT and CP right-hand sides against dense oracles on random states.

    Returns:
        int: 0 if every relative error is at most 1e-10, nonzero otherwise.
    """

    def action():
        config = load_config(config_path)
        rng = np.random.default_rng(config.seed if seed is None else seed)
        rows = verify_specs(config.kernels, config.mode_size, rng, states)
        print(_format_verification(rows))
        _check_verification(rows)
        print(f"all paths within {VERIFY_TOLERANCE:g}")
        return EXIT_OK

    return _guarded(action)


def cmd_bench(config_path, workers=(1, 2, 4), output=None, repeats=3):
    """
    Runs the scaling benchmark and writes bench_report.json.

    Returns:
        int: Exit code.
    """

    def action():
        config = load_config(config_path)
        report = run_scaling_benchmark(config, workers, repeats=repeats)
        directory = Path(output if output is not None else config.output)
        directory.mkdir(parents=True, exist_ok=True)
        report.write(directory / "bench_report.json")
        print(report.format_table())
        return EXIT_OK

    return _guarded(action)


def parse_workers(text):
    """Parses a comma separated worker list such as "1,2,4"."""
    try:
        counts = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma separated list of integers: {text!r}") from None
    if not counts or min(counts) < 1:
        raise argparse.ArgumentTypeError(f"worker counts must be positive: {text!r}")
    return counts


def parse_worker_count(text):
    """Parses a single positive worker count."""
    counts = parse_workers(text)
    if len(counts) != 1:
        raise argparse.ArgumentTypeError(f"expected one worker count, got {text!r}")
    return counts[0]


def parse_log_level(text):
    """Maps a level name such as "debug" to its logging constant."""
    level = logging.getLevelName(text.upper())
    if not isinstance(level, int):
        raise argparse.ArgumentTypeError(f"unknown log level: {text!r}")
    return level


def parse_args(args):
    """
    Parses command line parameters.

    Args:
        args (list of str): Command line parameters as list of strings.

    Returns:
        argparse.Namespace: Parsed parameters.
    """
    parser = argparse.ArgumentParser(
        prog="tt-aggregation",
        description="Multi-particle aggregation kinetics with tensor-train accelerated right-hand sides",
    )
    parser.add_argument("--version", action="version", version=f"tt-aggregation {__version__}")
    parser.add_argument("-v", "--verbose", dest="loglevel", action="store_const", const=logging.INFO,
                        help="set loglevel to INFO")
    parser.add_argument("-vv", "--very-verbose", dest="loglevel", action="store_const", const=logging.DEBUG,
                        help="set loglevel to DEBUG")
    parser.add_argument("--log-level", dest="loglevel", type=parse_log_level, metavar="LEVEL",
                        help="explicit loglevel, e.g. WARNING or DEBUG")
    subparsers = parser.add_subparsers(dest="command", required=True)

    simulate = subparsers.add_parser("simulate", help="integrate the configured problem and write CSV outputs")
    verify = subparsers.add_parser("verify", help="compare TT/CP right-hand sides with dense oracles")
    bench = subparsers.add_parser("bench", help="measure wall time and speedup over worker counts")
    for sub in (simulate, verify, bench):
        sub.add_argument("--config", required=True, metavar="PATH", help="JSON configuration or run manifest")
    for sub in (simulate, bench):
        sub.add_argument("--output", metavar="DIR", help="output directory (overrides the config)")
    simulate.add_argument("--workers", type=parse_worker_count, metavar="P",
                          help="thread pool size (overrides the config)")
    bench.add_argument("--workers", type=parse_workers, default=(1, 2, 4), metavar="LIST",
                       help="comma separated worker counts, default 1,2,4")
    verify.add_argument("--seed", type=int, help="seed for the random test states (overrides the config)")
    return parser.parse_args(args)


def setup_logging(loglevel):
    """Configures the root handler once for the whole process."""
    logging.basicConfig(level=loglevel or logging.WARNING, stream=sys.stderr,
                        format=LOG_FORMAT, datefmt="%Y-%m-%d %H:%M:%S")


def main(args):
    """
    Entry point with a list of command line arguments; returns the exit code.
    """
    args = parse_args(args)
    setup_logging(args.loglevel)
    if args.command == "simulate":
        return cmd_simulate(args.config, output=args.output, workers=args.workers)
    if args.command == "verify":
        return cmd_verify(args.config, seed=args.seed)
    return cmd_bench(args.config, workers=args.workers, output=args.output)


def run():
    """Console script entry point."""
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    run()
