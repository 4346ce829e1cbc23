# tests/test_bench.py
import os, sys
# Get the absolute path to the current script's directory
current_dir = os.path.dirname(os.path.abspath(__file__))
# Construct the path to the '/src' directory
src_dir = os.path.join(current_dir, '..', 'src')
# Add '/src' to Python's module search path
sys.path.append(src_dir)

import json
import unittest

import numpy as np
import pytest

from tt_aggregation.bench import (
    BenchmarkReport,
    TERNARY_BROWNIAN_MU,
    default_benchmark_config,
    median_time,
    run_scaling_benchmark,
)
from tt_aggregation.exceptions import ValidationError
from tt_aggregation.kinetics import ConcentrationState, rhs_tt_P
from tt_aggregation.tt_core import BrownianSpec, build_brownian_tt


@pytest.mark.usefixtures("tmp_dir")
class TestBenchmarkReport(unittest.TestCase):
    def test_single_worker(self):
        report = run_scaling_benchmark(default_benchmark_config(2 ** 8, steps=2), [1], repeats=1)
        self.assertEqual(report.worker_counts, [1])
        self.assertEqual(report.speedups, [1.0])
        self.assertIn("1.00", report.format_table().splitlines()[-1])

    def test_three_rows(self):
        report = run_scaling_benchmark(default_benchmark_config(2 ** 8, steps=2), (1, 2, 4), repeats=1)
        self.assertEqual(report.worker_counts, [1, 2, 4])
        self.assertEqual(len(report.times_sec), 3)
        self.assertEqual(len(report.format_table().splitlines()), 2 + 3)

    def test_baseline_added(self):
        report = run_scaling_benchmark(default_benchmark_config(2 ** 6, steps=1), [2], repeats=1, warmup=False)
        self.assertEqual(report.worker_counts, [1, 2])

    def test_invalid_worker_counts(self):
        with self.assertRaises(ValidationError):
            run_scaling_benchmark(default_benchmark_config(2 ** 6, steps=1), [0])

    def test_json(self):
        report = BenchmarkReport(1024, 3, 10, [1, 2], [2.0, 1.0], [1.0, 2.0])
        path = self.tmp / "bench_report.json"
        report.write(path)
        data = json.loads(path.read_text())
        self.assertEqual(set(data), {"N", "D", "steps", "worker_counts", "times_sec", "speedups"})
        self.assertEqual(data["speedups"], [1.0, 2.0])

    def test_median_time(self):
        calls = []
        self.assertGreaterEqual(median_time(lambda: calls.append(1), repeats=5), 0.0)
        self.assertEqual(len(calls), 5)


@pytest.mark.slow
class TestScaling(unittest.TestCase):
    def test_gain_grows_like_n_log_n(self):
        rng = np.random.default_rng(0)
        spec = BrownianSpec(TERNARY_BROWNIAN_MU)
        times = []
        for mode_size in (2 ** 15, 2 ** 16):
            kernel = build_brownian_tt(spec, mode_size)
            state = ConcentrationState(rng.random(mode_size))
            rhs_tt_P(kernel, state)
            times.append(median_time(lambda: rhs_tt_P(kernel, state), repeats=5))
        self.assertLessEqual(times[1] / times[0], 2.5)

    @unittest.skipIf((os.cpu_count() or 1) < 4, "needs at least 4 CPUs")
    def test_four_worker_speedup(self):
        report = run_scaling_benchmark(default_benchmark_config(2 ** 17, steps=10), (1, 4), repeats=3)
        self.assertGreaterEqual(report.speedups[-1], 2.0)


if __name__ == '__main__':
    unittest.main()
