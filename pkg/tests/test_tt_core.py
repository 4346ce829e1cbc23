# tests/test_tt_core.py
import os, sys
# Get the absolute path to the current script's directory
current_dir = os.path.dirname(os.path.abspath(__file__))
# Construct the path to the '/src' directory
src_dir = os.path.join(current_dir, '..', 'src')
# Add '/src' to Python's module search path
sys.path.append(src_dir)

import itertools
import math
import tempfile
import unittest
from pathlib import Path

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from tt_aggregation.exceptions import BudgetExceededError, ConfigError, ValidationError
from tt_aggregation.tt_core import (
    BrownianSpec,
    CPKernel,
    DenseKernel,
    KernelSpec,
    MultiIndex,
    SubsetCodec,
    TTKernel,
    brownian_cp,
    brownian_element,
    build_brownian_tt,
    constant_cp,
    constant_tt,
    cp_element,
    cp_to_dense,
    dense_from_spec,
    kernel_element,
    load_table,
    power_table,
    symmetry_defect,
    tt_element,
    tt_max_rank_bound,
    tt_to_dense,
)

TERNARY_MU = (1 / 3, -1 / 3, 0.0)


def permutation_sum(mu, idx):
    """Literal Σ_σ Π_λ i_σ(λ)^μ_λ, written independently of the library."""
    total = 0.0
    for perm in itertools.permutations(idx):
        term = 1.0
        for size, exponent in zip(perm, mu):
            term *= size ** exponent
        total += term
    return total


class TestElements(unittest.TestCase):
    def test_brownian_element_examples(self):
        self.assertEqual(brownian_element(BrownianSpec((0, 0)), (5, 9)), 2.0)
        self.assertAlmostEqual(brownian_element(BrownianSpec((1, 0)), (2, 4)), 6.0, places=12)
        self.assertAlmostEqual(brownian_element(BrownianSpec(TERNARY_MU), (1, 1, 1)), 6.0, places=12)

    def test_brownian_element_matches_permutation_sum(self):
        value = brownian_element(BrownianSpec(TERNARY_MU), (1, 2, 3))
        self.assertAlmostEqual(value, permutation_sum(TERNARY_MU, (1, 2, 3)), places=12)

    def test_brownian_element_is_symmetric(self):
        rng = np.random.default_rng(1)
        spec = BrownianSpec(rng.uniform(-1, 1, size=4))
        idx = (3, 7, 2, 11)
        reference = brownian_element(spec, idx)
        for perm in itertools.permutations(idx):
            self.assertAlmostEqual(brownian_element(spec, perm) / reference, 1.0, places=12)

    def test_element_errors(self):
        spec = BrownianSpec((1, 0, 0))
        with self.assertRaises(ValidationError):
            brownian_element(spec, (1, 2))  # length mismatch
        with self.assertRaises(ValidationError):
            brownian_element(spec, (0, 1, 2))  # sizes are 1-based
        with self.assertRaises(ValidationError):
            brownian_element(BrownianSpec([0.5] * 9), [1] * 9)  # permutation guard
        with self.assertRaises(ValidationError):
            BrownianSpec((1.0,))

    def test_multi_index(self):
        idx = MultiIndex((2, 3, 5))
        self.assertEqual(idx.total, 10)
        self.assertEqual(idx.offsets(), (1, 2, 4))
        with self.assertRaises(ValidationError):
            idx.check(3, 4)

    def test_power_table(self):
        table = power_table((1.0, 0.0, -1.0), 4)
        assert_allclose(table[0], [1, 2, 3, 4], rtol=1e-14)
        assert_allclose(table[1], [1, 1, 1, 1], rtol=1e-14)
        assert_allclose(table[2], [1, 1 / 2, 1 / 3, 1 / 4], rtol=1e-14)


class TestSubsetCodec(unittest.TestCase):
    def test_colex_order(self):
        codec = SubsetCodec(4, 2)
        self.assertEqual(codec.subsets, ((1, 2), (1, 3), (2, 3), (1, 4), (2, 4), (3, 4)))

    def test_round_trip_and_sizes(self):
        for dimension in range(2, 7):
            for level in range(dimension + 1):
                codec = SubsetCodec(dimension, level)
                self.assertEqual(len(codec), math.comb(dimension, level))
                for rank in range(1, len(codec) + 1):
                    self.assertEqual(codec.encode(codec.decode(rank)), rank)

    def test_errors(self):
        codec = SubsetCodec(3, 2)
        with self.assertRaises(ValidationError):
            codec.decode(0)
        with self.assertRaises(ValidationError):
            codec.encode((1, 4))
        with self.assertRaises(ValidationError):
            SubsetCodec(3, 4)


class TestBrownianTT(unittest.TestCase):
    def test_exhaustive_agreement(self):
        rng = np.random.default_rng(2024)
        for dimension in (2, 3, 4, 5):
            for mode_size in (4, 8):
                for _ in range(5):
                    spec = BrownianSpec(rng.uniform(-1, 1, size=dimension))
                    kernel = build_brownian_tt(spec, mode_size)
                    if mode_size ** dimension <= 4096:
                        for idx in itertools.product(range(1, mode_size + 1), repeat=dimension):
                            exact = brownian_element(spec, idx)
                            self.assertLessEqual(abs(tt_element(kernel, idx) - exact), 1e-11 * abs(exact))
                    else:
                        oracle = dense_from_spec(KernelSpec("brownian", dimension, mu=spec.exponents), mode_size)
                        assert_allclose(tt_to_dense(kernel).values, oracle.values, rtol=1e-11)

    def test_ranks_are_binomial(self):
        for dimension in range(2, 7):
            kernel = build_brownian_tt(BrownianSpec(np.linspace(-1, 1, dimension)), 4)
            self.assertEqual(kernel.ranks, tuple(math.comb(dimension, level) for level in range(dimension + 1)))
            self.assertEqual(kernel.max_rank, tt_max_rank_bound(dimension))

    def test_max_rank_bound(self):
        self.assertEqual(tt_max_rank_bound(2), 2)
        self.assertEqual(tt_max_rank_bound(3), 3)
        self.assertEqual(tt_max_rank_bound(6), 20)
        with self.assertRaises(ValidationError):
            tt_max_rank_bound(1)

    def test_two_dimensional_cores(self):
        powers = power_table((0.5, -0.25), 6)
        kernel = build_brownian_tt(BrownianSpec((0.5, -0.25)), 6)
        first, second = kernel.cores
        assert_allclose(first[0].T, powers, rtol=1e-15)
        # The second core pairs each exponent with the other one
        assert_allclose(second[:, :, 0], powers[::-1], rtol=1e-15)
        self.assertAlmostEqual(tt_element(build_brownian_tt(BrownianSpec((1, 0)), 4), (2, 4)), 6.0, places=12)

    def test_three_dimensional_middle_core(self):
        mu = (0.7, -0.2, 0.4)
        powers = power_table(mu, 5)
        middle = build_brownian_tt(BrownianSpec(mu), 5).cores[1]
        # Order the columns by the complement of each row's label: {2,3}, {1,3}, {1,2}
        children = SubsetCodec(3, 2)
        columns = [children.encode(pair) - 1 for pair in ((2, 3), (1, 3), (1, 2))]
        ordered = middle[:, :, columns]
        expected = [[None, 3, 2], [3, None, 1], [2, 1, None]]
        for row in range(3):
            for col in range(3):
                label = expected[row][col]
                if label is None:
                    assert_array_equal(ordered[row, :, col], 0.0)
                else:
                    assert_allclose(ordered[row, :, col], powers[label - 1], rtol=1e-15)

    def test_core_structure(self):
        rng = np.random.default_rng(3)
        for dimension in (2, 3, 4, 5):
            mu = rng.uniform(-1, 1, size=dimension)
            powers = power_table(mu, 6)
            kernel = build_brownian_tt(BrownianSpec(mu), 6)
            for level, core in enumerate(kernel.cores):
                parents, children = SubsetCodec(dimension, level), SubsetCodec(dimension, level + 1)
                nonzero = 0
                for a, parent in enumerate(parents.subsets):
                    for b, child in enumerate(children.subsets):
                        fiber = core[a, :, b]
                        if set(parent) < set(child):
                            (label,) = set(child) - set(parent)
                            assert_allclose(fiber, powers[label - 1], rtol=1e-15)
                            nonzero += 1
                        else:
                            assert_array_equal(fiber, 0.0)
                self.assertEqual(nonzero, math.comb(dimension, level + 1) * (level + 1))

    def test_recursion_identity(self):
        rng = np.random.default_rng(18)
        for level in (1, 2, 3):
            for _ in range(100):
                mu = rng.uniform(-1, 1, size=level + 1)
                idx = tuple(int(i) for i in rng.integers(1, 50, size=level + 1))
                direct = brownian_element(BrownianSpec(mu), idx)
                recursive = 0.0
                for xi in range(level + 1):
                    rest = np.delete(mu, xi)
                    if level == 1:
                        lower = idx[0] ** rest[0]
                    else:
                        lower = brownian_element(BrownianSpec(rest), idx[:level])
                    recursive += lower * idx[level] ** mu[xi]
                self.assertLessEqual(abs(direct - recursive), 1e-11 * abs(direct))

    def test_cores_are_read_only(self):
        kernel = build_brownian_tt(BrownianSpec(TERNARY_MU), 4)
        with self.assertRaises(ValueError):
            kernel.cores[0][0, 0, 0] = 1.0

    def test_reproducible(self):
        spec = BrownianSpec(TERNARY_MU)
        for left, right in zip(build_brownian_tt(spec, 16).cores, build_brownian_tt(spec, 16).cores):
            assert_array_equal(left, right)


class TestRepresentations(unittest.TestCase):
    def test_rank_one_ones(self):
        self.assertEqual(tt_element(constant_tt(1.0, 3, 5), (1, 4, 5)), 1.0)
        self.assertEqual(cp_element(constant_cp(1.0, 3, 5), (1, 4, 5)), 1.0)
        for idx in itertools.product(range(1, 4), repeat=3):
            self.assertAlmostEqual(cp_element(constant_cp(2.5, 3, 3), idx), 2.5, places=14)

    def test_random_tt_matches_dense(self):
        rng = np.random.default_rng(5)
        kernel = TTKernel([rng.random((1, 8, 2)), rng.random((2, 8, 3)), rng.random((3, 8, 1))])
        dense = tt_to_dense(kernel)
        for idx in itertools.product(range(1, 9), repeat=3):
            self.assertLessEqual(abs(tt_element(kernel, idx) - dense_element_of(dense, idx)),
                                 1e-12 * abs(dense_element_of(dense, idx)))

    def test_random_cp_matches_dense(self):
        rng = np.random.default_rng(6)
        kernel = CPKernel([rng.random((8, 4)) for _ in range(3)])
        dense = cp_to_dense(kernel)
        for idx in itertools.product(range(1, 9), repeat=3):
            exact = dense_element_of(dense, idx)
            self.assertLessEqual(abs(cp_element(kernel, idx) - exact), 1e-12 * abs(exact))

    def test_brownian_cp(self):
        spec = BrownianSpec((0.5, -0.5, 0.25))
        kernel = brownian_cp(spec, 6)
        self.assertEqual(kernel.rank, 6)
        oracle = tt_to_dense(build_brownian_tt(spec, 6))
        assert_allclose(cp_to_dense(kernel).values, oracle.values, rtol=1e-13)

    def test_validation(self):
        with self.assertRaises(ValidationError):
            TTKernel([np.ones((1, 4, 2)), np.ones((3, 4, 1))])  # rank mismatch
        with self.assertRaises(ValidationError):
            TTKernel([np.ones((2, 4, 1)), np.ones((1, 4, 1))])  # R_0 != 1
        with self.assertRaises(ValidationError):
            CPKernel([np.ones((4, 2)), np.ones((4, 3))])
        with self.assertRaises(ValidationError):
            DenseKernel(np.ones((3, 4)))
        with self.assertRaises(ValidationError):
            tt_element(constant_tt(1.0, 3, 4), (1, 2, 5))

    def test_kernel_element_dispatch(self):
        kernel = constant_tt(3.0, 2, 4)
        self.assertEqual(kernel_element(kernel, (2, 2)), 3.0)
        self.assertEqual(kernel_element(tt_to_dense(kernel), (2, 2)), 3.0)
        with self.assertRaises(ValidationError):
            kernel_element(np.ones((4, 4)), (1, 1))


def dense_element_of(kernel, idx):
    return kernel_element(kernel, idx)


class TestDenseFromSpec(unittest.TestCase):
    def test_constant(self):
        dense = dense_from_spec(KernelSpec("constant", 3, c=1.0), 2)
        self.assertEqual(dense.values.shape, (2, 2, 2))
        assert_array_equal(dense.values, 1.0)

    def test_linear_brownian(self):
        dense = dense_from_spec(KernelSpec("brownian", 2, mu=(1, 0)), 3)
        assert_allclose(dense.values, [[2, 3, 4], [3, 4, 5], [4, 5, 6]], rtol=1e-14)

    def test_ternary_brownian_matches_elements(self):
        spec = KernelSpec("brownian", 3, mu=TERNARY_MU)
        dense = dense_from_spec(spec, 4)
        for idx in itertools.product(range(1, 5), repeat=3):
            self.assertAlmostEqual(kernel_element(dense, idx), brownian_element(spec.brownian, idx), places=12)

    def test_budget(self):
        spec = KernelSpec("constant", 3)
        with self.assertRaises(BudgetExceededError) as context:
            dense_from_spec(spec, 2 ** 9)
        self.assertIn("reduce N", str(context.exception))
        self.assertEqual(context.exception.elements, 2 ** 27)
        with self.assertRaises(BudgetExceededError):
            dense_from_spec(spec, 8, budget=100)

    def test_table_files(self):
        values = np.arange(27, dtype=np.float64).reshape(3, 3, 3)
        with tempfile.TemporaryDirectory() as tmp:
            binary = Path(tmp) / "kernel.bin"
            values.astype("<f8").tofile(binary)
            text = Path(tmp) / "kernel.txt"
            np.savetxt(text, values.ravel())
            for path in (binary, text):
                assert_array_equal(load_table(path, 3, 3), values)
                dense = dense_from_spec(KernelSpec("table", 3, table_path=str(path)), 3)
                assert_array_equal(dense.values, values)
            with self.assertRaises(ValidationError):
                load_table(binary, 4, 3)


class TestKernelSpec(unittest.TestCase):
    def test_from_dict(self):
        spec = KernelSpec.from_dict({"type": "brownian", "D": 3, "mu": [1 / 3, -1 / 3, 0]})
        self.assertEqual(spec.order, 3)
        self.assertEqual(spec.brownian.dimension, 3)
        self.assertEqual(KernelSpec.from_dict(spec.to_dict()), spec)

    def test_relative_table_path(self):
        spec = KernelSpec.from_dict({"type": "table", "D": 2, "table_path": "k.bin"}, base_dir="/data")
        self.assertEqual(Path(spec.table_path), Path("/data") / "k.bin")

    def test_invalid(self):
        with self.assertRaises(ConfigError):
            KernelSpec("gaussian", 2)
        with self.assertRaises(ConfigError):
            KernelSpec("brownian", 3, mu=(1, 0))
        with self.assertRaises(ConfigError):
            KernelSpec("table", 2)
        with self.assertRaises(ConfigError):
            KernelSpec.from_dict({"type": "constant", "D": 2, "scale": 3})


class TestSymmetry(unittest.TestCase):
    def test_brownian_is_symmetric(self):
        rng = np.random.default_rng(9)
        kernel = build_brownian_tt(BrownianSpec((0.9, -0.3, 0.1, 0.5)), 8)
        self.assertLessEqual(symmetry_defect(kernel, rng=rng), 1e-12)

    def test_asymmetric_table(self):
        values = np.arange(1, 17, dtype=np.float64).reshape(4, 4)
        self.assertGreater(symmetry_defect(DenseKernel(values), samples=200, rng=np.random.default_rng(0)), 0.1)


if __name__ == '__main__':
    unittest.main()
