# kinetics.py

import logging
import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
import scipy.fft

from tt_aggregation.exceptions import ValidationError
from tt_aggregation.parallel import SERIAL_PLAN, block_core
from tt_aggregation.tt_core import (
    DEFAULT_ELEMENT_BUDGET,
    CPKernel,
    DenseKernel,
    TTKernel,
    cp_from_spec,
    dense_from_spec,
    symmetry_defect,
    tt_from_spec,
)

logger = logging.getLogger(__name__)

REPRESENTATIONS = ("tt", "cp", "dense", "auto")
# Fastest first: CP spectra are scalars, TT spectra are small matrices
PREFERENCE = (CPKernel, TTKernel, DenseKernel)


class ConcentrationState:
    """
    Mean concentrations n_1, ..., n_N of particles of each size at time t.

    The vector is copied and made read-only. Negative entries are allowed here;
    the integrator monitors them.

    Attributes:
        n (numpy.ndarray): Concentrations, index k - 1 holds size k.
        t (float): Time.
    """

    def __init__(self, n, t=0.0):
        n = np.array(n, dtype=np.float64)
        if n.ndim != 1 or n.shape[0] < 2:
            raise ValidationError(f"concentrations must be a vector of length >= 2, got shape {n.shape}")
        if not np.all(np.isfinite(n)):
            raise ValidationError("concentrations must be finite")
        n.setflags(write=False)
        self.n = n
        self.t = float(t)

    @property
    def mode_size(self):
        """N, the number of size classes."""
        return self.n.shape[0]

    def __len__(self):
        return self.n.shape[0]

    def __repr__(self):
        return f"ConcentrationState(N={self.mode_size}, t={self.t})"


@dataclass
class RhsResult:
    """
    Gain, loss and total right-hand side; ``s`` is always exactly ``p + q``.

    Attributes:
        p (numpy.ndarray): Gain summed over collision orders.
        q (numpy.ndarray): Loss summed over collision orders.
        per_order (dict or None): order -> (p_d, q_d), when requested.
    """

    p: np.ndarray
    q: np.ndarray
    per_order: dict = None
    s: np.ndarray = field(init=False)

    def __post_init__(self):
        self.s = self.p + self.q


class KernelSet:
    """
    The kernels C^(d) of every configured collision order d.

    Several representations of one order may be registered; evaluation uses the
    fastest one (CP, then TT, then dense).
    """

    def __init__(self, kernels=()):
        self._kernels = {}
        for kernel in kernels:
            self.add(kernel)

    def add(self, kernel):
        """
        Registers a kernel under its own dimension d.

        Raises:
            ValidationError: On an unsupported type or a mode size differing from the others.
        """
        if not isinstance(kernel, PREFERENCE):
            raise ValidationError(f"unsupported kernel representation {type(kernel).__name__}")
        if self._kernels and kernel.mode_size != self.mode_size:
            raise ValidationError(
                f"kernel {kernel!r} has N = {kernel.mode_size}, the set uses N = {self.mode_size}"
            )
        self._kernels.setdefault(kernel.dimension, []).append(kernel)
        return self

    @property
    def orders(self):
        """Configured collision orders, ascending."""
        return sorted(self._kernels)

    @property
    def mode_size(self):
        """N shared by every kernel, or None for an empty set."""
        for kernels in self._kernels.values():
            return kernels[0].mode_size
        return None

    def __len__(self):
        return len(self._kernels)

    def __contains__(self, order):
        return order in self._kernels

    def __getitem__(self, order):
        return self.preferred(order)

    def representations(self, order):
        """Every registered representation of order ``order``, in insertion order."""
        return tuple(self._kernels[order])

    def preferred(self, order):
        """The fastest registered representation of order ``order``."""
        if order not in self._kernels:
            raise ValidationError(f"no kernel configured for collision order {order}")
        return min(self._kernels[order], key=lambda kernel: PREFERENCE.index(type(kernel)))

    def check_symmetry(self, samples=32, rng=None, tolerance=1e-12):
        """
        Samples every kernel for symmetry violations.

        Returns:
            dict: order -> worst sampled relative defect.

        Raises:
            ValidationError: If any defect exceeds ``tolerance``.
        """
        defects = {}
        for order in self.orders:
            defects[order] = max(symmetry_defect(k, samples, rng) for k in self._kernels[order])
            if defects[order] > tolerance:
                raise ValidationError(
                    f"kernel of order {order} is not symmetric (sampled defect {defects[order]:.3e})"
                )
        return defects

    @classmethod
    def from_specs(cls, specs, mode_size, representation="tt", budget=DEFAULT_ELEMENT_BUDGET):
        """
        Builds a KernelSet from kernel specs.

        Args:
            specs (iterable of KernelSpec): One spec per collision order.
            mode_size (int): N.
            representation (str): "tt", "cp", "dense" or "auto" (TT and CP both registered).
            budget (int): Element budget for dense kernels.
        """
        if representation not in REPRESENTATIONS:
            raise ValidationError(f"unknown representation {representation!r}; use one of {REPRESENTATIONS}")
        kernels = cls()
        for spec in specs:
            if spec.order in kernels:
                raise ValidationError(f"collision order {spec.order} configured twice")
            if spec.kind == "table" or representation == "dense":
                logger.warning("order %d uses the O(N^%d) dense path", spec.order, spec.order)
                dense = dense_from_spec(spec, mode_size, budget=budget)
                if spec.kind == "table":
                    defect = symmetry_defect(dense, samples=32)
                    if defect > 1e-12:
                        logger.warning("table kernel %s is not symmetric (sampled defect %.3e); "
                                       "the loss operator assumes symmetry", spec.table_path, defect)
                kernels.add(dense)
                continue
            if representation in ("tt", "auto"):
                kernels.add(tt_from_spec(spec, mode_size))
            if representation in ("cp", "auto"):
                kernels.add(cp_from_spec(spec, mode_size))
        return kernels


def _concentrations(kernel, state):
    n = state.n if isinstance(state, ConcentrationState) else ConcentrationState(state).n
    if kernel.mode_size != n.shape[0]:
        raise ValidationError(f"kernel has N = {kernel.mode_size}, state has N = {n.shape[0]}")
    return n


def _gain_from_signal(signal, order, mode_size):
    # Positions 1..N of the inverse transform hold index sums 1..N; sums below d cannot occur
    p = np.zeros(mode_size)
    p[order - 1:] = signal[order:mode_size + 1] / math.factorial(order)
    return p


def rhs_dense_P(kernel, state):
    """
    Gain operator by direct O(N^d) summation over multi-indices with |i| = k.

    Args:
        kernel (DenseKernel): Kernel of order d.
        state (ConcentrationState): Concentrations.

    Returns:
        numpy.ndarray: p with p_k = (1/d!) Σ_{|i|=k} C_i n_{i_1}...n_{i_d}, k = 1..N.
    """
    n = _concentrations(kernel, state)
    order, mode_size = kernel.dimension, kernel.mode_size
    sizes = np.arange(1, mode_size + 1)
    # The trailing d-1 modes are shared by every slice of the leading mode
    tail_sums = reduce(np.add.outer, [sizes] * (order - 1)).ravel()
    tail_weights = reduce(np.multiply.outer, [n] * (order - 1)).ravel()
    totals = np.zeros(order * mode_size + 1)
    for lead in range(mode_size):
        weights = kernel.values[lead].ravel() * tail_weights * n[lead]
        totals += np.bincount(tail_sums + lead + 1, weights=weights, minlength=totals.shape[0])
    return totals[1:mode_size + 1] / math.factorial(order)


def rhs_dense_Q(kernel, state):
    """
    Loss operator by direct contraction of the first d-1 modes with n.

    Returns:
        numpy.ndarray: q with q_k = -n_k/(d-1)! Σ_i C_{i,k} n_{i_1}...n_{i_{d-1}}.
    """
    n = _concentrations(kernel, state)
    contracted = kernel.values
    for _ in range(kernel.dimension - 1):
        contracted = np.tensordot(n, contracted, axes=(0, 0))
    return -n * contracted / math.factorial(kernel.dimension - 1)


def rhs_tt_P(kernel, state, plan=None):
    """
    Gain operator for a TT kernel through padded FFT convolutions of the core fibers.

    Every fiber H^(λ)[a, :, b] is weighted by n, zero-padded and transformed; per
    frequency bin the chain of R_{λ-1} x R_λ spectrum matrices collapses to one
    scalar, and a single inverse transform yields all index sums at once.

    Args:
        kernel (TTKernel): Kernel of order d.
        state (ConcentrationState): Concentrations.
        plan (ExecutionPlan, optional): Parallel execution settings.

    Returns:
        numpy.ndarray: The gain vector p (length N).
    """
    plan = plan or SERIAL_PLAN
    n = _concentrations(kernel, state)
    order, mode_size = kernel.dimension, kernel.mode_size
    length = plan.fft_length(order, mode_size)
    partition = plan.partition(mode_size)
    logger.debug("TT gain: d=%d N=%d ranks=%s L=%d blocks=%d",
                 order, mode_size, kernel.ranks, length, partition.workers)

    padded = [np.zeros((core.shape[0], length, core.shape[2])) for core in kernel.cores]

    def weigh(p):
        block = partition.block(p)
        weights = n[block][np.newaxis, :, np.newaxis]
        for level, buffer in enumerate(padded, start=1):
            # Size k sits at position k, so transform positions add like sizes
            buffer[:, block.start + 1:block.stop + 1, :] = block_core(kernel, level, p, partition) * weights

    plan.map(weigh, range(1, partition.workers + 1))
    spectra = [scipy.fft.rfft(buffer, axis=1, workers=plan.fft_workers) for buffer in padded]

    bins = spectra[0].shape[1]
    chain = np.empty(bins, dtype=np.complex128)

    def multiply(chunk):
        # Left to right: the running product stays a row vector per bin
        row = spectra[0][0, chunk, :][:, np.newaxis, :]
        for spectrum in spectra[1:]:
            row = np.matmul(row, spectrum[:, chunk, :].transpose(1, 0, 2))
        chain[chunk] = row[:, 0, 0]

    plan.map(multiply, plan.frequency_chunks(bins))
    signal = scipy.fft.irfft(chain, n=length)
    return _gain_from_signal(signal, order, mode_size)


def rhs_tt_Q(kernel, state, plan=None):
    """
    Loss operator for a symmetric TT kernel; the last mode plays the size-k role.

    Args:
        kernel (TTKernel): Symmetric kernel of order d.
        state (ConcentrationState): Concentrations.
        plan (ExecutionPlan, optional): Parallel execution settings.

    Returns:
        numpy.ndarray: The loss vector q (length N).
    """
    plan = plan or SERIAL_PLAN
    n = _concentrations(kernel, state)
    order, mode_size = kernel.dimension, kernel.mode_size
    partition = plan.partition(mode_size)
    blocks = range(1, partition.workers + 1)

    row = np.ones(1)
    for level in range(1, order):
        contracted = plan.map_reduce(
            lambda p, level=level: np.einsum(
                "aib,i->ab", block_core(kernel, level, p, partition), n[partition.block(p)]
            ),
            blocks,
        )
        row = row @ contracted

    q = np.empty(mode_size)
    scale = math.factorial(order - 1)

    def scatter(p):
        block = partition.block(p)
        q[block] = -n[block] * (row @ block_core(kernel, order, p, partition)[:, :, 0]) / scale

    plan.map(scatter, blocks)
    return q


def rhs_cp_P(kernel, state, plan=None):
    """
    Gain operator for a CP kernel: per rank term the d weighted factor columns are
    convolved via padded FFTs, with spectra multiplied elementwise.

    Returns:
        numpy.ndarray: The gain vector p (length N).
    """
    plan = plan or SERIAL_PLAN
    n = _concentrations(kernel, state)
    order, mode_size = kernel.dimension, kernel.mode_size
    length = plan.fft_length(order, mode_size)
    partition = plan.partition(mode_size)

    padded = np.zeros((order, length, kernel.rank))

    def weigh(p):
        block = partition.block(p)
        for mode, factor in enumerate(kernel.factors):
            padded[mode, block.start + 1:block.stop + 1, :] = factor[block] * n[block, np.newaxis]

    plan.map(weigh, range(1, partition.workers + 1))
    spectra = scipy.fft.rfft(padded, axis=1, workers=plan.fft_workers)

    bins = spectra.shape[1]
    combined = np.empty(bins, dtype=np.complex128)

    def multiply(chunk):
        # Sum over rank terms before the inverse transform (it is linear)
        combined[chunk] = np.prod(spectra[:, chunk, :], axis=0).sum(axis=1)

    plan.map(multiply, plan.frequency_chunks(bins))
    signal = scipy.fft.irfft(combined, n=length)
    return _gain_from_signal(signal, order, mode_size)


def rhs_cp_Q(kernel, state, plan=None):
    """
    Loss operator for a symmetric CP kernel through per-rank scalar contractions.

    Returns:
        numpy.ndarray: The loss vector q (length N).
    """
    plan = plan or SERIAL_PLAN
    n = _concentrations(kernel, state)
    order, mode_size = kernel.dimension, kernel.mode_size
    partition = plan.partition(mode_size)
    blocks = range(1, partition.workers + 1)

    weights = np.ones(kernel.rank)
    for factor in kernel.factors[:-1]:
        weights = weights * plan.map_reduce(
            lambda p, factor=factor: n[partition.block(p)] @ factor[partition.block(p)], blocks
        )

    q = np.empty(mode_size)
    scale = math.factorial(order - 1)
    last = kernel.factors[-1]

    def scatter(p):
        block = partition.block(p)
        q[block] = -n[block] * (last[block] @ weights) / scale

    plan.map(scatter, blocks)
    return q


OPERATORS = {
    DenseKernel: (lambda k, s, plan: rhs_dense_P(k, s), lambda k, s, plan: rhs_dense_Q(k, s)),
    TTKernel: (rhs_tt_P, rhs_tt_Q),
    CPKernel: (rhs_cp_P, rhs_cp_Q),
}


def rhs_total(kernels, state, plan=None, breakdown=False):
    """
    Total right-hand side S[n] = Σ_d (P^(d)[n] + Q^(d)[n]).

    Args:
        kernels (KernelSet): Kernels per collision order.
        state (ConcentrationState): Concentrations.
        plan (ExecutionPlan, optional): Parallel execution settings.
        breakdown (bool): Keep (p_d, q_d) for every order.

    Returns:
        RhsResult: Gain, loss and their sum.

    Raises:
        ValidationError: If no orders are configured or sizes disagree.
    """
    if len(kernels) == 0:
        raise ValidationError("no collision orders configured")
    if kernels.mode_size != state.mode_size:
        raise ValidationError(f"kernels have N = {kernels.mode_size}, state has N = {state.mode_size}")

    p = np.zeros(state.mode_size)
    q = np.zeros(state.mode_size)
    per_order = {} if breakdown else None
    for order in kernels.orders:
        kernel = kernels.preferred(order)
        gain, loss = OPERATORS[type(kernel)]
        p_d = gain(kernel, state, plan)
        q_d = loss(kernel, state, plan)
        p += p_d
        q += q_d
        if breakdown:
            per_order[order] = (p_d, q_d)
    return RhsResult(p, q, per_order)
