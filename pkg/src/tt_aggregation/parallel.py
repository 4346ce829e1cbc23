# parallel.py

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass

import numpy as np
import scipy.fft

from tt_aggregation.exceptions import ValidationError

logger = logging.getLogger(__name__)

FFT_LENGTH_POLICIES = ("pow2", "fast")


@dataclass(frozen=True)
class PartitionPlan:
    """
    Splits the size coordinate 1..N into P equal, contiguous blocks.

    Block p (1-based) covers sizes (p-1)·N/P + 1 through p·N/P.

    Attributes:
        mode_size (int): N.
        workers (int): P; must divide N.
    """

    mode_size: int
    workers: int

    def __post_init__(self):
        if self.workers < 1:
            raise ValidationError(f"worker count must be >= 1, got {self.workers}")
        if self.mode_size < 1:
            raise ValidationError(f"N must be >= 1, got {self.mode_size}")
        if self.mode_size % self.workers:
            padded = -(-self.mode_size // self.workers) * self.workers
            raise ValidationError(
                f"N = {self.mode_size} is not divisible by P = {self.workers}; "
                f"pad N to a multiple of P (e.g. N = {padded}) or pick another worker count"
            )

    @property
    def block_size(self):
        """Sizes per block, N / P."""
        return self.mode_size // self.workers

    @property
    def blocks(self):
        """1-based inclusive size ranges [(start, stop), ...], one per block."""
        size = self.block_size
        return tuple(((p - 1) * size + 1, p * size) for p in range(1, self.workers + 1))

    def block(self, p):
        """0-based storage slice of block p (1 <= p <= P)."""
        if not 1 <= p <= self.workers:
            raise ValidationError(f"block {p} outside [1, {self.workers}]")
        size = self.block_size
        return slice((p - 1) * size, p * size)

    def gather(self, vector):
        """Splits a length-N vector into its P blocks (views, in block order)."""
        vector = np.asarray(vector)
        if vector.shape[0] != self.mode_size:
            raise ValidationError(f"vector has length {vector.shape[0]}, partition covers {self.mode_size}")
        return [vector[self.block(p)] for p in range(1, self.workers + 1)]

    def scatter(self, blocks):
        """Reassembles P blocks into one length-N vector."""
        if len(blocks) != self.workers:
            raise ValidationError(f"expected {self.workers} blocks, got {len(blocks)}")
        if any(len(b) != self.block_size for b in blocks):
            raise ValidationError(f"every block must hold {self.block_size} entries")
        return np.concatenate(blocks)


def make_partition(mode_size, workers):
    """
    Builds the block decomposition of 1..N over P workers.

    Raises:
        ValidationError: If P does not divide N.
    """
    return PartitionPlan(mode_size, workers)


def block_core(kernel, level, p, partition):
    """
    The slab of TT core ``level`` owned by worker ``p``: shape (R_{λ-1}, N/P, R_λ).

    Args:
        kernel (TTKernel): The kernel.
        level (int): Core number λ, 1-based.
        p (int): Block number, 1-based.
        partition (PartitionPlan): Decomposition of the kernel's mode size.

    Returns:
        numpy.ndarray: A read-only view into the core.
    """
    if not 1 <= level <= kernel.dimension:
        raise ValidationError(f"core {level} outside [1, {kernel.dimension}]")
    if partition.mode_size != kernel.mode_size:
        raise ValidationError(
            f"partition covers N = {partition.mode_size}, kernel has N = {kernel.mode_size}"
        )
    return kernel.cores[level - 1][:, partition.block(p), :]


def _tree_sum(parts):
    """Pairwise sum in a fixed order, independent of scheduling."""
    parts = list(parts)
    while len(parts) > 1:
        paired = [parts[i] + parts[i + 1] for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            paired.append(parts[-1])
        parts = paired
    return parts[0]


class ExecutionPlan:
    """
    How right-hand-side evaluations spread work over a pool of threads.

    The batched fiber FFTs run on scipy's own FFT threads; block-local weighting,
    block partial sums, output scatter and the per-frequency matrix chains run on
    a thread pool owned by the plan. Each ``map`` call is a barrier.

    Attributes:
        workers (int): Pool size P.
        fft_length_policy (str): "pow2" or "fast".
        deterministic (bool): Reduce block partial sums in a fixed tree order.
        parallel_fft (bool): Hand ``workers`` to scipy.fft.
        parallel_blocks (bool): Decompose the size coordinate into P blocks.
    """

    def __init__(self, workers=1, fft_length="pow2", deterministic=True,
                 parallel_fft=True, parallel_blocks=True):
        if int(workers) < 1:
            raise ValidationError(f"worker count must be >= 1, got {workers}")
        if fft_length not in FFT_LENGTH_POLICIES:
            raise ValidationError(f"unknown FFT length policy {fft_length!r}; use one of {FFT_LENGTH_POLICIES}")
        self.workers = int(workers)
        self.fft_length_policy = fft_length
        self.deterministic = deterministic
        self.parallel_fft = parallel_fft
        self.parallel_blocks = parallel_blocks
        self._pool = None

    def __repr__(self):
        return (
            f"ExecutionPlan(workers={self.workers}, fft_length={self.fft_length_policy!r}, "
            f"deterministic={self.deterministic}, parallel_fft={self.parallel_fft}, "
            f"parallel_blocks={self.parallel_blocks})"
        )

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()

    def close(self):
        """Shuts the thread pool down; the plan can still be reused afterwards."""
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    @property
    def fft_workers(self):
        """Thread count handed to scipy.fft."""
        return self.workers if self.parallel_fft else 1

    def fft_length(self, order, mode_size):
        """
        Padded transform length for d-fold convolutions of length-N sequences.

        Index sums reach d·N, so any length >= d·N + 1 avoids circular aliasing.
        """
        minimum = order * mode_size + 1
        if self.fft_length_policy == "pow2":
            return 1 << (minimum - 1).bit_length()
        return scipy.fft.next_fast_len(minimum, real=True)

    def partition(self, mode_size):
        """The block decomposition used for weighting, partial sums and scatter."""
        blocks = self.workers if self.parallel_blocks else 1
        return make_partition(mode_size, blocks)

    def frequency_chunks(self, count):
        """Splits ``count`` frequency bins into at most P contiguous slices."""
        pieces = min(self.workers, count)
        bounds = np.linspace(0, count, pieces + 1).astype(int)
        return [slice(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])]

    def _executor(self):
        if self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=self.workers, thread_name_prefix="tt-aggregation")
        return self._pool

    def map(self, func, items):
        """Applies ``func`` to every item and waits for all of them."""
        items = list(items)
        if self.workers == 1 or len(items) == 1:
            return [func(item) for item in items]
        return list(self._executor().map(func, items))

    def map_reduce(self, func, items):
        """
        Sums ``func(item)`` over the items.

        With ``deterministic`` the partial results are added in a fixed tree
        order; otherwise they are accumulated as they complete.
        """
        items = list(items)
        if self.deterministic or self.workers == 1 or len(items) == 1:
            return _tree_sum(self.map(func, items))
        futures = [self._executor().submit(func, item) for item in items]
        total = None
        for future in as_completed(futures):
            part = future.result()
            total = part if total is None else total + part
        return total


SERIAL_PLAN = ExecutionPlan(workers=1)
