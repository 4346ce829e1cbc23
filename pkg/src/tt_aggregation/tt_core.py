# tt_core.py

import itertools
import logging
import math
import operator
from dataclasses import dataclass
from functools import reduce
from pathlib import Path

import numpy as np

from tt_aggregation.exceptions import BudgetExceededError, ConfigError, ValidationError

logger = logging.getLogger(__name__)

# Dense N^D arrays only exist for verification, so they are capped
DEFAULT_ELEMENT_BUDGET = 2 ** 26
# D! permutations are enumerated explicitly by the element evaluators
PERMUTATION_GUARD = 8

KERNEL_TYPES = ("brownian", "constant", "table")
TEXT_TABLE_SUFFIXES = (".txt", ".csv", ".dat")


def _frozen(array):
    """Return a read-only float64 copy of ``array``."""
    out = np.array(array, dtype=np.float64)
    out.setflags(write=False)
    return out


def power_table(exponents, mode_size):
    """
    Tabulates the power functions i ↦ i^μ for every exponent.

    Powers are evaluated as exp(μ·ln i), which handles fractional and negative
    exponents uniformly (i ≥ 1, so the logarithm is always defined).

    Args:
        exponents (sequence of float): Exponents μ_1, ..., μ_D.
        mode_size (int): Largest particle size N.

    Returns:
        numpy.ndarray: Array of shape (D, N); row s holds (1^μ_s, ..., N^μ_s).
    """
    sizes = np.arange(1, mode_size + 1, dtype=np.float64)
    return np.exp(np.outer(np.asarray(exponents, dtype=np.float64), np.log(sizes)))


def check_dense_budget(mode_size, dimension, budget=DEFAULT_ELEMENT_BUDGET):
    """
    Refuses dense tensors with more than ``budget`` elements.

    Raises:
        BudgetExceededError: If N^D exceeds the budget.
    """
    elements = mode_size ** dimension
    if elements > budget:
        raise BudgetExceededError(elements, budget)
    return elements


@dataclass(frozen=True)
class MultiIndex:
    """
    A tuple of 1-based particle sizes (i_1, ..., i_D).

    Attributes:
        entries (tuple of int): The sizes; every entry is at least 1.
    """

    entries: tuple

    def __post_init__(self):
        try:
            entries = tuple(operator.index(i) for i in self.entries)
        except TypeError as exc:
            raise ValidationError(f"multi-index entries must be integers: {self.entries!r}") from exc
        if len(entries) < 2:
            raise ValidationError(f"multi-index needs at least 2 entries, got {len(entries)}")
        if min(entries) < 1:
            raise ValidationError(f"particle sizes are 1-based, got {entries}")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def coerce(cls, idx):
        """Accepts a MultiIndex or any sequence of integers."""
        return idx if isinstance(idx, cls) else cls(tuple(idx))

    @property
    def dimension(self):
        """Number of entries D."""
        return len(self.entries)

    @property
    def total(self):
        """|i_D| = i_1 + ... + i_D, the size of the merged particle."""
        return sum(self.entries)

    def offsets(self):
        """0-based storage offsets; internal use only."""
        return tuple(i - 1 for i in self.entries)

    def check(self, dimension, mode_size):
        """
        Validates the index against a tensor of the given dimension and mode size.

        Raises:
            ValidationError: On a length mismatch or an entry above ``mode_size``.
        """
        if self.dimension != dimension:
            raise ValidationError(
                f"index {self.entries} has {self.dimension} entries, tensor dimension is {dimension}"
            )
        if max(self.entries) > mode_size:
            raise ValidationError(f"index {self.entries} out of range [1, {mode_size}]")
        return self


@dataclass(frozen=True)
class BrownianSpec:
    """
    Exponent vector (μ_1, ..., μ_D) of a generalized Brownian kernel.

    Attributes:
        exponents (tuple of float): The exponents; at least two of them.
    """

    exponents: tuple

    def __post_init__(self):
        exponents = tuple(float(mu) for mu in self.exponents)
        if len(exponents) < 2:
            raise ValidationError(f"a Brownian kernel needs D >= 2 exponents, got {len(exponents)}")
        if not all(math.isfinite(mu) for mu in exponents):
            raise ValidationError(f"exponents must be finite, got {exponents}")
        object.__setattr__(self, "exponents", exponents)

    @property
    def dimension(self):
        """Kernel order D, one exponent per particle."""
        return len(self.exponents)


class SubsetCodec:
    """
    Bijection between rank indices 1..binomial(D, λ) and λ-element subsets of {1..D}.

    Subsets are stored as increasing tuples and enumerated in colexicographic
    order, so cores built from the codec are reproducible run to run.

    Attributes:
        dimension (int): D.
        level (int): λ, the subset size (0 gives the single empty subset).
        subsets (tuple of tuple): The enumeration; ``subsets[r - 1]`` decodes rank r.
    """

    def __init__(self, dimension, level):
        if not 0 <= level <= dimension:
            raise ValidationError(f"subset level {level} outside [0, {dimension}]")
        self.dimension = dimension
        self.level = level
        combos = itertools.combinations(range(1, dimension + 1), level)
        self.subsets = tuple(sorted(combos, key=lambda subset: subset[::-1]))
        self._ranks = {subset: rank for rank, subset in enumerate(self.subsets, start=1)}

    def __len__(self):
        return len(self.subsets)

    def decode(self, rank):
        """Returns the subset for a 1-based rank index."""
        if not 1 <= rank <= len(self.subsets):
            raise ValidationError(f"rank index {rank} outside [1, {len(self.subsets)}]")
        return self.subsets[rank - 1]

    def encode(self, subset):
        """Returns the 1-based rank index of a subset (given in any order)."""
        key = tuple(sorted(subset))
        try:
            return self._ranks[key]
        except KeyError:
            raise ValidationError(
                f"{key} is not a {self.level}-subset of {{1..{self.dimension}}}"
            ) from None


class TTKernel:
    """
    A D-way kernel tensor stored in tensor-train format.

    Core λ has shape (R_{λ-1}, N, R_λ) with R_0 = R_D = 1; an element is the
    product of the core slices selected by its multi-index. Cores are read-only.

    Attributes:
        cores (tuple of numpy.ndarray): The cores H^(1), ..., H^(D).
    """

    def __init__(self, cores):
        cores = tuple(_frozen(core) for core in cores)
        if len(cores) < 2:
            raise ValidationError(f"a TT kernel needs at least 2 cores, got {len(cores)}")
        for position, core in enumerate(cores, start=1):
            if core.ndim != 3:
                raise ValidationError(f"core {position} must be 3-way, got shape {core.shape}")
        if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
            raise ValidationError("boundary TT ranks R_0 and R_D must equal 1")
        mode_size = cores[0].shape[1]
        for position, (left, right) in enumerate(zip(cores, cores[1:]), start=1):
            if left.shape[2] != right.shape[0]:
                raise ValidationError(
                    f"rank mismatch between cores {position} and {position + 1}: "
                    f"{left.shape} vs {right.shape}"
                )
        if any(core.shape[1] != mode_size for core in cores):
            raise ValidationError("all TT cores must share the mode size N")
        self.cores = cores

    @property
    def dimension(self):
        """Number of cores D."""
        return len(self.cores)

    @property
    def mode_size(self):
        """N, the middle extent shared by every core."""
        return self.cores[0].shape[1]

    @property
    def ranks(self):
        """(R_0, R_1, ..., R_D)."""
        return (1,) + tuple(core.shape[2] for core in self.cores)

    @property
    def max_rank(self):
        """Largest TT rank R; bounded by tt_max_rank_bound for Brownian kernels."""
        return max(self.ranks)

    def __repr__(self):
        return f"TTKernel(D={self.dimension}, N={self.mode_size}, ranks={self.ranks})"


class CPKernel:
    """
    A D-way kernel tensor stored as a sum of R rank-one terms.

    Attributes:
        factors (tuple of numpy.ndarray): One (N, R) factor matrix per mode.
    """

    def __init__(self, factors):
        factors = tuple(_frozen(factor) for factor in factors)
        if len(factors) < 2:
            raise ValidationError(f"a CP kernel needs at least 2 factors, got {len(factors)}")
        shape = factors[0].shape
        if len(shape) != 2:
            raise ValidationError(f"CP factors must be matrices, got shape {shape}")
        if any(factor.shape != shape for factor in factors):
            raise ValidationError("all CP factors must share mode size N and rank R")
        self.factors = factors

    @property
    def dimension(self):
        """Number of factor matrices D."""
        return len(self.factors)

    @property
    def mode_size(self):
        """N, the row count of every factor."""
        return self.factors[0].shape[0]

    @property
    def rank(self):
        """R, the number of rank-one terms."""
        return self.factors[0].shape[1]

    def __repr__(self):
        return f"CPKernel(D={self.dimension}, N={self.mode_size}, R={self.rank})"


class DenseKernel:
    """
    A D-way kernel tensor stored in full; used as the verification oracle.

    Attributes:
        values (numpy.ndarray): Read-only array of shape (N,) * D.
    """

    def __init__(self, values, budget=DEFAULT_ELEMENT_BUDGET):
        values = np.asarray(values)
        if values.ndim < 2:
            raise ValidationError(f"a dense kernel needs D >= 2 axes, got shape {values.shape}")
        if len(set(values.shape)) != 1:
            raise ValidationError(f"dense kernel must be N x ... x N, got shape {values.shape}")
        check_dense_budget(values.shape[0], values.ndim, budget)
        self.values = _frozen(values)

    @property
    def dimension(self):
        """Number of axes D."""
        return self.values.ndim

    @property
    def mode_size(self):
        """N, the extent of every axis."""
        return self.values.shape[0]

    def __repr__(self):
        return f"DenseKernel(D={self.dimension}, N={self.mode_size})"


def tt_max_rank_bound(dimension):
    """
    Largest TT-rank of a generalized Brownian kernel: binomial(D, ceil(D/2)).

    Args:
        dimension (int): D, at least 2.

    Returns:
        int: The bound.
    """
    if dimension < 2:
        raise ValidationError(f"dimension must be >= 2, got {dimension}")
    return math.comb(dimension, math.ceil(dimension / 2))


def brownian_element(spec, idx):
    """
    Evaluates one generalized Brownian coefficient by summing over all D! permutations.

    C[i] = Σ_σ Π_λ i_{σ(λ)}^{μ_λ}; the value does not depend on the order of ``idx``.

    Args:
        spec (BrownianSpec): The exponents.
        idx (MultiIndex or sequence of int): 1-based sizes, one per exponent.

    Returns:
        float: The coefficient.

    Raises:
        ValidationError: On a dimension mismatch or D above PERMUTATION_GUARD.
    """
    idx = MultiIndex.coerce(idx)
    dimension = spec.dimension
    if idx.dimension != dimension:
        raise ValidationError(f"index {idx.entries} does not match kernel dimension {dimension}")
    if dimension > PERMUTATION_GUARD:
        raise ValidationError(
            f"D = {dimension} exceeds the permutation enumeration guard ({PERMUTATION_GUARD})"
        )
    logs = np.log(np.asarray(idx.entries, dtype=np.float64))
    perms = np.array(list(itertools.permutations(range(dimension))))
    # Row σ of logs[perms] is (ln i_σ(1), ..., ln i_σ(D))
    return float(np.exp(logs[perms] @ np.asarray(spec.exponents)).sum())


def build_brownian_tt(spec, mode_size):
    """
    Constructs the exact TT decomposition of a generalized Brownian kernel.

    Rank index r_λ stands for a λ-subset of exponent labels (see SubsetCodec).
    Core λ+1 maps subset S to S ∪ {s} with the fiber i ↦ i^{μ_s}, and is zero
    everywhere else; chaining the cores adds one exponent label per mode, so
    every ordering of the labels (every permutation) is summed exactly once.

    Args:
        spec (BrownianSpec): Exponents μ_1, ..., μ_D.
        mode_size (int): N.

    Returns:
        TTKernel: Kernel with ranks binomial(D, λ).
    """
    if mode_size < 1:
        raise ValidationError(f"mode size must be >= 1, got {mode_size}")
    dimension = spec.dimension
    powers = power_table(spec.exponents, mode_size)
    codecs = [SubsetCodec(dimension, level) for level in range(dimension + 1)]

    cores = []
    for level in range(dimension):
        parents, children = codecs[level], codecs[level + 1]
        core = np.zeros((len(parents), mode_size, len(children)))
        for r_next, subset in enumerate(children.subsets):
            for label in subset:
                # The parent subset is the child without the newly added label
                r_prev = parents.encode(tuple(e for e in subset if e != label))
                core[r_prev - 1, :, r_next] = powers[label - 1]
        cores.append(core)

    kernel = TTKernel(cores)
    logger.debug("built Brownian TT kernel %r for exponents %s", kernel, spec.exponents)
    return kernel


def brownian_cp(spec, mode_size):
    """
    The analytic CP form of a generalized Brownian kernel: one rank-one term per permutation.

    Args:
        spec (BrownianSpec): Exponents; D must not exceed PERMUTATION_GUARD.
        mode_size (int): N.

    Returns:
        CPKernel: Kernel of rank D!.
    """
    dimension = spec.dimension
    if dimension > PERMUTATION_GUARD:
        raise ValidationError(
            f"D = {dimension} exceeds the permutation enumeration guard ({PERMUTATION_GUARD})"
        )
    powers = power_table(spec.exponents, mode_size)
    perms = np.array(list(itertools.permutations(range(dimension))))
    # Term π puts exponent μ_{π(λ)} on mode λ
    factors = [powers[perms[:, mode]].T for mode in range(dimension)]
    return CPKernel(factors)


def constant_tt(value, dimension, mode_size):
    """Rank-1 TT kernel with every element equal to ``value``."""
    cores = [np.ones((1, mode_size, 1)) for _ in range(dimension)]
    cores[0] = cores[0] * value
    return TTKernel(cores)


def constant_cp(value, dimension, mode_size):
    """Rank-1 CP kernel with every element equal to ``value``."""
    factors = [np.ones((mode_size, 1)) for _ in range(dimension)]
    factors[0] = factors[0] * value
    return CPKernel(factors)


def tt_element(kernel, idx):
    """
    Evaluates one element of a TT kernel as H^(1)[:, i_1, :] · ... · H^(D)[:, i_D, :].

    Raises:
        ValidationError: If the index does not fit the kernel.
    """
    idx = MultiIndex.coerce(idx).check(kernel.dimension, kernel.mode_size)
    row = np.ones((1, 1))
    for core, offset in zip(kernel.cores, idx.offsets()):
        row = row @ core[:, offset, :]
    return float(row[0, 0])


def cp_element(kernel, idx):
    """
    Evaluates one element of a CP kernel as Σ_r Π_λ F^(λ)[i_λ, r].

    Raises:
        ValidationError: If the index does not fit the kernel.
    """
    idx = MultiIndex.coerce(idx).check(kernel.dimension, kernel.mode_size)
    rows = [factor[offset] for factor, offset in zip(kernel.factors, idx.offsets())]
    return float(np.prod(rows, axis=0).sum())


def dense_element(kernel, idx):
    """
    Reads one element of a dense kernel.

    Args:
        kernel (DenseKernel): The tabulated kernel.
        idx (MultiIndex or sequence of int): 1-based sizes in [1, N].

    Returns:
        float: The stored value.

    Raises:
        ValidationError: If ``idx`` has the wrong length or leaves [1, N].
    """
    idx = MultiIndex.coerce(idx).check(kernel.dimension, kernel.mode_size)
    return float(kernel.values[idx.offsets()])


def kernel_element(kernel, idx):
    """Evaluates one element of any kernel representation."""
    if isinstance(kernel, TTKernel):
        return tt_element(kernel, idx)
    if isinstance(kernel, CPKernel):
        return cp_element(kernel, idx)
    if isinstance(kernel, DenseKernel):
        return dense_element(kernel, idx)
    raise ValidationError(f"unsupported kernel representation {type(kernel).__name__}")


def tt_to_dense(kernel, budget=DEFAULT_ELEMENT_BUDGET):
    """Expands a TT kernel into a DenseKernel (budget permitting)."""
    check_dense_budget(kernel.mode_size, kernel.dimension, budget)
    full = kernel.cores[0][0]
    for core in kernel.cores[1:]:
        full = np.tensordot(full, core, axes=(-1, 0))
    return DenseKernel(full[..., 0], budget=budget)


def cp_to_dense(kernel, budget=DEFAULT_ELEMENT_BUDGET):
    """Expands a CP kernel into a DenseKernel (budget permitting)."""
    check_dense_budget(kernel.mode_size, kernel.dimension, budget)
    full = kernel.factors[0]
    for factor in kernel.factors[1:]:
        # Broadcast a new mode in front of the trailing rank axis
        full = full[..., np.newaxis, :] * factor
    return DenseKernel(full.sum(axis=-1), budget=budget)


@dataclass(frozen=True)
class KernelSpec:
    """
    Serializable description of one collision-order kernel.

    JSON form: ``{"type": "brownian"|"constant"|"table", "D": d, "mu": [...],
    "c": value, "table_path": path}``.

    Attributes:
        kind (str): One of KERNEL_TYPES.
        order (int): Collision order d (the "D" field).
        mu (tuple of float): Exponents for Brownian kernels.
        c (float): Value of a constant kernel.
        table_path (str or None): File with N^d little-endian float64 values
            (row-major), or a whitespace/comma separated text file.
    """

    kind: str
    order: int
    mu: tuple = ()
    c: float = 1.0
    table_path: str = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "mu", tuple(float(m) for m in self.mu))
            object.__setattr__(self, "c", float(self.c))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"kernel exponents and constants must be numbers: {exc}") from exc
        if self.kind not in KERNEL_TYPES:
            raise ConfigError(f"unknown kernel type {self.kind!r}; expected one of {KERNEL_TYPES}")
        if not isinstance(self.order, int) or self.order < 2:
            raise ConfigError(f"kernel order D must be an integer >= 2, got {self.order!r}")
        if self.kind == "brownian" and len(self.mu) != self.order:
            raise ConfigError(
                f"Brownian kernel of order {self.order} needs {self.order} exponents, got {len(self.mu)}"
            )
        if self.kind == "table" and not self.table_path:
            raise ConfigError("table kernels need a table_path")

    @classmethod
    def from_dict(cls, data, base_dir=None):
        """
        Builds a spec from its JSON form; relative table paths resolve against ``base_dir``.
        """
        unknown = set(data) - {"type", "D", "mu", "c", "table_path"}
        if unknown:
            raise ConfigError(f"unknown kernel fields: {sorted(unknown)}")
        if "type" not in data or "D" not in data:
            raise ConfigError(f"kernel spec needs 'type' and 'D': {data!r}")
        table_path = data.get("table_path")
        if table_path and base_dir is not None and not Path(table_path).is_absolute():
            table_path = str(Path(base_dir) / table_path)
        return cls(
            kind=data["type"],
            order=data["D"],
            mu=data.get("mu", ()),
            c=data.get("c", 1.0),
            table_path=table_path,
        )

    def to_dict(self):
        """The JSON form read back by ``from_dict``; only fields of this kind are kept."""
        data = {"type": self.kind, "D": self.order}
        if self.kind == "brownian":
            data["mu"] = list(self.mu)
        elif self.kind == "constant":
            data["c"] = self.c
        else:
            data["table_path"] = self.table_path
        return data

    @property
    def brownian(self):
        """The exponents as a BrownianSpec."""
        return BrownianSpec(self.mu)


def load_table(path, mode_size, dimension):
    """
    Reads a tabulated kernel of N^D values in row-major index order.

    Files ending in .txt, .csv or .dat are parsed as text; anything else is read
    as raw little-endian 64-bit floats.

    Raises:
        ValidationError: If the file holds the wrong number of values.
    """
    path = Path(path)
    if path.suffix.lower() in TEXT_TABLE_SUFFIXES:
        flat = np.loadtxt(path, delimiter="," if path.suffix.lower() == ".csv" else None).ravel()
    else:
        flat = np.fromfile(path, dtype="<f8")
    expected = mode_size ** dimension
    if flat.size != expected:
        raise ValidationError(f"{path} holds {flat.size} values, expected N^D = {expected}")
    return flat.reshape((mode_size,) * dimension)


def dense_from_spec(spec, mode_size, dimension=None, budget=DEFAULT_ELEMENT_BUDGET):
    """
    Builds the dense oracle of a kernel spec.

    Brownian kernels are filled as the sum, over all assignments of exponents to
    modes, of outer products of power functions; this is the element definition
    evaluated for the whole grid at once.

    Args:
        spec (KernelSpec): The kernel to expand.
        mode_size (int): N.
        dimension (int, optional): Expected order; defaults to ``spec.order``.
        budget (int): Element budget for N^D.

    Returns:
        DenseKernel: The oracle tensor.
    """
    dimension = spec.order if dimension is None else dimension
    if dimension != spec.order:
        raise ValidationError(f"spec has order {spec.order}, requested dimension {dimension}")
    check_dense_budget(mode_size, dimension, budget)

    if spec.kind == "constant":
        values = np.full((mode_size,) * dimension, spec.c)
    elif spec.kind == "brownian":
        if dimension > PERMUTATION_GUARD:
            raise ValidationError(
                f"D = {dimension} exceeds the permutation enumeration guard ({PERMUTATION_GUARD})"
            )
        powers = power_table(spec.mu, mode_size)
        values = np.zeros((mode_size,) * dimension)
        for perm in itertools.permutations(range(dimension)):
            values += reduce(np.multiply.outer, [powers[label] for label in perm])
    else:
        values = load_table(spec.table_path, mode_size, dimension)
    return DenseKernel(values, budget=budget)


def tt_from_spec(spec, mode_size):
    """
    Builds the TT representation of a Brownian or constant kernel spec.

    Raises:
        ValidationError: For table kernels, which have no TT builder.
    """
    if spec.kind == "brownian":
        return build_brownian_tt(spec.brownian, mode_size)
    if spec.kind == "constant":
        return constant_tt(spec.c, spec.order, mode_size)
    raise ValidationError("table kernels have no TT representation; use the dense path")


def cp_from_spec(spec, mode_size):
    """
    Builds the analytic CP representation of a Brownian or constant kernel spec.

    Raises:
        ValidationError: For table kernels, whose CP form is unknown.
    """
    if spec.kind == "brownian":
        return brownian_cp(spec.brownian, mode_size)
    if spec.kind == "constant":
        return constant_cp(spec.c, spec.order, mode_size)
    raise ValidationError("table kernels have no CP representation; use the dense path")


def symmetry_defect(kernel, samples=64, rng=None):
    """
    Samples random indices and permutations of them and reports the worst mismatch.

    Args:
        kernel (TTKernel, CPKernel or DenseKernel): Kernel to sample.
        samples (int): Number of random (index, permutation) pairs.
        rng (numpy.random.Generator, optional): Random source.

    Returns:
        float: max |C[i] - C[π(i)]| / max(|C[i]|, |C[π(i)]|) over the samples.
    """
    rng = np.random.default_rng() if rng is None else rng
    worst = 0.0
    for _ in range(samples):
        entries = rng.integers(1, kernel.mode_size + 1, size=kernel.dimension)
        permuted = rng.permutation(entries)
        a = kernel_element(kernel, entries)
        b = kernel_element(kernel, permuted)
        scale = max(abs(a), abs(b))
        if scale > 0.0:
            worst = max(worst, abs(a - b) / scale)
    return worst
