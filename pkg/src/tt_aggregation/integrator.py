# integrator.py

import logging
import math
from dataclasses import astuple, dataclass

import numpy as np

from tt_aggregation.exceptions import NumericalError, SimulationAborted, ValidationError
from tt_aggregation.kinetics import ConcentrationState, KernelSet, rhs_total

logger = logging.getLogger(__name__)

INITIAL_KINDS = ("monodisperse", "user-vector")
# min(n) below -NEGATIVITY_TOLERANCE * max(n) suggests the step size is too large
NEGATIVITY_TOLERANCE = 1e-9
MOMENT_COLUMNS = ("t", "M0", "M1", "M2", "min_n")


def _as_float(name, value):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must be a number, got {value!r}") from None


@dataclass(frozen=True)
class TimeGrid:
    """
    Uniform time grid t0, t0 + dt, ..., t0 + steps·dt.

    Attributes:
        t0 (float): Initial time.
        dt (float): Step size, positive.
        steps (int): Number of steps, at least 1.
    """

    t0: float = 0.0
    dt: float = 1e-3
    steps: int = 1

    def __post_init__(self):
        object.__setattr__(self, "t0", _as_float("t0", self.t0))
        object.__setattr__(self, "dt", _as_float("dt", self.dt))
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValidationError(f"dt must be a positive number, got {self.dt}")
        if not isinstance(self.steps, int) or self.steps < 1:
            raise ValidationError(f"steps must be an integer >= 1, got {self.steps!r}")

    @property
    def t_end(self):
        """Final time t0 + steps·dt."""
        return self.t0 + self.steps * self.dt


@dataclass(frozen=True)
class InitialCondition:
    """
    Concentrations at t0.

    Attributes:
        kind (str): "monodisperse" (all particles of size 1) or "user-vector".
        c0 (float): Total concentration for the monodisperse case.
        values (tuple of float): Explicit concentrations for "user-vector".
    """

    kind: str = "monodisperse"
    c0: float = 1.0
    values: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "c0", _as_float("c0", self.c0))
        object.__setattr__(self, "values", tuple(_as_float("initial concentration", v) for v in self.values))
        if self.kind not in INITIAL_KINDS:
            raise ValidationError(f"unknown initial condition {self.kind!r}; use one of {INITIAL_KINDS}")
        if self.kind == "monodisperse" and not self.c0 >= 0:
            raise ValidationError(f"c0 must be nonnegative, got {self.c0}")
        if self.kind == "user-vector" and any(v < 0 for v in self.values):
            raise ValidationError("user-supplied concentrations must be nonnegative")

    def build(self, mode_size, t0=0.0):
        """
        Creates the initial ConcentrationState on sizes 1..N.
        """
        if self.kind == "monodisperse":
            n = np.zeros(mode_size)
            n[0] = self.c0
        else:
            if len(self.values) != mode_size:
                raise ValidationError(f"initial vector has {len(self.values)} entries, N = {mode_size}")
            n = np.asarray(self.values)
        return ConcentrationState(n, t0)


@dataclass(frozen=True)
class MomentRecord:
    step: int
    t: float
    m0: float
    m1: float
    m2: float
    min_n: float
    mass_drift: float
    negative: bool


class MomentSeries:
    """
    Moments recorded along a run, in strictly increasing time.
    """

    def __init__(self):
        self.records = []

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, position):
        return self.records[position]

    def append(self, record):
        """
        Adds a record after the last one.

        Raises:
            ValidationError: If ``record`` does not advance in time.
        """
        if self.records and not record.t > self.records[-1].t:
            raise ValidationError(f"moment records must advance in time: {record.t} after {self.records[-1].t}")
        self.records.append(record)

    def column(self, name):
        """One field of every record as an array, e.g. ``column("m0")``."""
        return np.array([getattr(record, name) for record in self.records])

    def to_array(self):
        """Rows of (t, M0, M1, M2, min_n), matching MOMENT_COLUMNS."""
        return np.array([astuple(record)[1:6] for record in self.records]).reshape(-1, len(MOMENT_COLUMNS))

    @property
    def flagged(self):
        """True if any record raised the negativity flag."""
        return any(record.negative for record in self.records)


def moments(state, orders=(0, 1, 2)):
    """
    Moments M_m = Σ_k k^m n_k.

    Args:
        state (ConcentrationState or array-like): Concentrations of sizes 1..N.
        orders (iterable of int): Nonnegative moment orders.

    Returns:
        list of float: One moment per order.
    """
    n = state.n if isinstance(state, ConcentrationState) else np.asarray(state, dtype=np.float64)
    sizes = np.arange(1, n.shape[0] + 1, dtype=np.float64)
    values = []
    for order in orders:
        if order < 0:
            raise ValidationError(f"moment orders must be nonnegative, got {order}")
        values.append(float(np.dot(sizes ** order, n)))
    return values


def is_negative(n):
    """The negativity watch: min(n) < -1e-9·max(n)."""
    return bool(n.min() < -NEGATIVITY_TOLERANCE * max(n.max(), 0.0))


def constant_kernel_m0(t, order, c=1.0, m0=1.0):
    """
    Closed-form M0(t) for a pure order-d constant kernel C ≡ c.

    Summing the equations gives dM0/dt = -c·(d-1)/d!·M0^d, hence
    M0(t) = (M0(0)^(1-d) + c·(d-1)²/d!·t)^(-1/(d-1)).
    """
    rate = c * (order - 1) ** 2 / math.factorial(order)
    return (m0 ** (1 - order) + rate * t) ** (-1.0 / (order - 1))


def _finite(values, step, stage):
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"non-finite right-hand side in the {stage} stage", step=step)
    return values


def rk2_step(state, dt, kernels, plan=None, rhs=None, step=None):
    """
    One explicit midpoint Runge-Kutta step: two right-hand-side evaluations.

    k1 = S[n], k2 = S[n + dt/2·k1], n' = n + dt·k2.

    Args:
        state (ConcentrationState): Current state.
        dt (float): Step size, positive.
        kernels (KernelSet): Kernels per collision order.
        plan (ExecutionPlan, optional): Parallel execution settings.
        rhs (callable, optional): Replaces rhs_total; maps a state to dn/dt.
        step (int, optional): Step index, reported on failure.

    Returns:
        ConcentrationState: State at t + dt.

    Raises:
        NumericalError: If the right-hand side is not finite.
    """
    if not dt > 0:
        raise ValidationError(f"dt must be positive, got {dt}")
    if rhs is None:
        def rhs(current):
            return rhs_total(kernels, current, plan).s

    k1 = _finite(rhs(state), step, "first")
    midpoint = _finite(state.n + 0.5 * dt * k1, step, "midpoint update")
    k2 = _finite(rhs(ConcentrationState(midpoint, state.t + 0.5 * dt)), step, "midpoint")
    updated = _finite(state.n + dt * k2, step, "final update")
    return ConcentrationState(updated, state.t + dt)


def integrate(config, plan=None, kernels=None, rhs=None, on_record=None):
    """
    Solves the Cauchy problem described by a SimulationConfig.

    Moments are recorded at step 0 and every ``config.record_every`` steps.

    Args:
        config (SimulationConfig): Problem, grid and execution settings.
        plan (ExecutionPlan, optional): Overrides the plan built from the config.
        kernels (KernelSet, optional): Prebuilt kernels; built from the config otherwise.
        rhs (callable, optional): Replaces rhs_total (see rk2_step).
        on_record (callable, optional): Called as ``on_record(step, state)`` at every record.

    Returns:
        tuple: (final ConcentrationState, MomentSeries).

    Raises:
        SimulationAborted: If a step fails; carries the moments recorded so far.
    """
    if kernels is None:
        kernels = KernelSet.from_specs(config.kernels, config.mode_size, config.representation)
    owns_plan = plan is None
    if owns_plan:
        plan = config.execution_plan()

    grid = config.time
    state = config.initial_condition.build(config.mode_size, grid.t0)
    series = MomentSeries()
    mass0 = moments(state, (1,))[0]

    def record(step, current):
        m0, m1, m2 = moments(current)
        negative = is_negative(current.n)
        if negative:
            logger.warning("step %d (t=%g): min(n) = %.3e is below the negativity threshold; "
                           "consider a smaller dt", step, current.t, current.n.min())
        drift = m1 / mass0 - 1.0 if mass0 else 0.0
        series.append(MomentRecord(step, current.t, m0, m1, m2, float(current.n.min()), drift, negative))
        if on_record is not None:
            on_record(step, current)

    logger.info("integrating N=%d orders=%s dt=%g steps=%d with %r",
                config.mode_size, kernels.orders, grid.dt, grid.steps, plan)
    try:
        record(0, state)
        for step in range(1, grid.steps + 1):
            try:
                state = rk2_step(state, grid.dt, kernels, plan, rhs=rhs, step=step)
            except NumericalError as exc:
                raise SimulationAborted(exc.detail, step, series) from exc
            if step % config.record_every == 0:
                record(step, state)
    finally:
        if owns_plan:
            plan.close()
    logger.info("finished at t=%g, M0=%.17g, mass drift=%.3e",
                state.t, series[-1].m0, series[-1].mass_drift)
    return state, series
