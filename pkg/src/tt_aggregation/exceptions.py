# exceptions.py

class AggregationError(Exception):
    """
    Base class for every error raised by tt_aggregation.
    """


class ValidationError(AggregationError, ValueError):
    """
    Raised when an argument violates a shape, range or dimension requirement.
    """


class BudgetExceededError(ValidationError):
    """
    Raised when a dense N^D array would exceed the configured element budget.

    Attributes:
        elements (int): Number of elements that were requested.
        budget (int): The element budget that was in force.
    """

    def __init__(self, elements, budget):
        self.elements = elements
        self.budget = budget
        super().__init__(
            f"dense kernel needs {elements} elements but the budget is {budget}; "
            "reduce N or raise the element budget"
        )


class ConfigError(ValidationError):
    """
    Raised when a configuration document is malformed or inconsistent.
    """


class VerificationError(AggregationError):
    """
    Raised when a fast path disagrees with the dense oracle beyond tolerance.
    """


class NumericalError(AggregationError, ArithmeticError):
    """
    Raised when the right-hand side produces non-finite values.

    Attributes:
        step (int or None): Index of the time step that failed, if known.
    """

    def __init__(self, message, step=None):
        self.step = step
        self.detail = message
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)


class SimulationAborted(NumericalError):
    """
    Raised by the integrator when a step fails; keeps the moments recorded so far.

    Attributes:
        series (MomentSeries): Moments recorded before the failing step.
    """

    def __init__(self, message, step, series):
        self.series = series
        super().__init__(message, step=step)
