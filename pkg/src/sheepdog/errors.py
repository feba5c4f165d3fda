"""Exception and warning types raised across the package."""


class SheepdogError(Exception):
    """Base class for all package errors."""


class NonFiniteState(SheepdogError, FloatingPointError):
    """A simulated state (or adjoint) became NaN or infinite.

    ``step`` is the first grid index holding a non-finite value and
    ``sample`` the Monte Carlo sample index, when known.
    """

    def __init__(self, message, step=None, sample=None):
        super().__init__(message)
        self.step = step
        self.sample = sample


class LineSearchFailed(SheepdogError):
    """Armijo backtracking exhausted without sufficient decrease."""


class MaxItersReached(UserWarning):
    """Optimizer stopped at its iteration cap; the best iterate is returned."""


class DegenerateStep(SheepdogError):
    """Broyden update requested with a (numerically) zero step."""


class SingularBroyden(SheepdogError, ArithmeticError):
    """The Broyden system could not be solved, even after one reset."""


class GridMismatch(SheepdogError, ValueError):
    """Arrays or signals that should share a time grid do not."""


class ConfigError(SheepdogError, ValueError):
    """Base for scenario configuration problems."""


class ParseError(ConfigError):
    """Config text is not valid JSON (or not a JSON object)."""


class ValidationError(ConfigError):
    """Config parsed but violates a constraint; ``field`` names the key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
