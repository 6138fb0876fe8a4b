"""Exception hierarchy shared by every module."""


class LevelflowError(Exception):
    """Base class for all errors raised by levelflow."""


class ExpressionError(LevelflowError):
    """Base class for expression-language errors."""


class ParseError(ExpressionError):
    """Malformed expression. ``position`` is 1-based."""

    def __init__(self, message, position):
        super().__init__(f"{message} at position {position}")
        self.position = position


class DomainError(ExpressionError):
    """Evaluation left the domain of an operation (log of a non-positive, ...)."""

    def __init__(self, message, subexpression=None, point=None):
        detail = message
        if subexpression is not None:
            detail += f" in '{subexpression}'"
        if point is not None:
            detail += f" at x={tuple(float(v) for v in point)}"
        super().__init__(detail)
        self.reason = message
        self.subexpression = subexpression
        self.point = point


class FlowError(LevelflowError):
    """Base class for failures while following the gradient flow."""

    def __init__(self, message, point=None, **info):
        super().__init__(message)
        self.point = point
        self.info = info


class CriticalPointDetected(FlowError):
    """|grad f| fell below the critical-point threshold."""


class NonConvergence(FlowError):
    """Newton projection onto a level set did not reach tolerance."""


class LevelMismatch(FlowError):
    """A point that should lie on a level set does not."""


class ChartError(LevelflowError):
    """Base class for chart construction failures."""


class NoBracket(ChartError):
    """No sign change of f - a was found along a seeding ray."""


class DegenerateChart(ChartError):
    """The tangent vectors of a chart do not have full rank."""
