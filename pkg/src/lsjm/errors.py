"""Exception types raised across the package."""


class LsjmError(Exception):
    """Base class for all errors raised by :mod:`lsjm`."""


class DimensionMismatch(LsjmError, ValueError):
    pass


class DuplicateNodeLabel(LsjmError, ValueError):
    pass


class NonBinaryEntry(LsjmError, ValueError):
    pass


class NonzeroDiagonal(LsjmError, ValueError):
    pass


class SingularMatrix(LsjmError, ArithmeticError):
    pass


class NoObservedLinks(LsjmError, ValueError):
    pass


class DegenerateLabels(LsjmError, ValueError):
    pass


class InvalidPlan(LsjmError, ValueError):
    pass


class ParseError(LsjmError, ValueError):
    """Edge-list problem tied to a 1-based line number."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class MalformedLine(ParseError):
    pass


class SelfLoop(ParseError):
    pass


class UnknownNode(ParseError):
    pass


class AsymmetricView(LsjmError, ValueError):
    pass


class IoFailure(LsjmError, OSError):
    pass
