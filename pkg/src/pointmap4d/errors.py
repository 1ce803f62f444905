"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line can map failures to
its documented status codes without a lookup table.
"""


class Pointmap4DError(Exception):
    exit_code = 2


class InputError(Pointmap4DError):
    """Malformed, missing or inconsistent input data."""

    exit_code = 2


class NumericError(Pointmap4DError):
    """A computation hit a degenerate configuration."""

    exit_code = 3


class NearZeroDepth(NumericError):
    pass


class DimensionMismatch(InputError):
    pass


class EmptyValidSet(NumericError):
    pass


class DegenerateScale(NumericError):
    pass


class NonFiniteLoss(NumericError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class EmptyScene(InputError):
    pass


class DegenerateFit(NumericError):
    pass


class InsufficientCorrespondences(NumericError):
    pass


class NoConsensus(NumericError):
    pass


class FrameMismatch(InputError):
    pass


class ParseError(InputError):
    pass


class MissingInput(InputError):
    pass
