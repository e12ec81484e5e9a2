"""Exception hierarchy shared by every lorank module."""


class LorankError(Exception):
    """Base class for all library errors."""


class NumericalError(LorankError):
    """An iterative kernel failed to converge or produced non-finite values."""

    def __init__(self, message, residual=None, iteration=None):
        super().__init__(message)
        self.residual = residual
        self.iteration = iteration


class DivergenceError(NumericalError):
    """The PCP residual kept growing; diagnostics are attached."""

    def __init__(self, message, residual=None, iteration=None, history=()):
        super().__init__(message, residual=residual, iteration=iteration)
        self.history = tuple(history)


class AmbiguousDirectionError(LorankError):
    """The top eigenvalue of a Gram matrix is (numerically) degenerate."""


class VanishingDirectionError(LorankError):
    """A null-space projection removed the whole direction."""

    def __init__(self, norm):
        super().__init__(
            "no local direction exists: projected norm %.3g is below 1e-10" % norm
        )
        self.norm = norm


class FormatError(LorankError, ValueError):
    """Malformed text input; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = "line %d: %s" % (line, message)
        super().__init__(message)
        self.line = line
