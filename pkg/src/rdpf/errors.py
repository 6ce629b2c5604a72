"""Exception hierarchy shared by every module of the package."""


class RdpfError(Exception):
    """Base class for all errors raised by :mod:`rdpf`."""


class InvalidParameterError(RdpfError, ValueError):
    """A distribution, coupling or configuration parameter is invalid."""


class InvalidArgumentError(RdpfError, ValueError):
    """An argument passed to an operation is outside its accepted domain."""


class DomainError(RdpfError, ValueError):
    """The requested distortion level lies outside the feasible range."""


class DivergenceError(RdpfError, FloatingPointError):
    """The log-domain accumulator exceeded its safe range.

    Usually the signature of a step size that is too large for the current
    multiplier scale.
    """

    def __init__(self, message, max_exponent=None):
        super().__init__(message)
        self.max_exponent = max_exponent


class NumericalError(RdpfError, RuntimeError):
    """An iterative numerical routine did not converge."""


class SolverError(RdpfError, RuntimeError):
    """The stochastic optimizer failed after exhausting its restarts.

    The partial convergence trace of the last attempt is attached as
    ``trace``.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []
