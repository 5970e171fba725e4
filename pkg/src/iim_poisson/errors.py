"""Exception hierarchy shared by all solver components."""


class IIMError(Exception):
    """Base class for errors raised by :mod:`iim_poisson`."""


class MultipleCrossingsError(IIMError):
    """A cell edge is crossed more than once by the zero level set."""


class InsufficientPointsError(IIMError):
    """The interpolation region never collected enough nodes."""


class RankDeficientError(IIMError):
    """Least-squares system has numerical rank below the monomial count."""


class SingularWallStencilError(IIMError):
    """Normal-derivative stencil has a vanishing wall coefficient."""


class SingularInterfaceSystemError(IIMError):
    """The two-sided interface system has a vanishing denominator."""


class UnsupportedOrderError(IIMError, ValueError):
    pass


class TooLargeError(IIMError):
    """Refuse to assemble a sparse matrix beyond the size guard."""


class BadResolutionError(IIMError, ValueError):
    """Grid size is not of the form ``coarsest * 2**L``."""


class ZeroDiagonalError(IIMError):
    pass


class SingularMatrixError(IIMError):
    pass


class NoConvergenceError(IIMError):
    pass


class IncompatibleError(IIMError):
    """Bordered solve produced a null-space shift too large to be plausible."""


class ConvergenceError(IIMError):
    """Iterative solver stopped without reaching the tolerance.

    The :class:`~iim_poisson.krylov.SolveReport` of the failed run is kept in
    ``report`` and the last iterate in ``x``.
    """

    def __init__(self, msg, report=None, x=None):
        super().__init__(msg)
        self.report = report
        self.x = x


class ConfigError(IIMError, ValueError):
    """Invalid run file, CLI flag or study parameter."""
