"""Exception types shared across the package."""


class RsdecError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(RsdecError):
    pass


class NotSymmetric(RsdecError):
    pass


class NotHurwitz(RsdecError):
    pass


class SingularG(RsdecError):
    pass


class InitialStateOutsideDomain(RsdecError):
    pass


class DriftNaN(RsdecError):
    """Drift returned a non-finite value, or the state exploded.

    Carries the simulation time at which the failure was detected.
    """

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class NoFiniteM(RsdecError):
    pass


class InfiniteR2(RsdecError):
    pass


class QuadratureFailure(RsdecError):
    pass


class InvalidQ(RsdecError):
    pass


class ConfigError(RsdecError):
    pass
