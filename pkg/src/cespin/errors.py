"""Exception hierarchy.

The CLI maps :class:`ConfigError` to exit status 2 and :class:`PhysicsError`
to exit status 3; I/O failures surface as :class:`OSError` (exit status 4).
"""


class CespinError(Exception):
    """Base class for all package errors."""


class ConfigError(CespinError, ValueError):
    """Invalid configuration or malformed input file."""


class CrystalSpecError(ConfigError):
    """Crystal description file fails to parse or validate."""


class PhysicsError(CespinError):
    """A computation was asked for something outside its valid domain."""


class DistanceUnderflowError(PhysicsError):
    pass


class DimensionCapError(PhysicsError):
    pass


class MemoryBudgetError(PhysicsError):
    pass


class MissingSubclusterError(PhysicsError):
    pass


class SequenceError(PhysicsError):
    pass


class QuadratureError(PhysicsError):
    def __init__(self, message, achieved_tolerance=None):
        super().__init__(message)
        self.achieved_tolerance = achieved_tolerance


class BracketError(PhysicsError):
    pass


class FitError(PhysicsError):
    pass


class ConvergenceError(FitError):
    pass


class SingularJacobianError(FitError):
    pass
