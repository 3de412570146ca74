"""Exception types raised across the package."""


class RoadsenseError(Exception):
    """Base class for all package errors."""


class ZeroDenominator(RoadsenseError, ZeroDivisionError):
    pass


class ZeroNumerator(RoadsenseError, ZeroDivisionError):
    pass


class PoleAtOrigin(RoadsenseError, ValueError):
    pass


class PoleOnAxis(RoadsenseError, ValueError):
    pass


class ImproperTransferFunction(RoadsenseError, ValueError):
    pass


class ImproperComposition(RoadsenseError, ValueError):
    pass


class DegreeOverflow(RoadsenseError, ValueError):
    pass


class DimensionMismatch(RoadsenseError, ValueError):
    pass


class UnstableLoop(RoadsenseError, RuntimeError):
    """A closed loop is unstable or a simulated trace diverged.

    ``agent_index`` is the cascade position of the failing agent when known.
    """

    def __init__(self, message, agent_index=None):
        super().__init__(message)
        self.agent_index = agent_index


class UnstableInverse(RoadsenseError, ValueError):
    pass


class MalformedFile(RoadsenseError, ValueError):
    pass


class NonuniformSampling(RoadsenseError, ValueError):
    pass


class CorruptRecord(RoadsenseError, ValueError):
    pass


class MissingRecord(RoadsenseError, LookupError):
    pass


class DegenerateFit(RoadsenseError, ValueError):
    pass


class ConfigError(RoadsenseError, ValueError):
    pass
