"""Exception hierarchy.

Every error raised by the library derives from :class:`PsstratError`, so the
CLI can turn any of them into a single-line diagnostic and exit code 1.
"""


class PsstratError(Exception):
    """Base class for all library errors."""

    @property
    def kind(self) -> str:
        return type(self).__name__


class DomainError(PsstratError, ValueError):
    """Argument outside the domain of a numerical routine."""


# dataset
class DataError(PsstratError, ValueError):
    """Malformed observational data."""


class MissingValue(DataError):
    pass


class BadIndicator(DataError):
    pass


class DuplicateId(DataError):
    pass


class EmptyGroup(DataError):
    pass


class SchemaError(DataError):
    pass


# numkit
class ConstantRegressor(PsstratError, ValueError):
    pass


class ZeroVariance(PsstratError, ValueError):
    pass


# glm
class ModelError(PsstratError):
    """Failure to fit a binary-response model."""


class RankDeficient(ModelError):
    pass


class SeparationDetected(ModelError):
    pass


class NotConverged(ModelError):
    pass


class ArityMismatch(ModelError, ValueError):
    pass


class NotBinaryTerm(ModelError, ValueError):
    pass


# propensity / stratify / estimators
class NoOverlap(PsstratError):
    pass


class EmptyAfterTrim(PsstratError):
    pass


class EmptyGroupInStratum(PsstratError):
    pass


class Unresolvable(PsstratError):
    """Within-stratum imbalance that refinement could not remove."""


# simulate
class DegenerateConfig(PsstratError, ValueError):
    pass


class SimulationFailure(PsstratError):
    """Too many Monte Carlo replications failed."""
