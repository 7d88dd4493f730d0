"""Exception types shared across the package."""


class BongardError(Exception):
    """Base class for every error raised by this package."""


class MissingFile(BongardError, FileNotFoundError):
    pass


class DimensionMismatch(BongardError, ValueError):
    pass


class MalformedFormat(BongardError, ValueError):
    pass


class InvalidTarget(BongardError, ValueError):
    pass


class UnsatisfiableConcept(BongardError, RuntimeError):
    pass


class OutOfCanvas(BongardError, ValueError):
    pass


class NoGroundTruth(BongardError, LookupError):
    pass


class EpisodeFinished(BongardError, RuntimeError):
    pass


class InsufficientData(BongardError, ValueError):
    pass


class EmptyHistoryDomain(BongardError, ValueError):
    pass


class InfeasibleDistribution(BongardError, ValueError):
    pass


class CrossedInterval(BongardError, ValueError):
    pass


class StaleCache(BongardError, RuntimeError):
    pass


class ShapeMismatch(BongardError, ValueError):
    pass


class EmptyBatch(BongardError, ValueError):
    pass


class ConfigError(BongardError, ValueError):
    pass


class CheckpointVersionMismatch(BongardError, ValueError):
    pass


class InconsistentRuns(BongardError, ValueError):
    pass
