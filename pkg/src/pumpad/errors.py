"""Exception hierarchy.

Three families map onto the CLI exit codes: configuration problems (1),
data problems (2) and numerical failures (3).
"""


class PumpadError(Exception):
    exit_code = 1


class ConfigError(PumpadError):
    exit_code = 1


class DataError(PumpadError):
    exit_code = 2


class NumericalError(PumpadError):
    exit_code = 3


# configuration
class BadConfig(ConfigError):
    pass


class BadSelection(ConfigError):
    pass


class BadPercentile(ConfigError):
    pass


class DegeneratePlan(ConfigError):
    pass


# data ingestion / shape
class ParseError(DataError):
    pass


class MissingChannel(DataError):
    pass


class SegmentOutOfRange(DataError):
    pass


class RateMismatch(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class DimMismatch(ShapeMismatch):
    pass


class ConstantChannel(DataError):
    pass


class WindowTooLong(DataError):
    pass


class TooShort(DataError):
    pass


class EmptyTrain(DataError):
    pass


class TooFewRows(DataError):
    pass


class EmptyScores(DataError):
    pass


class SingleClass(DataError):
    pass


class CoverageGap(DataError):
    pass


class OverlapViolation(DataError):
    pass


class MixedCoordinates(DataError):
    pass


# statistics
class BadSize(DataError):
    pass


class ConstantSample(DataError):
    pass


class Empty(DataError):
    pass


class TooFew(DataError):
    pass


class ZeroMad(NumericalError):
    pass


# numerics
class ZeroSpectrum(NumericalError):
    pass


class EmptyCluster(NumericalError):
    pass


class NonFinite(NumericalError):
    pass


class Diverged(NumericalError):
    pass


class FeatureError(PumpadError):
    """A per-feature failure annotated with its window and channel."""

    def __init__(self, cause: PumpadError, window: int, channel: str):
        super().__init__(f"window {window}, channel {channel}: {cause}")
        self.cause = cause
        self.window = window
        self.channel = channel
        self.exit_code = cause.exit_code
