"""Exception hierarchy shared by all phenoscribe modules."""


class PhenoscribeError(Exception):
    """Base class for every error raised by this package."""


# audio_io
class MissingFile(PhenoscribeError):
    pass


class BadMagic(PhenoscribeError):
    pass


class UnsupportedFormat(PhenoscribeError):
    pass


class TruncatedData(PhenoscribeError):
    pass


class ZeroRate(PhenoscribeError):
    pass


class BadWindow(PhenoscribeError):
    pass


# feature extraction
class TooShort(PhenoscribeError):
    pass


class InsufficientCycles(PhenoscribeError):
    pass


class Unvoiced(PhenoscribeError):
    pass


# nn_core
class NonScalarLoss(PhenoscribeError):
    pass


class DimMismatch(PhenoscribeError):
    pass


class EmptySequence(PhenoscribeError):
    pass


class CheckpointError(PhenoscribeError):
    pass


# lm_adapter
class RankTooLarge(PhenoscribeError):
    pass


class EmptyCorpus(PhenoscribeError):
    pass


class EmptyInput(PhenoscribeError):
    pass


# fusion_mtl
class EmptySeries(PhenoscribeError):
    pass


class UnsortedArms(PhenoscribeError):
    pass


class EmptyCohort(PhenoscribeError):
    pass


# cohort
class OutOfRange(PhenoscribeError):
    pass


class BadFractions(PhenoscribeError):
    pass


# evalkit
class EmptyCounts(PhenoscribeError):
    pass


class SingleClass(PhenoscribeError):
    pass


# cli
class MissingPrerequisite(PhenoscribeError):
    pass


class MissingCheckpoint(PhenoscribeError):
    pass


class ConfigError(PhenoscribeError):
    pass


class OutputExists(PhenoscribeError):
    """An output file exists with different content and ``--force`` was not given."""
