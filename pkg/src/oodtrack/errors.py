"""Error taxonomy shared across the toolkit.

Data errors map to CLI exit code 2, numerical errors to exit code 3.
"""


class OodTrackError(Exception):
    """Base class for all toolkit errors."""


class DataError(OodTrackError):
    """Malformed or inconsistent input data."""


class NumericalError(OodTrackError):
    """Failure of a numerical procedure."""


# --- core model ---

class EmptySegment(DataError):
    pass


# --- file formats ---

class BadMagic(DataError):
    pass


class DimMismatch(DataError):
    pass


class NonFiniteValue(DataError):
    pass


class SizeMismatch(DataError):
    pass


class IllegalLabel(DataError):
    pass


class IoError(DataError):
    pass


# --- segmentation / features ---

class OutOfBounds(DataError):
    pass


# --- meta classification ---

class DegenerateData(DataError):
    pass


class NoConvergence(NumericalError):
    pass


class TooFewSequences(DataError):
    pass


# --- metrics ---

class NoPositives(DataError):
    pass


class NoNegatives(DataError):
    pass


class EmptyGt(DataError):
    pass


class MissingMetadata(DataError):
    pass


class NoGtObjects(DataError):
    pass


class NoInstances(DataError):
    pass


class NoClusters(DataError):
    pass


class NoClasses(DataError):
    pass


# --- retrieval ---

class PerplexityTooLarge(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


# --- synth ---

class UnknownOp(DataError):
    pass
