"""Exception hierarchy shared across the package.

Two broad families: validation errors (bad inputs / bad configuration,
CLI exit code 2) and runtime errors (well-formed inputs that fail during
processing, CLI exit code 1).
"""


class WincelError(Exception):
    """Base class for all package errors."""


class ValidationError(WincelError):
    """Bad arguments or configuration; maps to CLI exit code 2."""


class DimMismatch(ValidationError):
    pass


class ZeroNorm(WincelError):
    """Raised where a zero-norm vector is not acceptable (e.g. empty text)."""


class AllMasked(ValidationError):
    """Every entry of a mask is false where at least one must survive."""


class TemperatureNonPositive(ValidationError):
    pass


class BetaOutOfRange(ValidationError):
    pass


class EmptySentenceSet(ValidationError):
    pass


class DegenerateLabels(ValidationError):
    """All training labels belong to a single class."""


class BadTemplate(ValidationError):
    """Prompt template must be empty or contain exactly one '{}'."""


class IndexOutOfRange(ValidationError):
    pass


class MalformedRecord(WincelError):
    """A single occurrence row could not be parsed; collected, not fatal."""


class MalformedTemplate(WincelError):
    """Species infobox present but genus/species parameters unusable."""


class OutOfExtent(ValidationError):
    pass


class MergeCycle(ValidationError):
    """Class merge map contains a cycle."""


class TooFewBlocks(ValidationError):
    """Fewer than 3 spatial blocks; cannot produce a 3-way split."""


class EmptyRaster(ValidationError):
    pass


class IoFailure(WincelError):
    pass


class CorruptFile(WincelError):
    """Embedding interchange or checkpoint file failed structural checks."""
