"""Exception hierarchy shared across the toolkit."""


class AmprulError(Exception):
    """Base class for all toolkit errors."""


# ---- ingest ----------------------------------------------------------------

class MalformedRow(AmprulError):
    """A CSV row could not be parsed; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class NonMonotonicTimestamp(AmprulError):
    """Timestamps must be strictly increasing within one cell."""

    def __init__(self, line: int, message: str = "timestamp not strictly increasing"):
        super().__init__(f"line {line}: {message}")
        self.line = line


class RangeViolation(AmprulError):
    """A signal value is outside its physically plausible range."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class EmptyFile(AmprulError):
    """Input stream has no usable data rows (a cell needs at least 2 samples)."""


class SegmentOutOfRange(AmprulError):
    """A cycle segment does not lie within its parent series."""


# ---- simulate --------------------------------------------------------------

class InvalidConfig(AmprulError):
    """A configuration value violates its declared bounds."""


# ---- labeling --------------------------------------------------------------

class NoReferenceDischarges(AmprulError):
    """Cell has no full (reference) discharge, so capacity cannot be measured."""


class NonPositiveNominal(AmprulError):
    """Nominal capacity must be strictly positive."""


class EmptyInput(AmprulError):
    """Operation requires a non-empty input sequence."""


# ---- features --------------------------------------------------------------

class RateTooCoarse(AmprulError):
    """Resample rate leaves fewer than 2 output rows."""


class ConstantChannel(AmprulError):
    """A feature channel is constant; normalization would divide by zero."""


class FrameTooShort(AmprulError):
    """Frame has fewer rows than one window."""


class TooFewCells(AmprulError):
    """Cell split needs at least 3 cells (one per partition)."""


# ---- neural ----------------------------------------------------------------

class ShapeMismatch(AmprulError):
    """Tensor shapes are inconsistent with the declared parameter sizes."""


# ---- pipeline --------------------------------------------------------------

class EmptyTrainingSet(AmprulError):
    """Training requires at least one window."""


class DivergedLoss(AmprulError):
    """Loss became NaN or infinite during training."""


class VersionMismatch(AmprulError):
    """Checkpoint was written with an unsupported format version."""


class CorruptCheckpoint(AmprulError):
    """Checkpoint failed structural or checksum validation."""
