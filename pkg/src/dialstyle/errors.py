"""Exception hierarchy shared by every dialstyle module."""


class DialstyleError(Exception):
    """Base class for all engine errors."""


class DimError(DialstyleError):
    """Vector/matrix dimensions do not agree."""


class FormatError(DialstyleError):
    """A binary or sidecar file violates its format.

    Carries the byte offset at which the problem was detected (or -1 when
    the error is not tied to a specific offset, e.g. a missing sidecar).
    """

    def __init__(self, message: str, offset: int = -1):
        self.offset = offset
        if offset >= 0:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class SpeakerError(DialstyleError):
    """Speaker id not present in the speaker table."""


class BuildError(DialstyleError):
    """Database build failed for a specific entry."""


class BundleError(DialstyleError):
    """An embedding bundle is missing a track required by the operation."""


class GraphError(DialstyleError):
    """Invalid graph construction input (e.g. empty dialogue)."""


class WeightsError(DialstyleError):
    """A weights object contains non-finite values."""


class ConfigError(DialstyleError):
    """Invalid retrieval/sweep configuration for the given store."""


class EvalError(DialstyleError):
    """Invalid evaluation input (e.g. empty ground truth)."""


class LossError(DialstyleError):
    """Contrastive loss cannot be formed (no positives after exclusion)."""


class AlignError(DialstyleError):
    """Aggregation inputs are misaligned (row counts differ)."""
