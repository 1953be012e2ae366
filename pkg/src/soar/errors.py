"""Exception types shared across the package."""


class SoarError(Exception):
    """Base class for all package errors."""


class GridInvariantViolation(SoarError):
    """A grid breaks the 1..30 dimension or 0..9 cell-value invariants."""


class MalformedDocument(SoarError):
    """A task document is structurally invalid."""


class LengthMismatch(SoarError):
    """Outcome list length disagrees with the task's pair count."""


class WorkerUnavailable(SoarError):
    """No execution worker could be started or reached."""


class ProtocolViolation(SoarError):
    """A worker reply does not conform to the wire protocol."""


class CompletionParseError(SoarError):
    """A model completion could not be turned into a program.

    ``reason`` is one of ``"no_code_block"`` or ``"no_transform_function"``.
    """

    def __init__(self, reason: str, message: str | None = None):
        super().__init__(message or reason)
        self.reason = reason


class BackendUnavailable(SoarError):
    """A chat or embedding backend failed after exhausting retries."""


class QuotaExceeded(BackendUnavailable):
    """The backend reported a quota/rate limit that retries did not clear."""


class EmptyPool(SoarError):
    """A voting or selection pool contains no usable candidates."""


class MissingTruth(SoarError):
    """Ground-truth test outputs are required but absent."""


class NoViableSeeds(SoarError):
    """Every sampled candidate errored; refinement has nothing to start from."""


class EmptySlice(SoarError):
    """A dataset selection was asked to draw from an empty archive slice."""


class TooFewSolutions(SoarError):
    """Diversity needs at least two solutions."""


class VerificationFailure(SoarError):
    """An exported example no longer reproduces its stored outputs."""


class CorruptArchive(SoarError):
    """An archive record failed its checksum, ordering, or framing check."""


class ConfigError(SoarError):
    """The run configuration file is invalid."""


class TruthAccessViolation(SoarError):
    """Ground truth was read while the pipeline runs in test-time mode."""
