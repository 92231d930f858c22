"""Exception hierarchy for the reasoning service.

Library code raises these; `app.main` turns them into a single-line
`error: <ErrorClass>: <message>` and a nonzero exit status.
"""


class KGRError(RuntimeError):
    """Base class for every error raised on purpose by this package."""


class GraphFormatError(KGRError):
    """Malformed triple file or graph image."""


class GraphIndexError(KGRError, IndexError):
    """Entity or relation id outside the graph."""


class StructureError(KGRError):
    """Query structure failed to parse or validate."""


class CutError(KGRError):
    """Node set is not a valid cut, or the brute-force size cap was exceeded."""


class OracleCapError(KGRError):
    """An intermediate entity set grew past the configured cap."""


class SamplerExhaustedError(KGRError):
    """Instantiation retry budget exhausted for a structure."""


class RejectionCapError(KGRError):
    """Too many negative proposals were rejected (query is near-universal)."""


class CapabilityError(KGRError):
    """Model kind does not support the requested operator or structure."""


class ShapeError(KGRError, ValueError):
    """Tensor shapes or embedding variants do not match."""


class NonFiniteLossError(KGRError):
    """Training produced a NaN or infinite loss."""


class ConfigError(KGRError, ValueError):
    """Configuration file or environment value is invalid."""


class CheckpointError(KGRError):
    """Checkpoint file is unreadable or inconsistent."""
