"""Exception hierarchy shared by all tridepth modules."""

from __future__ import annotations


class TridepthError(Exception):
    """Base class for every error raised deliberately by tridepth."""


class ContractError(TridepthError):
    """A caller broke a shape or arity contract (e.g. backward on a non-scalar)."""


class NonFiniteError(TridepthError, ValueError):
    """A NaN or infinity reached a place that refuses to propagate it."""


class DegenerateViewError(TridepthError):
    """Camera origin coincides with its look-at point."""


class DepthFormatError(TridepthError):
    """A depth or pixmap file does not match the expected binary layout."""


class DatasetExistsError(TridepthError):
    """Refusing to write a dataset into a non-empty directory."""


class CheckpointError(TridepthError):
    """Checkpoint file unreadable, truncated or inconsistent."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint written by an incompatible format version."""


class ConfigError(TridepthError):
    """Configuration file or override failed validation."""


class MetricError(TridepthError):
    """A metric could not be computed from its inputs."""


class TrainingDivergedError(TridepthError):
    """A loss term became non-finite during a training step."""

    def __init__(self, term: str, terms: dict[str, float]) -> None:
        self.term = term
        self.terms = terms
        dump = " ".join(f"{k}={v}" for k, v in terms.items())
        super().__init__(f"non-finite loss term {term!r} | {dump}")
