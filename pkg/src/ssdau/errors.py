"""Exception hierarchy shared across the toolkit.

Validation errors (bad input, bad config) and stage errors (a pipeline
stage blew up mid-run) map to distinct CLI exit codes, so they are kept
as separate branches.
"""


class SsdauError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(SsdauError):
    """Bad input data or configuration. CLI exit code 2."""


class StageError(SsdauError):
    """A pipeline stage failed mid-run. CLI exit code 3."""


class DatasetFormatError(ValidationError):
    """Malformed record in an input file; carries the record index."""

    def __init__(self, message, record_index=None):
        super().__init__(message)
        self.record_index = record_index


class AlignmentError(ValidationError):
    """Entity surface could not be aligned to the sentence text."""

    def __init__(self, message, sentence_id=None):
        super().__init__(message)
        self.sentence_id = sentence_id


class SchemaError(ValidationError):
    """Relation or tag not present in the active schema."""


class ConfigurationError(ValidationError):
    """Invalid knob combination (zero weights, empty pools, ...)."""


class ReconstructionError(StageError):
    """Block cut positions inconsistent with their source sentence."""


class EmptySpanError(StageError):
    """An empty text span reached an operation that requires content."""


class ProviderError(StageError):
    """Embedding provider misbehaved (dimension mismatch, bad payload)."""


class TransportError(StageError):
    """Embedding service unreachable after the configured retries."""

    def __init__(self, message, retries=0):
        super().__init__(message)
        self.retries = retries


class DivergenceError(StageError):
    """Training produced a non-finite loss; carries the epoch."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class TopicModelError(StageError):
    """Topic model could not be fitted (e.g. fewer sentences than topics)."""
