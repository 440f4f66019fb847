"""Exporter error types."""


class ExportError(Exception):
    """Base class for exporter failures."""


class CapabilityError(ExportError):
    """The runtime cannot deliver what the capture needs (no attention
    weights exposed, media token budget exceeded, missing backend)."""


class LabelingError(ExportError):
    """Token roles could not be resolved (no media span, empty text)."""
