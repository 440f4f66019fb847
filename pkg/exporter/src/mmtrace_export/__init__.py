"""Attention-trace exporter for multimodal model runtimes."""

__version__ = "0.1.0"

from .capture import (
    CaptureRequest,
    RawCapture,
    assemble_trace_bytes,
    capture_trace,
    replicate_media_block,
    roles_from_ids,
)
from .errors import CapabilityError, ExportError, LabelingError
from .format import encode_trace

__all__ = [
    "CaptureRequest",
    "CapabilityError",
    "ExportError",
    "LabelingError",
    "RawCapture",
    "assemble_trace_bytes",
    "capture_trace",
    "encode_trace",
    "replicate_media_block",
    "roles_from_ids",
]
