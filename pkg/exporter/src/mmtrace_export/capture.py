"""Core capture pipeline: runtime attentions -> validated MMTR bytes.

A runtime adapter returns a RawCapture: per-position role labels plus, for
every generation step, the new token's attention rows over the current
prefix at every layer and head. This module truncates those rows to the
input positions, optionally averages heads, and assembles the final file
bytes. Nothing is written unless the whole capture labels and validates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import CapabilityError, LabelingError
from .format import encode_trace


@dataclass(frozen=True)
class CaptureRequest:
    """One capture job: which model, what input, how much generation."""

    model: str
    prompt: str
    media: Optional[str] = None
    replicate: int = 1
    max_steps: int = 8
    average_heads: bool = False

    def validate(self) -> None:
        if self.replicate < 1:
            raise ValueError(f"replicate must be >= 1, got {self.replicate}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if not self.prompt.strip():
            raise ValueError("prompt must not be empty")


@dataclass
class RawCapture:
    """What a runtime adapter hands back before assembly."""

    roles: list[str]  # per input position: text | nontext | special
    steps: list[np.ndarray]  # step s: (layers, heads, input_len + s)
    model_id: str
    metadata: dict = field(default_factory=dict)


def roles_from_ids(
    input_ids: Sequence[int],
    media_token_ids: set[int],
    special_token_ids: set[int],
) -> list[str]:
    """Label positions: media span -> nontext, specials -> special, rest text."""
    roles = []
    for token_id in input_ids:
        if token_id in media_token_ids:
            roles.append("nontext")
        elif token_id in special_token_ids:
            roles.append("special")
        else:
            roles.append("text")
    return roles


def replicate_media_block(tokens: list, roles: list[str], n: int) -> tuple[list, list[str]]:
    """Repeat the contiguous non-text block n times, text untouched.

    The block must be contiguous (one media span); the repeated copies are
    inserted in place, so the layout stays [prefix][block x n][suffix].
    """
    if n < 1:
        raise ValueError(f"replication factor must be >= 1, got {n}")
    if len(tokens) != len(roles):
        raise ValueError("tokens and roles must have equal length")
    positions = [i for i, r in enumerate(roles) if r == "nontext"]
    if not positions:
        raise LabelingError("no non-text block to replicate")
    start, end = positions[0], positions[-1] + 1
    if positions != list(range(start, end)):
        raise LabelingError("non-text block is not contiguous")
    if n == 1:
        return list(tokens), list(roles)
    block_tokens = list(tokens[start:end]) * n
    block_roles = ["nontext"] * (end - start) * n
    return (
        list(tokens[:start]) + block_tokens + list(tokens[end:]),
        list(roles[:start]) + block_roles + list(roles[end:]),
    )


def assemble_trace_bytes(capture: RawCapture, request: CaptureRequest) -> bytes:
    """Validate a raw capture and encode it as MMTR bytes.

    Rows are truncated to the input positions; with head averaging the
    head axis collapses to 1 and the header declares heads = 1.
    """
    input_len = len(capture.roles)
    if input_len < 2:
        raise LabelingError(f"input has only {input_len} positions")
    if "text" not in capture.roles:
        raise LabelingError("role labeling produced no text tokens")
    if request.media is not None and "nontext" not in capture.roles:
        raise LabelingError("media was supplied but no media token span was found")
    if not capture.steps:
        raise CapabilityError("runtime returned no generation steps")

    first = np.asarray(capture.steps[0], dtype=np.float64)
    if first.ndim != 3:
        raise CapabilityError(
            f"step attention must be (layers, heads, positions), got {first.shape}"
        )
    layers, heads = first.shape[0], first.shape[1]

    rows = np.empty((len(capture.steps), layers, heads, input_len), dtype=np.float64)
    for step, arr in enumerate(capture.steps):
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape[0] != layers or arr.shape[1] != heads:
            raise CapabilityError(
                f"step {step} has shape {arr.shape}, expected "
                f"({layers}, {heads}, >= {input_len})"
            )
        if arr.shape[2] < input_len:
            raise CapabilityError(
                f"step {step} covers {arr.shape[2]} positions, fewer than the "
                f"{input_len} input positions"
            )
        rows[step] = arr[:, :, :input_len]

    if request.average_heads:
        rows = rows.mean(axis=2, keepdims=True)

    metadata = {
        "model": capture.model_id,
        "replication": int(request.replicate),
        "heads_averaged": bool(request.average_heads),
        **capture.metadata,
    }
    return encode_trace(rows.astype(np.float32), capture.roles, metadata)


def capture_trace(request: CaptureRequest, out_path, runtime=None) -> Path:
    """Run a capture end to end and write the MMTR file.

    The file is created only after the capture fully labels, validates,
    and encodes; failures leave no partial output behind.
    """
    request.validate()
    if runtime is None:
        from .runtimes import resolve_runtime

        runtime = resolve_runtime(request.model)
    raw = runtime.capture(request)
    data = assemble_trace_bytes(raw, request)
    path = Path(out_path)
    path.write_bytes(data)
    return path
