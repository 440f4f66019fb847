"""Standalone writer for the MMTR attention-trace wire format.

This mirrors the published byte layout exactly so files interoperate with
any MMTR consumer:

    magic "MMTR" | version u32 LE (=1) | header length u64 LE
    header: UTF-8 JSON with keys {layers, heads, input_len, steps, roles,
            metadata}, roles being per-position "text"|"nontext"|"special"
    payload: steps*layers*heads*input_len float32 LE, step-major, then
             layer, head, position; no padding, no trailing bytes
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"MMTR"
VERSION = 1
ROLE_NAMES = ("text", "nontext", "special")


def encode_trace(
    payload: np.ndarray, roles: list[str], metadata: dict | None = None
) -> bytes:
    """Serialize a (steps, layers, heads, input_len) attention tensor.

    Values must be finite and non-negative; roles must match the last
    payload axis. Raises ValueError on any violation so callers never
    write a malformed file.
    """
    arr = np.asarray(payload, dtype="<f4")
    if arr.ndim != 4:
        raise ValueError(f"payload must be 4-d (steps, layers, heads, positions), "
                         f"got shape {arr.shape}")
    steps, layers, heads, input_len = arr.shape
    if min(steps, layers, heads) < 1 or input_len < 2:
        raise ValueError(f"degenerate payload shape {arr.shape}")
    if len(roles) != input_len:
        raise ValueError(
            f"{len(roles)} roles for {input_len} input positions"
        )
    unknown = sorted({r for r in roles} - set(ROLE_NAMES))
    if unknown:
        raise ValueError(f"unknown role names {unknown}")
    if not np.isfinite(arr).all():
        raise ValueError("payload contains non-finite values")
    if (arr < 0).any():
        raise ValueError("payload contains negative values")

    header = {
        "layers": layers,
        "heads": heads,
        "input_len": input_len,
        "steps": steps,
        "roles": list(roles),
        "metadata": metadata or {},
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode(
        "utf-8"
    )
    return (
        MAGIC
        + struct.pack("<I", VERSION)
        + struct.pack("<Q", len(header_bytes))
        + header_bytes
        + np.ascontiguousarray(arr).tobytes()
    )
