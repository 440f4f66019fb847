"""Shared builders for trace fixtures used across the test modules."""

import io
import json
import struct

import numpy as np

from mmtrace import AttentionTrace, RoleMap, synth_trace, write_trace


def invert_dominance(mdi_value: float, n_text: int, n_nontext: int) -> float:
    """Text mass that yields the given dominance index at these counts."""
    ratio = mdi_value * n_text / n_nontext
    return ratio / (1.0 + ratio)


def bucket_target_trace(bucket_mdi, n_text, n_nontext, steps=1, heads=1):
    """Six-layer trace whose early/middle/late buckets hit the given MDIs."""
    early, middle, late = bucket_mdi
    masses = []
    for value in (early, early, middle, middle, late, late):
        a_text = invert_dominance(value, n_text, n_nontext)
        masses.append((a_text, 1.0 - a_text))
    return synth_trace(masses, n_text, n_nontext, steps=steps, heads=heads)


def baseline_fixture() -> AttentionTrace:
    return bucket_target_trace((1.58, 10.23, 17.37), 60, 576)


def reduced90_fixture() -> AttentionTrace:
    # 90% of the 576 non-text tokens removed: 57 remain.
    return bucket_target_trace((0.57, 1.10, 1.84), 60, 57)


def reduced95_fixture() -> AttentionTrace:
    return bucket_target_trace((0.48, 0.86, 3.39), 60, 28)


def trace_to_bytes(trace: AttentionTrace) -> bytes:
    buf = io.BytesIO()
    write_trace(trace, buf)
    return buf.getvalue()


def write_fixture(trace: AttentionTrace, path) -> str:
    with open(path, "wb") as sink:
        write_trace(trace, sink)
    return str(path)


def random_trace(rng: np.random.Generator) -> AttentionTrace:
    layers = int(rng.integers(1, 5))
    heads = int(rng.integers(1, 4))
    steps = int(rng.integers(1, 5))
    n_text = int(rng.integers(1, 6))
    n_nontext = int(rng.integers(1, 8))
    n_special = int(rng.integers(0, 3))
    roles = (
        ["text"] * n_text + ["nontext"] * n_nontext + ["special"] * n_special
    )
    rng.shuffle(roles)
    input_len = len(roles)
    payload = rng.random((steps, layers, heads, input_len)).astype(np.float32)
    return AttentionTrace(
        num_layers=layers,
        num_heads=heads,
        input_len=input_len,
        num_steps=steps,
        role_map=RoleMap.from_strings(roles),
        payload=payload,
        metadata={"case": "random"},
    )


def raw_mmtr_bytes(layers, heads, input_len, steps, roles, payload_values,
                   magic=b"MMTR", version=1, metadata=None, trailing=b""):
    """Hand-assembled MMTR bytes, for crafting invalid files."""
    header = {
        "layers": layers,
        "heads": heads,
        "input_len": input_len,
        "steps": steps,
        "roles": list(roles),
        "metadata": metadata or {},
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    payload = np.asarray(payload_values, dtype="<f4").tobytes()
    return (
        magic
        + struct.pack("<I", version)
        + struct.pack("<Q", len(header_bytes))
        + header_bytes
        + payload
        + trailing
    )
