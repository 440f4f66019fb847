"""Attention-trace data model and the MMTR binary file format.

An attention trace stores, for every generated output token, the attention
row over the input positions at each layer and head, together with a role
map labelling every input position as text, non-text, or special. The MMTR
on-disk layout is bit-exact:

    magic "MMTR" (4 bytes)
    format version, u32 little-endian (= 1)
    header length, u64 little-endian
    header, UTF-8 JSON of exactly that length with keys
        {"layers", "heads", "input_len", "steps", "roles", "metadata"}
    payload, steps * layers * heads * input_len IEEE-754 binary32
        little-endian values, index order step-major, then layer, head,
        position; no padding, no trailing bytes.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, BinaryIO, Iterable, Sequence

import numpy as np

from .errors import FormatError, TraceValidationError, ValidationError

MAGIC = b"MMTR"
FORMAT_VERSION = 1

_HEADER_KEYS = {"layers", "heads", "input_len", "steps", "roles", "metadata"}


class TokenRole(Enum):
    """Role of one input position: text, non-text (media), or special."""

    TEXT = "text"
    NONTEXT = "nontext"
    SPECIAL = "special"


@dataclass(frozen=True)
class RoleMap:
    """Per-position role labels for the input sequence of a trace."""

    roles: tuple[TokenRole, ...]

    def __post_init__(self):
        object.__setattr__(self, "roles", tuple(TokenRole(r) for r in self.roles))

    @classmethod
    def from_strings(cls, names: Iterable[str]) -> "RoleMap":
        return cls(tuple(TokenRole(n) for n in names))

    def to_strings(self) -> list[str]:
        return [r.value for r in self.roles]

    def __len__(self) -> int:
        return len(self.roles)

    def count(self, role: TokenRole) -> int:
        return sum(1 for r in self.roles if r is role)

    @property
    def n_text(self) -> int:
        return self.count(TokenRole.TEXT)

    @property
    def n_nontext(self) -> int:
        return self.count(TokenRole.NONTEXT)

    @property
    def n_special(self) -> int:
        return self.count(TokenRole.SPECIAL)

    def mask(self, role: TokenRole) -> np.ndarray:
        """Boolean mask over positions holding the given role."""
        return np.array([r is role for r in self.roles], dtype=bool)

    def positions(self, role: TokenRole) -> np.ndarray:
        return np.flatnonzero(self.mask(role))


@dataclass(eq=False)
class AttentionTrace:
    """Dense per-step, per-layer, per-head attention over input positions.

    The payload is float32 with canonical shape (steps, layers, heads,
    input_len). Rows are truncated to input positions, so they need not sum
    to one; metrics renormalize. Traces are immutable after construction.
    """

    num_layers: int
    num_heads: int
    input_len: int
    num_steps: int
    role_map: RoleMap
    payload: np.ndarray
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        arr = np.array(self.payload, dtype=np.float32, copy=True)
        expected = self.num_steps * self.num_layers * self.num_heads * self.input_len
        if arr.size == expected:
            arr = arr.reshape(
                self.num_steps, self.num_layers, self.num_heads, self.input_len
            )
        arr.setflags(write=False)
        self.payload = arr

    def grid(self) -> np.ndarray:
        """Payload as a (steps, layers, heads, input_len) array."""
        if self.payload.ndim != 4:
            raise TraceValidationError(validate_trace(self))
        return self.payload

    def __eq__(self, other) -> bool:
        if not isinstance(other, AttentionTrace):
            return NotImplemented
        return (
            self.num_layers == other.num_layers
            and self.num_heads == other.num_heads
            and self.input_len == other.input_len
            and self.num_steps == other.num_steps
            and self.role_map == other.role_map
            and self.metadata == other.metadata
            and self.payload.shape == other.payload.shape
            and self.payload.tobytes() == other.payload.tobytes()
        )


@dataclass(frozen=True)
class Violation:
    """One violated trace invariant, with enough detail to locate it."""

    invariant: str
    message: str
    index: tuple | None = None

    def __str__(self) -> str:
        return f"{self.invariant}: {self.message}"


def validate_trace(trace: AttentionTrace) -> list[Violation]:
    """Check every trace invariant and return all violations found.

    Invariants are checked in a fixed order (dims, payload-count,
    payload-value, rolemap-length, metrics-ineligible) and indices within
    each invariant ascend, so the listing is deterministic.
    """
    violations: list[Violation] = []

    dims = [
        ("layers", trace.num_layers, 1),
        ("heads", trace.num_heads, 1),
        ("input_len", trace.input_len, 2),
        ("steps", trace.num_steps, 1),
    ]
    for name, value, lo in dims:
        if not isinstance(value, (int, np.integer)) or value < lo:
            violations.append(
                Violation("dims", f"{name} must be an integer >= {lo}, got {value!r}")
            )

    expected = (
        trace.num_steps * trace.num_layers * trace.num_heads * trace.input_len
    )
    if trace.payload.size != expected:
        violations.append(
            Violation(
                "payload-count",
                f"payload holds {trace.payload.size} values, "
                f"expected steps*layers*heads*input_len = {expected}",
            )
        )

    flat = trace.payload.reshape(-1)
    bad = np.flatnonzero(~np.isfinite(flat) | (flat < 0))
    for i in bad:
        value = flat[i]
        if trace.payload.ndim == 4:
            idx = tuple(int(k) for k in np.unravel_index(i, trace.payload.shape))
        else:
            idx = (int(i),)
        where = "".join(f"[{k}]" for k in idx)
        if math.isnan(float(value)):
            what = "NaN"
        elif math.isinf(float(value)):
            what = "infinity"
        else:
            what = f"negative value {float(value)!r}"
        violations.append(Violation("payload-value", f"{what} at {where}", idx))

    if len(trace.role_map) != trace.input_len:
        violations.append(
            Violation(
                "rolemap-length",
                f"role map has {len(trace.role_map)} entries, header input_len "
                f"is {trace.input_len}",
            )
        )

    if trace.role_map.n_text == 0:
        violations.append(Violation("metrics-ineligible", "|T| = 0"))
    if trace.role_map.n_nontext == 0:
        violations.append(Violation("metrics-ineligible", "|O| = 0"))

    return violations


def _as_sink(destination) -> tuple[BinaryIO, bool]:
    if hasattr(destination, "write"):
        return destination, False
    return open(Path(destination), "wb"), True


def _as_source(source) -> tuple[BinaryIO, bool]:
    if hasattr(source, "read"):
        return source, False
    return open(Path(source), "rb"), True


def write_trace(trace: AttentionTrace, destination) -> int:
    """Serialize a valid trace to the MMTR format; returns bytes written.

    `destination` may be a path or a writable binary stream. The trace is
    validated first and nothing is written if any invariant fails. The
    header JSON is emitted with sorted keys and no whitespace so identical
    traces always produce identical bytes.
    """
    violations = validate_trace(trace)
    if violations:
        raise TraceValidationError(violations)

    header = {
        "layers": int(trace.num_layers),
        "heads": int(trace.num_heads),
        "input_len": int(trace.input_len),
        "steps": int(trace.num_steps),
        "roles": trace.role_map.to_strings(),
        "metadata": trace.metadata,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode(
        "utf-8"
    )
    payload_bytes = np.ascontiguousarray(trace.grid(), dtype="<f4").tobytes()

    sink, owned = _as_sink(destination)
    try:
        written = 0
        written += sink.write(MAGIC)
        written += sink.write(struct.pack("<I", FORMAT_VERSION))
        written += sink.write(struct.pack("<Q", len(header_bytes)))
        written += sink.write(header_bytes)
        written += sink.write(payload_bytes)
    finally:
        if owned:
            sink.close()
    return written


def _read_exact(stream: BinaryIO, n: int, what: str) -> bytes:
    data = stream.read(n)
    if len(data) != n:
        raise FormatError(f"truncated {what}: expected {n} bytes, got {len(data)}")
    return data


def read_trace(source, validate: bool = True) -> AttentionTrace:
    """Parse an MMTR byte stream back into an AttentionTrace.

    Rejects unknown magic or version and truncated or trailing bytes with
    FormatError. With validate=True (the default) the decoded trace must
    also satisfy every invariant, otherwise TraceValidationError carries
    the violation list; validate=False returns the decoded trace as-is so
    callers can inspect violations themselves.
    """
    stream, owned = _as_source(source)
    try:
        magic = _read_exact(stream, 4, "magic")
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(stream, 4, "version"))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported format version {version}")
        (header_len,) = struct.unpack("<Q", _read_exact(stream, 8, "header length"))
        header_bytes = _read_exact(stream, header_len, "header")
        try:
            header = json.loads(header_bytes.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"header is not valid JSON: {exc}") from exc
        if not isinstance(header, dict) or set(header) != _HEADER_KEYS:
            raise FormatError(
                f"header keys {sorted(header) if isinstance(header, dict) else header!r} "
                f"do not match required keys {sorted(_HEADER_KEYS)}"
            )
        dims = {}
        for key in ("layers", "heads", "input_len", "steps"):
            value = header[key]
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise FormatError(f"header field {key!r} must be a non-negative integer")
            dims[key] = value
        roles = header["roles"]
        if not isinstance(roles, list):
            raise FormatError("header field 'roles' must be an array")
        try:
            role_map = RoleMap.from_strings(roles)
        except ValueError as exc:
            raise FormatError(f"unknown role name in header: {exc}") from exc
        metadata = header["metadata"]
        if not isinstance(metadata, dict):
            raise FormatError("header field 'metadata' must be an object")

        count = dims["steps"] * dims["layers"] * dims["heads"] * dims["input_len"]
        data = stream.read(count * 4)
        if len(data) != count * 4:
            raise FormatError(
                f"truncated payload: expected {count * 4} bytes, got {len(data)}"
            )
        if stream.read(1):
            raise FormatError("trailing bytes after payload")
        payload = np.frombuffer(data, dtype="<f4")
    finally:
        if owned:
            stream.close()

    trace = AttentionTrace(
        num_layers=dims["layers"],
        num_heads=dims["heads"],
        input_len=dims["input_len"],
        num_steps=dims["steps"],
        role_map=role_map,
        payload=payload,
        metadata=metadata,
    )
    if validate:
        violations = validate_trace(trace)
        if violations:
            raise TraceValidationError(violations)
    return trace


def _dyadic_role_weights(
    a_text: float, a_nontext: float, n_text: int, n_nontext: int
) -> tuple[float, float]:
    """Per-position weights whose renormalized role masses hit the targets.

    Both weights are dyadic rationals (integer mantissa times a power of
    two), hence exactly representable in float32, and their ratio is a best
    rational approximation of the target per-token ratio with 24-bit terms.
    Recovered masses therefore match the request to ~1e-13 for arbitrary
    targets and exactly for simple rational ones.
    """
    ratio = (Fraction(a_text) * n_nontext) / (Fraction(a_nontext) * n_text)
    half, one = Fraction(1, 2), Fraction(1)
    k = 0
    while ratio >= one:
        ratio /= 2
        k += 1
    while ratio < half:
        ratio *= 2
        k -= 1
    approx = ratio.limit_denominator((1 << 24) - 1)
    p, q = approx.numerator, approx.denominator
    if p == 0:
        p = 1  # target ratio below the mantissa grid; clamp to smallest step
    w_text = math.ldexp(float(p), k - 30)
    w_nontext = math.ldexp(float(q), -30)
    for w in (w_text, w_nontext):
        if not (0 < w < math.inf) or float(np.float32(w)) != w:
            raise ValidationError(
                f"target masses ({a_text}, {a_nontext}) with counts "
                f"({n_text}, {n_nontext}) are outside the float32-exact range"
            )
    return w_text, w_nontext


def synth_trace(
    layer_masses: Sequence[tuple[float, float]],
    n_text: int,
    n_nontext: int,
    *,
    steps: int = 1,
    heads: int = 1,
    n_special: int = 0,
    metadata: dict | None = None,
) -> AttentionTrace:
    """Build a synthetic trace whose per-layer role masses are prescribed.

    `layer_masses` gives one (text, non-text) mass pair per layer; each pair
    must be strictly positive and sum to one. Attention is uniform within a
    role (text block first, then non-text, then specials with zero weight),
    using dyadic weights so the masses recovered by the metric engine match
    the request to ~1e-13.
    """
    if len(layer_masses) < 1:
        raise ValidationError("at least one layer mass pair is required")
    if steps < 1 or heads < 1 or n_special < 0:
        raise ValidationError("steps and heads must be >= 1, n_special >= 0")
    for layer, (a_text, a_nontext) in enumerate(layer_masses):
        if not (a_text > 0 and a_nontext > 0):
            raise ValidationError(
                f"layer {layer}: target masses must be strictly positive, "
                f"got ({a_text}, {a_nontext})"
            )
        if abs(a_text + a_nontext - 1.0) > 1e-9:
            raise ValidationError(
                f"layer {layer}: target masses must sum to 1, "
                f"got {a_text + a_nontext}"
            )
        if n_text < 1:
            raise ValidationError(f"layer {layer}: |T| = 0 cannot carry mass {a_text}")
        if n_nontext < 1:
            raise ValidationError(
                f"layer {layer}: |O| = 0 cannot carry mass {a_nontext}"
            )

    num_layers = len(layer_masses)
    input_len = n_text + n_nontext + n_special
    rows = np.zeros((num_layers, input_len), dtype=np.float32)
    for layer, (a_text, a_nontext) in enumerate(layer_masses):
        w_text, w_nontext = _dyadic_role_weights(a_text, a_nontext, n_text, n_nontext)
        rows[layer, :n_text] = w_text
        rows[layer, n_text : n_text + n_nontext] = w_nontext

    payload = np.broadcast_to(
        rows[np.newaxis, :, np.newaxis, :], (steps, num_layers, heads, input_len)
    )
    roles = (
        [TokenRole.TEXT] * n_text
        + [TokenRole.NONTEXT] * n_nontext
        + [TokenRole.SPECIAL] * n_special
    )
    return AttentionTrace(
        num_layers=num_layers,
        num_heads=heads,
        input_len=input_len,
        num_steps=steps,
        role_map=RoleMap(tuple(roles)),
        payload=payload,
        metadata={"generator": "synth"} if metadata is None else metadata,
    )
