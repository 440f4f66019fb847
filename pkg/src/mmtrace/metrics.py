"""Modality attention masses, dominance, and efficiency per layer bucket.

The dominance index is the ratio of average per-token attention between
the text and non-text modalities; the efficiency index is a modality's
attention share divided by its token share. Both are computed per layer
and aggregated over the early / middle / late layer buckets (first two,
middle two, and last two layers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMassError
from .trace import AttentionTrace, TokenRole


@dataclass(frozen=True)
class ModalityMass:
    """Normalized attention masses on text and non-text positions."""

    a_text: float
    a_nontext: float

    def __post_init__(self):
        if not (math.isfinite(self.a_text) and math.isfinite(self.a_nontext)):
            raise ValueError(f"masses must be finite, got {self}")
        if self.a_text < 0 or self.a_nontext < 0:
            raise ValueError(f"masses must be non-negative, got {self}")
        if abs(self.a_text + self.a_nontext - 1.0) > 1e-9:
            raise ValueError(
                f"masses must sum to 1 within 1e-9, got {self.a_text + self.a_nontext}"
            )


@dataclass(frozen=True)
class ModalityCounts:
    """Token counts of the text and non-text modalities."""

    n_text: int
    n_nontext: int

    def __post_init__(self):
        if self.n_text < 0 or self.n_nontext < 0:
            raise ValueError(f"counts must be non-negative, got {self}")


@dataclass(frozen=True)
class LayerBuckets:
    """Early/middle/late layer-index groups used for reporting."""

    early: frozenset[int]
    middle: frozenset[int]
    late: frozenset[int]

    def items(self):
        return (("early", self.early), ("middle", self.middle), ("late", self.late))


@dataclass(frozen=True)
class BucketRow:
    """Metrics of one layer bucket."""

    layers: tuple[int, ...]
    mass: ModalityMass
    mdi: float
    aei_text: float
    aei_nontext: float


@dataclass(frozen=True)
class BucketMetrics:
    """The three-bucket metric summary of a trace."""

    counts: ModalityCounts
    n_special: int
    early: BucketRow
    middle: BucketRow
    late: BucketRow

    def items(self):
        return (("early", self.early), ("middle", self.middle), ("late", self.late))


def _require_eligible_counts(counts: ModalityCounts) -> None:
    if counts.n_text < 1:
        raise DegenerateMassError("|T| = 0: no text tokens to average over")
    if counts.n_nontext < 1:
        raise DegenerateMassError("|O| = 0: no non-text tokens to average over")


def _require_positive_mass(mass: ModalityMass) -> None:
    if mass.a_text <= 0:
        raise DegenerateMassError(f"text mass {mass.a_text} is not strictly positive")
    if mass.a_nontext <= 0:
        raise DegenerateMassError(
            f"non-text mass {mass.a_nontext} is not strictly positive"
        )


def layer_mass(trace: AttentionTrace, layer: int) -> ModalityMass:
    """Normalized (text, non-text) attention mass of one layer.

    Sums attention over positions of each role (specials discarded) in
    ascending position order, averages over heads, sums over generation
    steps, then renormalizes so the two masses add to one.
    """
    if not 0 <= layer < trace.num_layers:
        raise IndexError(
            f"layer {layer} out of range for trace with {trace.num_layers} layers"
        )
    counts = ModalityCounts(trace.role_map.n_text, trace.role_map.n_nontext)
    _require_eligible_counts(counts)

    rows = trace.grid()[:, layer, :, :].astype(np.float64)  # (steps, heads, P)
    text_mask = trace.role_map.mask(TokenRole.TEXT)
    nontext_mask = trace.role_map.mask(TokenRole.NONTEXT)
    total_text = float(rows[:, :, text_mask].sum(axis=2).mean(axis=1).sum())
    total_nontext = float(rows[:, :, nontext_mask].sum(axis=2).mean(axis=1).sum())
    total = total_text + total_nontext
    if total <= 0:
        raise DegenerateMassError(
            f"layer {layer} has zero attention mass on text and non-text positions"
        )
    return ModalityMass(total_text / total, total_nontext / total)


def mdi(mass: ModalityMass, counts: ModalityCounts) -> float:
    """Ratio of average per-token attention: text over non-text.

    Values above 1 mean text dominance, below 1 non-text dominance.
    Degenerate masses or counts raise instead of returning infinities.
    """
    _require_eligible_counts(counts)
    _require_positive_mass(mass)
    return (mass.a_text / counts.n_text) / (mass.a_nontext / counts.n_nontext)


def aei(mass: ModalityMass, counts: ModalityCounts, which: TokenRole) -> float:
    """A modality's attention share divided by its token share.

    Values above 1 mean the modality earns more attention than its share
    of the input tokens would suggest.
    """
    _require_eligible_counts(counts)
    _require_positive_mass(mass)
    total_mass = mass.a_text + mass.a_nontext
    total_tokens = counts.n_text + counts.n_nontext
    if which is TokenRole.TEXT:
        return (mass.a_text / total_mass) / (counts.n_text / total_tokens)
    if which is TokenRole.NONTEXT:
        return (mass.a_nontext / total_mass) / (counts.n_nontext / total_tokens)
    raise ValueError(f"modality selector must be TEXT or NONTEXT, got {which}")


def layer_buckets(num_layers: int) -> LayerBuckets:
    """Early/middle/late buckets: first two, middle two, last two layers.

    For a single layer all buckets are {0}; for fewer than six layers the
    buckets may overlap.
    """
    if num_layers < 1:
        raise ValueError(f"num_layers must be >= 1, got {num_layers}")
    if num_layers == 1:
        only = frozenset({0})
        return LayerBuckets(only, only, only)
    mid = num_layers // 2
    return LayerBuckets(
        early=frozenset({0, 1}),
        middle=frozenset({mid - 1, mid}),
        late=frozenset({num_layers - 2, num_layers - 1}),
    )


def _bucket_row(
    layers: frozenset[int], masses: list[ModalityMass], counts: ModalityCounts
) -> BucketRow:
    ordered = tuple(sorted(layers))
    a_text = float(np.mean([masses[i].a_text for i in ordered]))
    a_nontext = float(np.mean([masses[i].a_nontext for i in ordered]))
    total = a_text + a_nontext
    mass = ModalityMass(a_text / total, a_nontext / total)
    return BucketRow(
        layers=ordered,
        mass=mass,
        mdi=mdi(mass, counts),
        aei_text=aei(mass, counts, TokenRole.TEXT),
        aei_nontext=aei(mass, counts, TokenRole.NONTEXT),
    )


def bucket_metrics(trace: AttentionTrace) -> BucketMetrics:
    """Per-bucket mass, dominance, and efficiency for a trace.

    Bucket mass is the arithmetic mean of the bucket's per-layer masses;
    the indices are computed from that mean and the trace's token counts.
    """
    counts = ModalityCounts(trace.role_map.n_text, trace.role_map.n_nontext)
    _require_eligible_counts(counts)
    masses = [layer_mass(trace, layer) for layer in range(trace.num_layers)]
    buckets = layer_buckets(trace.num_layers)
    return BucketMetrics(
        counts=counts,
        n_special=trace.role_map.n_special,
        early=_bucket_row(buckets.early, masses, counts),
        middle=_bucket_row(buckets.middle, masses, counts),
        late=_bucket_row(buckets.late, masses, counts),
    )


def trace_report(trace: AttentionTrace) -> dict:
    """JSON-ready metric report for a trace.

    Shape: {"counts": {...}, "buckets": {early|middle|late: {...}},
    "per_layer": [{"layer", "a_text", "mdi", "aei_text"}, ...]}.
    """
    summary = bucket_metrics(trace)
    counts = summary.counts
    per_layer = []
    for layer in range(trace.num_layers):
        mass = layer_mass(trace, layer)
        per_layer.append(
            {
                "layer": layer,
                "a_text": mass.a_text,
                "mdi": mdi(mass, counts),
                "aei_text": aei(mass, counts, TokenRole.TEXT),
            }
        )
    return {
        "counts": {
            "text": counts.n_text,
            "nontext": counts.n_nontext,
            "special": summary.n_special,
        },
        "buckets": {
            name: {
                "mdi": row.mdi,
                "aei_text": row.aei_text,
                "aei_nontext": row.aei_nontext,
                "a_text": row.mass.a_text,
            }
            for name, row in summary.items()
        },
        "per_layer": per_layer,
    }
