"""Importance-ranked token pruning for the non-text modality.

Importance scores (typically the pooled-token attention row of an encoder)
rank the non-text tokens; a reduction rate r keeps the top
max(1, floor(N * (1 - r))) of them, preserving original order. A budget
fraction maps to the minimal score threshold whose retained set fits it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import BudgetError, InfeasibleTiesError, ValidationError
from .trace import RoleMap, TokenRole


@dataclass(frozen=True)
class ImportanceScores:
    """Non-negative saliency scores, one per non-text token."""

    scores: np.ndarray
    source: str = "cls-attention"

    def __post_init__(self):
        arr = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if arr.size < 1:
            raise ValidationError("at least one score is required")
        if not np.isfinite(arr).all():
            raise ValidationError("scores must all be finite")
        if (arr < 0).any():
            raise ValidationError("scores must all be non-negative")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "scores", arr)

    def __len__(self) -> int:
        return int(self.scores.size)


@dataclass(frozen=True)
class PruneDecision:
    """Which non-text tokens survive pruning, and under what budget."""

    kept: tuple[int, ...]
    reduction_rate: float
    retained_count: int
    threshold: Optional[float] = None

    def to_json(self) -> dict:
        return {
            "kept": list(self.kept),
            "reduction_rate": self.reduction_rate,
            "retained": self.retained_count,
            "threshold": self.threshold,
        }


def retained_count(n: int, rate: float) -> int:
    """Tokens kept at a reduction rate: max(1, floor(n * (1 - rate)))."""
    return max(1, int(n * (1.0 - rate)))


def prune_topk(scores: ImportanceScores, rate: float) -> PruneDecision:
    """Keep the highest-scoring tokens at the given reduction rate.

    Ties break toward the smaller original index; kept indices are returned
    ascending so the surviving tokens preserve their original order.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"reduction rate must be in [0, 1), got {rate}")
    n = len(scores)
    m = retained_count(n, rate)
    values = scores.scores
    ranked = sorted(range(n), key=lambda i: (-values[i], i))
    kept = tuple(sorted(ranked[:m]))
    return PruneDecision(kept=kept, reduction_rate=float(rate), retained_count=m)


def threshold_for_budget(scores: ImportanceScores, budget_fraction: float) -> float:
    """Minimal observed score tau with |{a : a >= tau}| within the budget.

    The budget is floor(N * (1 - budget_fraction)) tokens. A zero budget is
    an error, and so is a tie group at the maximum score larger than the
    budget, since no observed threshold can then satisfy it.
    """
    if not 0.0 <= budget_fraction < 1.0:
        raise ValueError(f"budget fraction must be in [0, 1), got {budget_fraction}")
    n = len(scores)
    budget = int(n * (1.0 - budget_fraction))
    if budget < 1:
        raise BudgetError(
            f"budget floor({n} * (1 - {budget_fraction})) = 0 retains nothing"
        )
    ascending = np.sort(scores.scores)
    for tau in np.unique(ascending):
        at_or_above = n - int(np.searchsorted(ascending, tau, side="left"))
        if at_or_above <= budget:
            return float(tau)
    top_ties = int((scores.scores == ascending[-1]).sum())
    raise InfeasibleTiesError(
        f"{top_ties} scores tie at the maximum; no observed threshold retains "
        f"<= {budget} tokens"
    )


def apply_prune(role_map: RoleMap, decision: PruneDecision) -> RoleMap:
    """Role map after dropping the pruned non-text positions.

    Kept indices refer to non-text positions in order of appearance; text
    and special positions pass through unchanged.
    """
    total_nontext = role_map.n_nontext
    for index in decision.kept:
        if not 0 <= index < total_nontext:
            raise ValidationError(
                f"kept index {index} out of range for {total_nontext} non-text tokens"
            )
    keep = set(decision.kept)
    roles = []
    ordinal = 0
    for role in role_map.roles:
        if role is TokenRole.NONTEXT:
            if ordinal in keep:
                roles.append(role)
            ordinal += 1
        else:
            roles.append(role)
    return RoleMap(tuple(roles))
