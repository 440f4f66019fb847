"""Toolkit for quantifying text dominance in multimodal attention traces."""

__version__ = "0.1.0"

from .compression import (
    ImportanceScores,
    PruneDecision,
    apply_prune,
    prune_topk,
    retained_count,
    threshold_for_budget,
)
from .errors import (
    BudgetError,
    DegenerateMassError,
    FormatError,
    InfeasibleTiesError,
    MMTraceError,
    NumericError,
    TraceValidationError,
    ValidationError,
)
from .metrics import (
    BucketMetrics,
    LayerBuckets,
    ModalityCounts,
    ModalityMass,
    aei,
    bucket_metrics,
    layer_buckets,
    layer_mass,
    mdi,
    trace_report,
)
from .toy import (
    ComposedInput,
    SweepReport,
    SweepRow,
    ToyConfig,
    ToyModel,
    build_model,
    compose_input,
    encode_cls_scores,
    generate_with_trace,
    run_prune_sweep,
    run_replication_sweep,
)
from .trace import (
    AttentionTrace,
    RoleMap,
    TokenRole,
    Violation,
    read_trace,
    synth_trace,
    validate_trace,
    write_trace,
)

__all__ = [
    "AttentionTrace",
    "BucketMetrics",
    "BudgetError",
    "ComposedInput",
    "DegenerateMassError",
    "FormatError",
    "ImportanceScores",
    "InfeasibleTiesError",
    "LayerBuckets",
    "MMTraceError",
    "ModalityCounts",
    "ModalityMass",
    "NumericError",
    "PruneDecision",
    "RoleMap",
    "SweepReport",
    "SweepRow",
    "TokenRole",
    "ToyConfig",
    "ToyModel",
    "TraceValidationError",
    "ValidationError",
    "Violation",
    "aei",
    "apply_prune",
    "bucket_metrics",
    "build_model",
    "compose_input",
    "encode_cls_scores",
    "generate_with_trace",
    "layer_buckets",
    "layer_mass",
    "mdi",
    "prune_topk",
    "read_trace",
    "retained_count",
    "run_prune_sweep",
    "run_replication_sweep",
    "synth_trace",
    "threshold_for_budget",
    "trace_report",
    "validate_trace",
    "write_trace",
]
