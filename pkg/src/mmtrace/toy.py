"""Deterministic toy multimodal decoder that emits real attention traces.

A small pre-norm causal transformer with learned absolute positions plays
the role of a multimodal LM: text enters through an embedding table, the
non-text "media" block enters as continuous embeddings built from a small
set of prototype vectors, so redundancy (how few distinct prototypes) and
replication (how many copies of the block) are directly controllable. A
separate frozen one-layer pooled-token encoder scores non-text tokens for
pruning experiments.

Everything is derived from (config, seed) through a named generator
(NumPy PCG64 via SeedSequence streams), so identical configurations yield
byte-identical traces and reports.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Any, Optional, Sequence

import numpy as np

from .compression import ImportanceScores, apply_prune, prune_topk
from .errors import NumericError, ValidationError
from .metrics import bucket_metrics
from .trace import AttentionTrace, RoleMap, TokenRole

# Initialization scales. Queries/keys get a gain > 1 so attention is sharp
# (top-few-dominated); that is what makes redundant near-duplicate tokens
# compete for a roughly fixed block-level share of attention instead of
# accumulating mass proportional to their count. Value/output mixing stays
# weak so deep-layer queries remain content-aligned.
_EMB_SCALE = 1.0
_POS_SCALE = 0.3
_QK_GAIN = 4.0
_VO_GAIN = 0.3
_CLS_GAIN = 4.0
# The pooled-token encoder runs many small sharp heads so its score vector
# spikes on several distinct prototypes, not just one.
_CLS_HEADS = 16
_LN_EPS = 1e-5

BOS_ID = 0
SEP_ID = 1
_RESERVED_IDS = 2


@dataclass(frozen=True)
class ToyConfig:
    """Architecture and input-composition knobs of the toy decoder."""

    layers: int = 6
    heads: int = 4
    width: int = 64
    ff_width: int = 256
    vocab_size: int = 256
    text_len: int = 24
    nontext_len: int = 96
    redundancy: float = 0.9
    replication: int = 1
    steps: int = 16
    noise: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        if self.layers < 1 or self.heads < 1:
            raise ValidationError("layers and heads must be >= 1")
        if self.width < 1 or self.width % self.heads != 0:
            raise ValidationError(
                f"width {self.width} must be positive and divisible by "
                f"heads {self.heads}"
            )
        if self.ff_width < 1:
            raise ValidationError("ff_width must be >= 1")
        if self.vocab_size < _RESERVED_IDS + 1:
            raise ValidationError(
                f"vocab_size must be > {_RESERVED_IDS} (two ids are reserved)"
            )
        if self.text_len < 1 or self.nontext_len < 1:
            raise ValidationError("text_len and nontext_len must be >= 1")
        if not 0.0 <= self.redundancy <= 1.0:
            raise ValidationError(f"redundancy must be in [0, 1], got {self.redundancy}")
        if self.replication < 1:
            raise ValidationError(f"replication must be >= 1, got {self.replication}")
        if self.steps < 1:
            raise ValidationError("steps must be >= 1")
        if self.noise < 0:
            raise ValidationError("noise scale must be >= 0")

    @property
    def num_special(self) -> int:
        return 2  # BOS and SEP

    @property
    def input_len(self) -> int:
        return self.text_len + self.replication * self.nontext_len + self.num_special

    @property
    def prototype_count(self) -> int:
        return max(1, round((1.0 - self.redundancy) * self.nontext_len))


@dataclass
class BlockParams:
    """Parameters of one decoder layer."""

    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class ToyModel:
    """All parameters of the toy decoder plus its pooled-token encoder."""

    config: ToyConfig
    tok_emb: np.ndarray
    pos_emb: np.ndarray
    blocks: list[BlockParams]
    ln_f_gamma: np.ndarray
    ln_f_beta: np.ndarray
    out_proj: np.ndarray
    cls_vec: np.ndarray
    cls_wq: np.ndarray
    cls_wk: np.ndarray

    def parameter_arrays(self) -> list[np.ndarray]:
        arrays = [self.tok_emb, self.pos_emb, self.ln_f_gamma, self.ln_f_beta,
                  self.out_proj, self.cls_vec, self.cls_wq, self.cls_wk]
        for block in self.blocks:
            arrays.extend(
                getattr(block, name)
                for name in (
                    "ln1_gamma", "ln1_beta", "wq", "wk", "wv", "wo",
                    "ln2_gamma", "ln2_beta", "w1", "b1", "w2", "b2",
                )
            )
        return arrays


@dataclass
class ComposedInput:
    """Embedded input sequence, its role map, and the prototypes used."""

    embeddings: np.ndarray  # (P, width), positional terms not yet added
    role_map: RoleMap
    prototypes: np.ndarray  # (K, width)
    text_ids: np.ndarray  # (text_len,)

    def __len__(self) -> int:
        return self.embeddings.shape[0]


def _streams(seed: int) -> tuple[np.random.Generator, ...]:
    # Fixed stream split: 0 = model parameters, 1 = positional rows,
    # 2 = input composition. Positional rows come from their own stream so
    # the first positions are identical across replication factors.
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.Generator(np.random.PCG64(c)) for c in children)


def build_model(config: ToyConfig) -> ToyModel:
    """Draw all parameters for a config; same (config, seed) is bit-identical."""
    config.validate()
    rng, rng_pos, _ = _streams(config.seed)
    d, h, ff, vocab = config.width, config.heads, config.ff_width, config.vocab_size

    tok_emb = rng.normal(0.0, _EMB_SCALE, (vocab, d))
    blocks = []
    for _ in range(config.layers):
        blocks.append(
            BlockParams(
                ln1_gamma=np.ones(d),
                ln1_beta=np.zeros(d),
                wq=rng.normal(0.0, _QK_GAIN / math.sqrt(d), (d, d)),
                wk=rng.normal(0.0, _QK_GAIN / math.sqrt(d), (d, d)),
                wv=rng.normal(0.0, _VO_GAIN / math.sqrt(d), (d, d)),
                wo=rng.normal(0.0, _VO_GAIN / math.sqrt(d), (d, d)),
                ln2_gamma=np.ones(d),
                ln2_beta=np.zeros(d),
                w1=rng.normal(0.0, 1.0 / math.sqrt(d), (d, ff)),
                b1=np.zeros(ff),
                w2=rng.normal(0.0, 1.0 / math.sqrt(ff), (ff, d)),
                b2=np.zeros(d),
            )
        )
    ln_f_gamma = np.ones(d)
    ln_f_beta = np.zeros(d)
    out_proj = rng.normal(0.0, 1.0 / math.sqrt(d), (d, vocab))
    cls_vec = rng.normal(0.0, _EMB_SCALE, d)
    cls_wq = rng.normal(0.0, _CLS_GAIN / math.sqrt(d), (d, d))
    cls_wk = rng.normal(0.0, _CLS_GAIN / math.sqrt(d), (d, d))

    max_pos = config.input_len + config.steps
    pos_emb = rng_pos.normal(0.0, _POS_SCALE, (max_pos, d))

    return ToyModel(
        config=config,
        tok_emb=tok_emb,
        pos_emb=pos_emb,
        blocks=blocks,
        ln_f_gamma=ln_f_gamma,
        ln_f_beta=ln_f_beta,
        out_proj=out_proj,
        cls_vec=cls_vec,
        cls_wq=cls_wq,
        cls_wk=cls_wk,
    )


def compose_input(config: ToyConfig, model: ToyModel) -> ComposedInput:
    """Assemble [BOS][text][SEP][non-text block x replication] embeddings.

    The non-text block is prototype_(i mod K) + noise * eps_i per base
    position; replicated copies duplicate the block exactly. Text tokens
    and prototypes are drawn from a stream untouched by the replication
    factor, so the text input is held constant across factors.
    """
    config.validate()
    _, _, rng = _streams(config.seed)
    d = config.width
    k = config.prototype_count

    text_ids = rng.integers(_RESERVED_IDS, config.vocab_size, config.text_len)
    prototypes = rng.normal(0.0, _EMB_SCALE, (k, d))
    noise = rng.normal(0.0, 1.0, (config.nontext_len, d))

    base_block = prototypes[np.arange(config.nontext_len) % k] + config.noise * noise
    nontext = np.tile(base_block, (config.replication, 1))

    embeddings = np.concatenate(
        [
            model.tok_emb[BOS_ID][np.newaxis, :],
            model.tok_emb[text_ids],
            model.tok_emb[SEP_ID][np.newaxis, :],
            nontext,
        ]
    )
    roles = (
        [TokenRole.SPECIAL]
        + [TokenRole.TEXT] * config.text_len
        + [TokenRole.SPECIAL]
        + [TokenRole.NONTEXT] * (config.replication * config.nontext_len)
    )
    return ComposedInput(
        embeddings=embeddings,
        role_map=RoleMap(tuple(roles)),
        prototypes=prototypes,
        text_ids=text_ids,
    )


def _layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + _LN_EPS) * gamma + beta


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    # (T, d) -> (heads, T, d_head)
    t, d = x.shape
    return x.reshape(t, heads, d // heads).transpose(1, 0, 2)


def _check_rows(prob: np.ndarray, step: int, layer: int) -> None:
    if not np.isfinite(prob).all():
        raise NumericError(f"non-finite attention at step {step}, layer {layer}")
    err = np.abs(prob.sum(axis=-1) - 1.0).max()
    if err > 1e-5:
        raise NumericError(
            f"attention rows deviate from 1 by {err:.2e} at step {step}, layer {layer}"
        )


def generate_with_trace(
    model: ToyModel, composed: ComposedInput, steps: Optional[int] = None
) -> AttentionTrace:
    """Greedy-decode and record the generating token's attention per layer.

    Step s records, for every layer and head, the attention row of the
    query that produces output token s (the last position of the current
    prefix), truncated to the input positions. Rows are checked to sum to
    one before truncation.
    """
    config = model.config
    if steps is None:
        steps = config.steps
    if steps < 1:
        raise ValidationError("steps must be >= 1")

    d, h = config.width, config.heads
    dh = d // h
    scale = 1.0 / math.sqrt(dh)
    p = len(composed)
    total = p + steps  # decode appends at most steps - 1 generated tokens
    if model.pos_emb.shape[0] < total:
        raise ValidationError(
            f"positional table holds {model.pos_emb.shape[0]} positions, "
            f"need {total}"
        )

    k_cache = [np.empty((h, total, dh)) for _ in range(config.layers)]
    v_cache = [np.empty((h, total, dh)) for _ in range(config.layers)]
    rows = np.empty((steps, config.layers, h, p), dtype=np.float64)

    # Prefill over the whole input with causal masking.
    x = composed.embeddings + model.pos_emb[:p]
    causal = np.triu(np.full((p, p), -np.inf), k=1)
    for layer, block in enumerate(model.blocks):
        xn = _layer_norm(x, block.ln1_gamma, block.ln1_beta)
        q = _split_heads(xn @ block.wq, h)
        k = _split_heads(xn @ block.wk, h)
        v = _split_heads(xn @ block.wv, h)
        k_cache[layer][:, :p] = k
        v_cache[layer][:, :p] = v
        logits = q @ k.transpose(0, 2, 1) * scale + causal
        attn = _softmax(logits)
        _check_rows(attn[:, p - 1, :], 0, layer)
        rows[0, layer] = attn[:, p - 1, :]
        ctx = (attn @ v).transpose(1, 0, 2).reshape(p, d)
        x = x + ctx @ block.wo
        xn2 = _layer_norm(x, block.ln2_gamma, block.ln2_beta)
        x = x + np.maximum(xn2 @ block.w1 + block.b1, 0.0) @ block.w2 + block.b2
        if not np.isfinite(x).all():
            raise NumericError(f"non-finite hidden state at step 0, layer {layer}")

    state = x[p - 1]
    next_id = int(np.argmax(_layer_norm(state, model.ln_f_gamma, model.ln_f_beta)
                            @ model.out_proj))

    # Decode with the KV cache; the token generated at step s - 1 sits at
    # position p + s - 1 and records the rows for step s.
    for step in range(1, steps):
        t = p + step
        x1 = model.tok_emb[next_id] + model.pos_emb[t - 1]
        for layer, block in enumerate(model.blocks):
            xn = _layer_norm(x1, block.ln1_gamma, block.ln1_beta)
            q = (xn @ block.wq).reshape(h, dh)
            k_cache[layer][:, t - 1] = (xn @ block.wk).reshape(h, dh)
            v_cache[layer][:, t - 1] = (xn @ block.wv).reshape(h, dh)
            keys = k_cache[layer][:, :t]
            logits = np.einsum("hd,htd->ht", q, keys) * scale
            attn = _softmax(logits)
            _check_rows(attn, step, layer)
            rows[step, layer] = attn[:, :p]
            ctx = np.einsum("ht,htd->hd", attn, v_cache[layer][:, :t]).reshape(d)
            x1 = x1 + ctx @ block.wo
            xn2 = _layer_norm(x1, block.ln2_gamma, block.ln2_beta)
            x1 = x1 + np.maximum(xn2 @ block.w1 + block.b1, 0.0) @ block.w2 + block.b2
            if not np.isfinite(x1).all():
                raise NumericError(f"non-finite hidden state at step {step}, layer {layer}")
        next_id = int(np.argmax(_layer_norm(x1, model.ln_f_gamma, model.ln_f_beta)
                                @ model.out_proj))

    return AttentionTrace(
        num_layers=config.layers,
        num_heads=h,
        input_len=p,
        num_steps=steps,
        role_map=composed.role_map,
        payload=rows.astype(np.float32),
        metadata={
            "model": "toy",
            "replication": int(config.replication),
            "redundancy": float(config.redundancy),
            "seed": int(config.seed),
        },
    )


def encode_cls_scores(model: ToyModel, composed: ComposedInput) -> ImportanceScores:
    """Importance of each non-text token: the pooled query's attention row.

    A learnable pooled vector is prepended to the non-text embeddings and
    one attention layer is run; the head-averaged attention of the pooled
    query over the non-text positions (its self-mass excluded) is the
    score vector. Positional terms are deliberately absent, so permuting
    tokens permutes scores.
    """
    nontext_mask = composed.role_map.mask(TokenRole.NONTEXT)
    tokens = composed.embeddings[nontext_mask]
    if tokens.shape[0] < 1:
        raise ValidationError("input has no non-text tokens to score")

    config = model.config
    h = max(n for n in (_CLS_HEADS, 8, 4, 2, 1) if config.width % n == 0)
    dh = config.width // h
    seq = np.concatenate([model.cls_vec[np.newaxis, :], tokens])
    q = (model.cls_vec @ model.cls_wq).reshape(h, dh)
    keys = _split_heads(seq @ model.cls_wk, h)
    logits = np.einsum("hd,htd->ht", q, keys) / math.sqrt(dh)
    attn = _softmax(logits)
    scores = attn[:, 1:].mean(axis=0)  # drop the pooled token's own column
    return ImportanceScores(scores=scores, source="cls-attention")


@dataclass(frozen=True)
class SweepRow:
    """One (parameter, seed, bucket) result row of a sweep."""

    sweep: str
    param: float
    seed: int
    bucket: str
    mdi: float
    aei_text: float
    aei_nontext: float
    n_text: int
    n_nontext: int

    def to_json(self) -> dict:
        return {
            "sweep": self.sweep,
            "param": self.param,
            "seed": self.seed,
            "bucket": self.bucket,
            "mdi": self.mdi,
            "aei_text": self.aei_text,
            "aei_nontext": self.aei_nontext,
            "n_text": self.n_text,
            "n_nontext": self.n_nontext,
        }


CSV_HEADER = (
    "sweep,param,seed,bucket,mdi,aei_text,aei_nontext,n_text,n_nontext"
)


@dataclass
class SweepReport:
    """All rows of a sweep plus its direction-of-effect summary."""

    kind: str
    params: list[float]
    seeds: list[int]
    rows: list[SweepRow]
    summary: dict[str, Any]
    traces: dict[tuple[float, int], AttentionTrace] = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER.split(","))
        for row in self.rows:
            writer.writerow(
                [
                    row.sweep,
                    _format_param(row.param),
                    row.seed,
                    row.bucket,
                    f"{row.mdi:.9f}",
                    f"{row.aei_text:.9f}",
                    f"{row.aei_nontext:.9f}",
                    row.n_text,
                    row.n_nontext,
                ]
            )
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "params": [_param_value(p) for p in self.params],
            "seeds": self.seeds,
            "rows": [r.to_json() for r in self.rows],
            "summary": self.summary,
        }


def _param_value(param: float):
    return int(param) if float(param).is_integer() else float(param)


def _format_param(param: float) -> str:
    value = _param_value(param)
    return str(value) if isinstance(value, int) else repr(value)


def _bucket_rows(
    kind: str, param: float, seed: int, trace: AttentionTrace
) -> list[SweepRow]:
    summary = bucket_metrics(trace)
    return [
        SweepRow(
            sweep=kind,
            param=param,
            seed=seed,
            bucket=name,
            mdi=row.mdi,
            aei_text=row.aei_text,
            aei_nontext=row.aei_nontext,
            n_text=summary.counts.n_text,
            n_nontext=summary.counts.n_nontext,
        )
        for name, row in summary.items()
    ]


def run_replication_sweep(
    config: ToyConfig,
    factors: Sequence[int],
    seeds: Optional[Sequence[int]] = None,
    keep_traces: bool = False,
) -> SweepReport:
    """Generate and analyze traces across non-text replication factors.

    For every (factor, seed) the model is rebuilt with that seed, the input
    composed with the factor, a trace generated, and bucket metrics
    emitted. The summary reports in how many seeds the late-bucket
    dominance index increased from the smallest to the largest factor, and
    in how many it rose monotonically.
    """
    if len(factors) == 0:
        raise ValidationError("at least one replication factor is required")
    for factor in factors:
        if factor < 1:
            raise ValidationError(f"replication factors must be >= 1, got {factor}")
    if seeds is None:
        seeds = [config.seed]
    seeds = [int(s) for s in seeds]

    rows: list[SweepRow] = []
    traces: dict[tuple[float, int], AttentionTrace] = {}
    late: dict[tuple[int, int], float] = {}
    for factor in factors:
        for seed in seeds:
            cfg = replace(config, replication=int(factor), seed=seed)
            model = build_model(cfg)
            composed = compose_input(cfg, model)
            trace = generate_with_trace(model, composed)
            if keep_traces:
                traces[(factor, seed)] = trace
            bucket = _bucket_rows("replication", factor, seed, trace)
            rows.extend(bucket)
            late[(factor, seed)] = bucket[-1].mdi

    ordered = sorted(set(int(f) for f in factors))
    lo, hi = ordered[0], ordered[-1]
    increased = sum(1 for s in seeds if late[(hi, s)] > late[(lo, s)])
    monotone = sum(
        1
        for s in seeds
        if all(late[(b, s)] >= late[(a, s)] for a, b in zip(ordered, ordered[1:]))
    )
    summary = {
        "factors": ordered,
        "seeds": len(seeds),
        "late_mdi_increased": increased,
        "fraction_late_mdi_increased": increased / len(seeds),
        "late_mdi_monotone": monotone,
        "fraction_late_mdi_monotone": monotone / len(seeds),
    }
    return SweepReport(
        kind="replication",
        params=[int(f) for f in factors],
        seeds=seeds,
        rows=rows,
        summary=summary,
        traces=traces,
    )


def prune_composed(
    composed: ComposedInput, scores: ImportanceScores, rate: float
) -> tuple[ComposedInput, Any]:
    """Composed input restricted to the top-scoring non-text tokens."""
    decision = prune_topk(scores, rate)
    keep_positions = np.ones(len(composed), dtype=bool)
    nontext_positions = composed.role_map.positions(TokenRole.NONTEXT)
    dropped = np.setdiff1d(np.arange(len(nontext_positions)), np.array(decision.kept))
    keep_positions[nontext_positions[dropped]] = False
    pruned = ComposedInput(
        embeddings=composed.embeddings[keep_positions],
        role_map=apply_prune(composed.role_map, decision),
        prototypes=composed.prototypes,
        text_ids=composed.text_ids,
    )
    return pruned, decision


def run_prune_sweep(
    config: ToyConfig,
    rates: Sequence[float],
    seeds: Optional[Sequence[int]] = None,
    keep_traces: bool = False,
) -> SweepReport:
    """Generate and analyze traces across token-reduction rates.

    Per seed, non-text importance scores come from the pooled-token
    encoder; each rate keeps the top-scoring tokens, the input is rebuilt,
    and a fresh trace is generated. The summary reports in how many seeds
    the late-bucket dominance index moved closer to 1 at the largest rate
    compared with the smallest.
    """
    if len(rates) == 0:
        raise ValidationError("at least one reduction rate is required")
    for rate in rates:
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"reduction rates must be in [0, 1), got {rate}")
    if seeds is None:
        seeds = [config.seed]
    seeds = [int(s) for s in seeds]

    results: dict[tuple[float, int], list[SweepRow]] = {}
    traces: dict[tuple[float, int], AttentionTrace] = {}
    late: dict[tuple[float, int], float] = {}
    for seed in seeds:
        cfg = replace(config, seed=seed)
        model = build_model(cfg)
        composed = compose_input(cfg, model)
        scores = encode_cls_scores(model, composed)
        for rate in rates:
            pruned, _ = prune_composed(composed, scores, rate)
            trace = generate_with_trace(model, pruned)
            if keep_traces:
                traces[(rate, seed)] = trace
            bucket = _bucket_rows("prune", rate, seed, trace)
            results[(rate, seed)] = bucket
            late[(rate, seed)] = bucket[-1].mdi

    rows = [row for rate in rates for seed in seeds for row in results[(rate, seed)]]
    ordered = sorted(set(float(r) for r in rates))
    lo, hi = ordered[0], ordered[-1]
    rebalanced = sum(
        1 for s in seeds if abs(late[(hi, s)] - 1.0) < abs(late[(lo, s)] - 1.0)
    )
    summary = {
        "rates": ordered,
        "seeds": len(seeds),
        "late_mdi_rebalanced": rebalanced,
        "fraction_late_mdi_rebalanced": rebalanced / len(seeds),
    }
    return SweepReport(
        kind="prune",
        params=[float(r) for r in rates],
        seeds=seeds,
        rows=rows,
        summary=summary,
        traces=traces,
    )
