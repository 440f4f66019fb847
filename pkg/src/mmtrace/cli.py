"""Command-line interface: validate, analyze, simulate, sweep, compare.

Exit codes are stable across subcommands: 0 on success, 1 on domain or
validation failures, 2 on usage or I/O failures. JSON reports embed a run
manifest (command, resolved parameters, input digests, tool version,
timestamp) so a report is reproducible up to its timestamp.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import sys
from dataclasses import asdict, dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .errors import MMTraceError, TraceValidationError, ValidationError
from .metrics import bucket_metrics, trace_report
from .toy import (
    SweepReport,
    ToyConfig,
    build_model,
    compose_input,
    generate_with_trace,
    run_prune_sweep,
    run_replication_sweep,
)
from .trace import AttentionTrace, read_trace, validate_trace, write_trace


@dataclass
class RunManifest:
    """Reproducibility envelope embedded in every JSON report."""

    command: str
    parameters: dict
    inputs: dict[str, str]
    version: str
    timestamp: str

    @classmethod
    def collect(cls, command: str, parameters: dict, inputs: dict[str, bytes]):
        return cls(
            command=command,
            parameters=parameters,
            inputs={
                name: hashlib.sha256(data).hexdigest() for name, data in inputs.items()
            },
            version=__version__,
            timestamp=datetime.now(timezone.utc).isoformat(),
        )


def _read_bytes(path: str) -> bytes:
    return Path(path).read_bytes()


def _load_trace(path: str, validate: bool = True) -> tuple[AttentionTrace, bytes]:
    data = _read_bytes(path)
    return read_trace(io.BytesIO(data), validate=validate), data


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    print(text, end="" if text.endswith("\n") else "\n")


def _f(x: float) -> str:
    return f"{x:.9f}"


def _bucket_table(trace: AttentionTrace) -> str:
    summary = bucket_metrics(trace)
    lines = [
        f"counts: text={summary.counts.n_text} nontext={summary.counts.n_nontext} "
        f"special={summary.n_special}",
        f"{'bucket':<8} {'mdi':>16} {'aei_text':>16} {'aei_nontext':>16} {'a_text':>16}",
    ]
    for name, row in summary.items():
        lines.append(
            f"{name:<8} {_f(row.mdi):>16} {_f(row.aei_text):>16} "
            f"{_f(row.aei_nontext):>16} {_f(row.mass.a_text):>16}"
        )
    return "\n".join(lines) + "\n"


def _bucket_csv(trace: AttentionTrace) -> str:
    summary = bucket_metrics(trace)
    lines = ["bucket,mdi,aei_text,aei_nontext,a_text"]
    for name, row in summary.items():
        lines.append(
            f"{name},{_f(row.mdi)},{_f(row.aei_text)},"
            f"{_f(row.aei_nontext)},{_f(row.mass.a_text)}"
        )
    return "\n".join(lines) + "\n"


def cmd_validate(args) -> int:
    try:
        trace, _ = _load_trace(args.path, validate=False)
    except MMTraceError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    violations = validate_trace(trace)
    for violation in violations:
        print(str(violation))
    return 1 if violations else 0


def cmd_analyze(args) -> int:
    trace, data = _load_trace(args.path)
    if args.format == "json":
        manifest = RunManifest.collect(
            "analyze", {"path": args.path, "format": args.format}, {args.path: data}
        )
        report = {"manifest": asdict(manifest), **trace_report(trace)}
        _emit(json.dumps(report, indent=2) + "\n", args.out)
    elif args.format == "csv":
        _emit(_bucket_csv(trace), args.out)
    else:
        _emit(_bucket_table(trace), args.out)
    return 0


def _toy_config_from_args(args, parser) -> ToyConfig:
    config = ToyConfig(
        layers=args.layers,
        heads=args.heads,
        width=args.width,
        ff_width=args.ff_width,
        vocab_size=args.vocab_size,
        text_len=args.text_len,
        nontext_len=args.nontext_len,
        redundancy=args.redundancy,
        replication=args.replication,
        steps=args.steps,
        noise=args.noise,
        seed=args.seed,
    )
    try:
        config.validate()
    except ValidationError as exc:
        parser.error(str(exc))
    return config


def cmd_simulate(args) -> int:
    config = _toy_config_from_args(args, args.parser)
    model = build_model(config)
    composed = compose_input(config, model)
    trace = generate_with_trace(model, composed)
    out_path = args.out or "trace.mmtr"
    with open(out_path, "wb") as sink:
        write_trace(trace, sink)
    if args.format == "json":
        manifest = RunManifest.collect(
            "simulate", {**_config_dict(config), "out": str(out_path)}, {}
        )
        report = {"manifest": asdict(manifest), **trace_report(trace)}
        print(json.dumps(report, indent=2))
    else:
        print(f"wrote {out_path}")
        print(_bucket_table(trace), end="")
    return 0


def _config_dict(config: ToyConfig) -> dict:
    return {
        "layers": config.layers,
        "heads": config.heads,
        "width": config.width,
        "ff_width": config.ff_width,
        "vocab_size": config.vocab_size,
        "text_len": config.text_len,
        "nontext_len": config.nontext_len,
        "redundancy": config.redundancy,
        "replication": config.replication,
        "steps": config.steps,
        "noise": config.noise,
        "seed": config.seed,
    }


def _parse_number_list(text: str, kind: str, parser) -> list[float]:
    try:
        values = [float(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        parser.error(f"could not parse {kind} list {text!r}")
    if not values:
        parser.error(f"{kind} list is empty")
    return values


def _svg_bar_chart(params: list, values: list[float], xlabel: str, ylabel: str) -> str:
    """Minimal SVG bar chart: one rect per value, labeled linear axes."""
    width, height = 480, 320
    left, right, top, bottom = 70, 20, 30, 50
    plot_w, plot_h = width - left - right, height - top - bottom
    top_value = max(values) if values and max(values) > 0 else 1.0
    scale = plot_h / (top_value * 1.1)
    n = len(values)
    slot = plot_w / max(n, 1)
    bar_w = slot * 0.6

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" '
        'stroke="black"/>',
        f'<line x1="{left}" y1="{height - bottom}" x2="{width - right}" '
        f'y2="{height - bottom}" stroke="black"/>',
        f'<text x="{left + plot_w / 2:.1f}" y="{height - 10}" '
        f'text-anchor="middle">{xlabel}</text>',
        f'<text x="15" y="{top + plot_h / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 15 {top + plot_h / 2:.1f})">{ylabel}</text>',
    ]
    for tick in (0.0, top_value * 0.55, top_value * 1.1):
        y = height - bottom - tick * scale
        parts.append(
            f'<text x="{left - 6}" y="{y:.1f}" text-anchor="end" '
            f'font-size="10">{tick:.3g}</text>'
        )
    for i, (param, value) in enumerate(zip(params, values)):
        x = left + i * slot + (slot - bar_w) / 2
        h = value * scale
        y = height - bottom - h
        parts.append(
            f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w:.1f}" height="{h:.1f}" '
            'fill="steelblue"/>'
        )
        parts.append(
            f'<text x="{x + bar_w / 2:.1f}" y="{height - bottom + 15}" '
            f'text-anchor="middle" font-size="10">{param}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _write_sweep_outputs(report: SweepReport, args, manifest: RunManifest) -> None:
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "sweep.csv").write_text(report.to_csv(), encoding="utf-8")
    payload = {"manifest": asdict(manifest), **report.to_json()}
    (out_dir / "sweep.json").write_text(
        json.dumps(payload, indent=2) + "\n", encoding="utf-8"
    )
    if args.svg:
        late_means = []
        for param in report.params:
            values = [
                row.mdi
                for row in report.rows
                if row.param == param and row.bucket == "late"
            ]
            late_means.append(sum(values) / len(values))
        label = "replication factor" if report.kind == "replication" else "reduction rate"
        svg = _svg_bar_chart(
            [p if isinstance(p, int) else f"{p:g}" for p in report.params],
            late_means,
            label,
            "late-bucket MDI",
        )
        (out_dir / "sweep.svg").write_text(svg, encoding="utf-8")
    if args.emit_traces:
        for (param, seed), trace in report.traces.items():
            name = f"trace_{param:g}_{seed}.mmtr"
            with open(out_dir / name, "wb") as sink:
                write_trace(trace, sink)


def cmd_sweep(args) -> int:
    config = _toy_config_from_args(args, args.parser)
    seeds = list(range(args.seed, args.seed + args.seeds))
    if args.kind == "replication":
        raw = _parse_number_list(args.factors, "factor", args.parser)
        factors = []
        for value in raw:
            if value < 1 or value != int(value):
                args.parser.error(f"replication factors must be integers >= 1: {value}")
            factors.append(int(value))
        report = run_replication_sweep(
            config, factors, seeds, keep_traces=args.emit_traces
        )
        summary = report.summary
        line = (
            f"late-MDI increased from n={summary['factors'][0]} to "
            f"n={summary['factors'][-1]} in {summary['late_mdi_increased']}"
            f"/{summary['seeds']} seeds "
            f"(fraction {summary['fraction_late_mdi_increased']:.2f}); monotone in "
            f"{summary['late_mdi_monotone']}/{summary['seeds']} "
            f"(fraction {summary['fraction_late_mdi_monotone']:.2f})"
        )
        params = {"factors": factors}
    else:
        rates = _parse_number_list(args.rates, "rate", args.parser)
        for rate in rates:
            if not 0.0 <= rate < 1.0:
                args.parser.error(f"reduction rates must be in [0, 1): {rate}")
        report = run_prune_sweep(config, rates, seeds, keep_traces=args.emit_traces)
        summary = report.summary
        line = (
            f"late |MDI-1| shrank from r={summary['rates'][0]:g} to "
            f"r={summary['rates'][-1]:g} in {summary['late_mdi_rebalanced']}"
            f"/{summary['seeds']} seeds "
            f"(fraction {summary['fraction_late_mdi_rebalanced']:.2f})"
        )
        params = {"rates": rates}

    manifest = RunManifest.collect(
        "sweep",
        {**_config_dict(config), **params, "seeds": seeds, "kind": args.kind},
        {},
    )
    _write_sweep_outputs(report, args, manifest)
    print(line)
    return 0


def _compatible_role_maps(a: AttentionTrace, b: AttentionTrace) -> bool:
    # Non-text counts may differ (that is what compression changes); the
    # text block and the special scaffolding must match.
    return (
        a.role_map.n_text == b.role_map.n_text
        and a.role_map.n_special == b.role_map.n_special
    )


def cmd_compare(args) -> int:
    trace_a, data_a = _load_trace(args.path_a)
    trace_b, data_b = _load_trace(args.path_b)
    if not _compatible_role_maps(trace_a, trace_b):
        print(
            "incompatible role maps: "
            f"a has text={trace_a.role_map.n_text} special={trace_a.role_map.n_special}, "
            f"b has text={trace_b.role_map.n_text} special={trace_b.role_map.n_special}",
            file=sys.stderr,
        )
        return 1
    summary_a = bucket_metrics(trace_a)
    summary_b = bucket_metrics(trace_b)

    buckets = {}
    for (name, row_a), (_, row_b) in zip(summary_a.items(), summary_b.items()):
        buckets[name] = {
            "a": {"mdi": row_a.mdi, "aei_text": row_a.aei_text,
                  "aei_nontext": row_a.aei_nontext},
            "b": {"mdi": row_b.mdi, "aei_text": row_b.aei_text,
                  "aei_nontext": row_b.aei_nontext},
            "delta_mdi": row_b.mdi - row_a.mdi,
            "delta_aei_text": row_b.aei_text - row_a.aei_text,
            "abs_deviation_change": abs(row_b.mdi - 1.0) - abs(row_a.mdi - 1.0),
        }

    if args.format == "json":
        manifest = RunManifest.collect(
            "compare",
            {"path_a": args.path_a, "path_b": args.path_b},
            {args.path_a: data_a, args.path_b: data_b},
        )
        report = {
            "manifest": asdict(manifest),
            "counts_a": {
                "text": summary_a.counts.n_text,
                "nontext": summary_a.counts.n_nontext,
                "special": summary_a.n_special,
            },
            "counts_b": {
                "text": summary_b.counts.n_text,
                "nontext": summary_b.counts.n_nontext,
                "special": summary_b.n_special,
            },
            "buckets": buckets,
        }
        _emit(json.dumps(report, indent=2) + "\n", args.out)
    else:
        lines = [
            f"{'bucket':<8} {'mdi_a':>14} {'mdi_b':>14} {'delta_mdi':>14} "
            f"{'|mdi-1| chg':>14} {'aei_text_a':>14} {'aei_text_b':>14}"
        ]
        for name, cell in buckets.items():
            lines.append(
                f"{name:<8} {_f(cell['a']['mdi']):>14} {_f(cell['b']['mdi']):>14} "
                f"{_f(cell['delta_mdi']):>14} {_f(cell['abs_deviation_change']):>14} "
                f"{_f(cell['a']['aei_text']):>14} {_f(cell['b']['aei_text']):>14}"
            )
        _emit("\n".join(lines) + "\n", args.out)
    return 0


def _add_toy_flags(parser: argparse.ArgumentParser) -> None:
    defaults = ToyConfig()
    parser.add_argument("--layers", type=int, default=defaults.layers)
    parser.add_argument("--heads", type=int, default=defaults.heads)
    parser.add_argument("--width", type=int, default=defaults.width)
    parser.add_argument("--ff-width", type=int, default=defaults.ff_width)
    parser.add_argument("--vocab-size", type=int, default=defaults.vocab_size)
    parser.add_argument("--text-len", type=int, default=defaults.text_len)
    parser.add_argument("--nontext-len", type=int, default=defaults.nontext_len)
    parser.add_argument("--redundancy", type=float, default=defaults.redundancy)
    parser.add_argument("--replication", type=int, default=defaults.replication)
    parser.add_argument("--steps", type=int, default=defaults.steps)
    parser.add_argument("--noise", type=float, default=defaults.noise)
    parser.add_argument("--seed", type=int, default=defaults.seed)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmtrace",
        description="Analyze modality dominance in multimodal attention traces.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="check a trace file's invariants")
    p_validate.add_argument("path")
    p_validate.set_defaults(func=cmd_validate)

    p_analyze = sub.add_parser("analyze", help="bucket metrics of one trace")
    p_analyze.add_argument("path")
    p_analyze.add_argument("--format", choices=("table", "json", "csv"),
                           default="table")
    p_analyze.add_argument("--out")
    p_analyze.set_defaults(func=cmd_analyze)

    p_sim = sub.add_parser("simulate", help="generate a toy-model trace and analyze it")
    _add_toy_flags(p_sim)
    p_sim.add_argument("--out", help="output trace path (default trace.mmtr)")
    p_sim.add_argument("--format", choices=("table", "json"), default="table")
    p_sim.set_defaults(func=cmd_simulate)

    p_sweep = sub.add_parser("sweep", help="replication or prune sweep over seeds")
    p_sweep.add_argument("kind", choices=("replication", "prune"))
    _add_toy_flags(p_sweep)
    p_sweep.add_argument("--factors", default="1,5,10",
                         help="replication factors, comma separated")
    p_sweep.add_argument("--rates", default="0,0.75,0.9",
                         help="reduction rates, comma separated")
    p_sweep.add_argument("--seeds", type=int, default=1,
                         help="number of seeds, starting at --seed")
    p_sweep.add_argument("--out", help="output directory (default .)")
    p_sweep.add_argument("--svg", action="store_true",
                         help="also write a late-MDI bar chart")
    p_sweep.add_argument("--emit-traces", action="store_true",
                         help="also write every generated trace")
    p_sweep.set_defaults(func=cmd_sweep)

    p_cmp = sub.add_parser("compare", help="per-bucket deltas between two traces")
    p_cmp.add_argument("path_a")
    p_cmp.add_argument("path_b")
    p_cmp.add_argument("--format", choices=("table", "json"), default="table")
    p_cmp.add_argument("--out")
    p_cmp.set_defaults(func=cmd_compare)

    for sp in (p_validate, p_analyze, p_sim, p_sweep, p_cmp):
        sp.set_defaults(parser=sp)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    except TraceValidationError as exc:
        for violation in exc.violations:
            print(str(violation), file=sys.stderr)
        return 1
    except (MMTraceError, ValueError, IndexError) as exc:
        print(str(exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
