"""mmtrace-export: capture a model's attention into an MMTR trace file."""

from __future__ import annotations

import argparse
import sys

from .capture import CaptureRequest, capture_trace
from .errors import ExportError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmtrace-export",
        description="Capture per-layer generation attention from a multimodal "
        "model runtime and write an MMTR trace file.",
    )
    parser.add_argument("--model", required=True,
                        help="model id; mock:<name> uses the built-in runtime")
    parser.add_argument("--prompt", required=True, help="text prompt")
    parser.add_argument("--media", help="path to the media payload (image etc.)")
    parser.add_argument("--replicate", type=int, default=1,
                        help="repeat the media token block this many times")
    parser.add_argument("--steps", type=int, default=8,
                        help="maximum generation steps to record")
    parser.add_argument("--avg-heads", action="store_true",
                        help="store head-averaged rows (header heads = 1)")
    parser.add_argument("--out", required=True, help="output .mmtr path")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    request = CaptureRequest(
        model=args.model,
        prompt=args.prompt,
        media=args.media,
        replicate=args.replicate,
        max_steps=args.steps,
        average_heads=args.avg_heads,
    )
    try:
        request.validate()
    except ValueError as exc:
        parser.error(str(exc))
    try:
        path = capture_trace(request, args.out)
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    except ExportError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
