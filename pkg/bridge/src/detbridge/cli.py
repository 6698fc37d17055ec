"""detbridge CLI: serve a detection backend over the wire protocol."""

from __future__ import annotations

import argparse
import json
import sys

from .backends import EchoBackend, ModelBackend, ModelSpec, load_fixture_boxes
from .server import BridgeConfig, serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="detbridge")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("serve", help="answer detect requests over stdio or TCP")
    p.add_argument("--transport", choices=["stdio", "tcp"], default="stdio")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0, help="0 picks an ephemeral port")
    p.add_argument("--backend", choices=["echo", "model"], required=True)
    p.add_argument("--name", default="detbridge")
    p.add_argument("--fixture", help="echo backend: JSON file with the canned boxes")
    p.add_argument("--weights", help="model backend: TorchScript weights path")
    p.add_argument("--input-size", type=int, default=0)
    p.add_argument("--score-threshold", type=float, default=0.5)
    p.add_argument("--class-map", help="model backend: JSON file mapping model labels to classes")
    return parser


def build_backend(args):
    if args.backend == "echo":
        if not args.fixture:
            raise ValueError("--backend echo needs --fixture")
        if args.weights or args.class_map:
            raise ValueError("echo backend takes no model options")
        return EchoBackend(load_fixture_boxes(args.fixture))
    if args.fixture:
        raise ValueError("model backend takes no --fixture")
    class_map = {}
    if args.class_map:
        with open(args.class_map, "r", encoding="utf-8") as fh:
            class_map = json.load(fh)
    spec = ModelSpec(
        weights=args.weights or "",
        input_size=args.input_size,
        score_threshold=args.score_threshold,
        class_map=class_map,
    )
    return ModelBackend(spec)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        backend = build_backend(args)
        serve(
            BridgeConfig(
                backend=backend,
                name=args.name,
                transport=args.transport,
                host=args.host,
                port=args.port,
            )
        )
    except KeyboardInterrupt:
        return 130
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
