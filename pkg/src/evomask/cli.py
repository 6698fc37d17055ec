"""Command-line interface: attack, eval, render, fixture."""

from __future__ import annotations

import argparse
import sys

from .detectors import DetectorError
from .formats import read_bfm, read_png, write_png
from .harness import (
    build_detector,
    build_region,
    evaluate_once,
    load_config,
    render_individual,
    run_attack,
    write_fixture,
)
from .nsga2 import EvolutionAborted


def _add_attack(sub):
    p = sub.add_parser("attack", help="run a configured search")
    p.add_argument("--config", required=True, help="JSON run config")
    p.add_argument("--seed", type=int, default=None, help="override ga.rng_seed")
    p.add_argument("--out", default=None, help="override out_dir")
    p.add_argument("--workers", type=int, default=None, help="override workers")


def _add_eval(sub):
    p = sub.add_parser("eval", help="evaluate one image/mask pair")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--config", required=True, help="JSON run config (detectors, region, dist)")


def _add_render(sub):
    p = sub.add_parser("render", help="write perturbed + comparison images")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="optional run config for the detector")


def _add_fixture(sub):
    p = sub.add_parser("fixture", help="emit a deterministic test scene")
    p.add_argument("--name", required=True, choices=["canonical-butterfly"])
    p.add_argument("--out", required=True)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="evomask")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_attack(sub)
    _add_eval(sub)
    _add_render(sub)
    _add_fixture(sub)
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except EvolutionAborted as exc:
        print(f"error: {exc} (partial archive flushed)", file=sys.stderr)
        return 2
    except DetectorError as exc:
        print(f"detector error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "attack":
        cfg = load_config(args.config)
        if args.seed is not None:
            from dataclasses import replace

            cfg.ga = replace(cfg.ga, rng_seed=args.seed)
        if args.out is not None:
            cfg.out_dir = args.out
        if args.workers is not None:
            cfg.workers = args.workers
        archive, out_dir = run_attack(cfg)
        best = min(ind.objectives.degrad for ind in archive.final_front())
        print(f"archived {len(archive.fronts)} generations to {out_dir}; final best degrad {best:.6f}")
        return 0

    if args.command == "eval":
        cfg = load_config(args.config)
        img = read_png(args.image)
        mask = read_bfm(args.mask)
        region = build_region(cfg.region_spec, *img.shape[:2])
        detectors = [build_detector(spec) for spec in cfg.detector_specs]
        try:
            result = evaluate_once(img, mask, detectors, region, cfg.dist)
        finally:
            for det in detectors:
                close = getattr(det, "close", None)
                if close is not None:
                    close()
        print(f"intensity={result.intensity:.6f} degrad={result.degrad:.6f} dist={result.dist:.6f}")
        return 0

    if args.command == "render":
        img = read_png(args.image)
        mask = read_bfm(args.mask)
        if args.config is not None:
            cfg = load_config(args.config)
            detector = build_detector(cfg.detector_specs[0])
        else:
            detector = build_detector({"kind": "synthetic"})
        try:
            perturbed, comparison = render_individual(img, mask, detector)
        finally:
            close = getattr(detector, "close", None)
            if close is not None:
                close()
        from pathlib import Path

        out = Path(args.out)
        write_png(out / "perturbed.png", perturbed)
        write_png(out / "comparison.png", comparison)
        print(f"wrote {out / 'perturbed.png'} and {out / 'comparison.png'}")
        return 0

    if args.command == "fixture":
        paths = write_fixture(args.name, args.out)
        print(f"wrote {paths['scene']} and {paths['config']}")
        return 0

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
