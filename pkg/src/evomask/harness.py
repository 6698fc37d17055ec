"""Run orchestration: config parsing, attack execution, output rendering.

A run is described by one JSON document (paths resolved relative to the
config file):

    {
      "images": ["scene.png"],             # one image, or an ordered frame sequence
      "detectors": [{"kind": "synthetic"}],# repeatable for ensembles; see below
      "region": "right-half",              # "all" | "right-half" | "left-half"
                                           # | {"rectangles": [[i0, j0, i1, j1], ...]}
      "ga": {"iterations": 100, "rng_seed": 1, ...},
      "dist": {"epsilon": 5.0},
      "out_dir": "out",
      "workers": 1
    }

Detector specs:

    {"kind": "synthetic", "theta": 200, "alpha": 1.5, "m0": 96, "min_area": 9}
    {"kind": "command", "argv": ["detbridge", "serve", ...], "timeout": 30}
    {"kind": "tcp", "host": "127.0.0.1", "port": 4242, "timeout": 30}

Outputs under out_dir: ``pareto.csv`` (generation, individual_id,
intensity, degrad, dist; dist stored un-negated), ``masks/gen<G>_ind<I>.bfm``
and ``images/gen<G>_ind<I>.png`` for each front's per-objective extremes,
and ``run.json`` with the resolved config, seed and timings.  CSV and BFM
outputs are byte-reproducible for a fixed config and seed.
"""

from __future__ import annotations

import csv
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    RegionViolationError,
    apply_mask,
    full_region,
    left_half_region,
    make_image,
    rect_region,
    region_satisfied,
    right_half_region,
)
from .detectors import (
    CONCURRENCY_SAFE,
    DetectorConnection,
    ExternalDetector,
    SyntheticDetector,
    SyntheticDetectorConfig,
)
from .formats import read_png, write_bfm, write_png
from .nsga2 import EvolutionAborted, GaConfig, ParetoArchive, evolve
from .objectives import (
    DistParams,
    ObjectiveVector,
    degrad_between,
    distance_field,
    obj_intensity,
    weighted_distance,
)


@dataclass
class RunConfig:
    images: list[str]
    detector_specs: list[dict] = field(default_factory=lambda: [{"kind": "synthetic"}])
    region_spec: object = "all"
    ga: GaConfig = field(default_factory=GaConfig)
    dist: DistParams = field(default_factory=DistParams)
    out_dir: str = "out"
    workers: int = 1

    def resolved(self) -> dict:
        return {
            "images": list(self.images),
            "detectors": [dict(spec) for spec in self.detector_specs],
            "region": self.region_spec,
            "ga": asdict(self.ga),
            "dist": asdict(self.dist),
            "out_dir": self.out_dir,
            "workers": self.workers,
        }


def parse_config(doc: dict, base_dir=".") -> RunConfig:
    """Build a RunConfig from a parsed JSON document."""
    base = Path(base_dir)
    images = doc.get("images", [])
    if isinstance(images, str):
        images = [images]
    images = [str(base / p) if not Path(p).is_absolute() else p for p in images]
    if not images:
        raise ValueError("config needs at least one image")
    detector_specs = doc.get("detectors", [{"kind": "synthetic"}])
    if not detector_specs:
        raise ValueError("config needs at least one detector")
    if len(images) > 1 and len(detector_specs) > 1:
        raise ValueError("frame sequences support a single detector, not an ensemble")
    try:
        ga = GaConfig(**doc.get("ga", {}))
    except TypeError as exc:
        raise ValueError(f"bad ga config: {exc}") from exc
    try:
        dist = DistParams(**doc.get("dist", {}))
    except TypeError as exc:
        raise ValueError(f"bad dist config: {exc}") from exc
    workers = int(doc.get("workers", 1))
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    return RunConfig(
        images=images,
        detector_specs=[dict(s) for s in detector_specs],
        region_spec=doc.get("region", "all"),
        ga=ga,
        dist=dist,
        out_dir=str(doc.get("out_dir", "out")),
        workers=workers,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return parse_config(doc, base_dir=path.parent)


def build_region(spec, height: int, width: int) -> np.ndarray:
    if spec == "all":
        return full_region(height, width)
    if spec == "right-half":
        return right_half_region(height, width)
    if spec == "left-half":
        return left_half_region(height, width)
    if isinstance(spec, dict) and "rectangles" in spec:
        return rect_region(height, width, spec["rectangles"])
    raise ValueError(f"unknown region spec: {spec!r}")


def build_detector(spec: dict):
    kind = spec.get("kind")
    try:
        if kind == "synthetic":
            cfg_fields = {k: v for k, v in spec.items() if k != "kind"}
            return SyntheticDetector(SyntheticDetectorConfig(**cfg_fields))
        if kind == "command":
            conn = DetectorConnection.open_command(
                spec["argv"], timeout=float(spec.get("timeout", 30.0))
            )
            return ExternalDetector(conn)
        if kind == "tcp":
            conn = DetectorConnection.open_tcp(
                spec["host"], int(spec["port"]), timeout=float(spec.get("timeout", 30.0))
            )
            return ExternalDetector(conn)
    except (TypeError, KeyError) as exc:
        raise ValueError(f"bad detector spec {spec!r}: {exc}") from exc
    raise ValueError(f"unknown detector kind: {kind!r}")


def make_problem(frames, detectors, region: np.ndarray, params: DistParams):
    """Evaluation closure for the search loop.

    Baseline predictions and distance fields depend only on the unperturbed
    frames, so they are computed once up front; per-mask work is one
    detector call per (frame, detector) pair plus the weighting sums.  The
    arithmetic matches objectives.evaluate / evaluate_temporal exactly.
    """
    pairs = []
    for frame_idx, frame in enumerate(frames):
        for det_idx, detector in enumerate(detectors):
            baseline = detector.detect(frame)
            if not any(b.is_valid for b in baseline):
                print(
                    f"warning: detector {det_idx} finds no valid objects in frame "
                    f"{frame_idx}; its degradation objective is fixed at 1.0",
                    file=sys.stderr,
                )
            fieldmap = distance_field(frame.shape[:2], baseline, params)
            pairs.append((frame, detector, baseline, fieldmap))

    def problem(mask: np.ndarray) -> ObjectiveVector:
        if not region_satisfied(mask, region):
            raise RegionViolationError("mask is nonzero outside the allowed region")
        intensity = obj_intensity(mask)
        degrads = []
        dists = []
        for frame, detector, baseline, fieldmap in pairs:
            perturbed = detector.detect(apply_mask(frame, mask))
            degrads.append(degrad_between(baseline, perturbed))
            dists.append(weighted_distance(fieldmap, mask))
        return ObjectiveVector(
            intensity=intensity,
            degrad=min(1.0, sum(degrads) / len(degrads)),
            neg_dist=-sum(dists) / len(dists),
        )

    return problem


def front_extremes(members) -> list[int]:
    """Indices of the per-objective best individuals in a front, deduplicated
    in objective order (intensity, degrad, distance)."""
    picks = []
    for key in (
        lambda ind: ind.objectives.intensity,
        lambda ind: ind.objectives.degrad,
        lambda ind: ind.objectives.neg_dist,
    ):
        best = min(range(len(members)), key=lambda i: key(members[i]))
        if best not in picks:
            picks.append(best)
    return picks


def write_archive(out_dir, archive: ParetoArchive, base_frame: np.ndarray) -> None:
    """Flush pareto.csv plus the capped per-generation mask/image renders."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "pareto.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["generation", "individual_id", "intensity", "degrad", "dist"])
        for archived in archive.fronts:
            for idx, ind in enumerate(archived.members):
                obj = ind.objectives
                writer.writerow(
                    [
                        archived.generation,
                        idx,
                        repr(obj.intensity),
                        repr(obj.degrad),
                        repr(obj.dist),
                    ]
                )
    for archived in archive.fronts:
        for idx in front_extremes(archived.members):
            ind = archived.members[idx]
            stem = f"gen{archived.generation}_ind{idx}"
            write_bfm(out / "masks" / f"{stem}.bfm", ind.genome)
            write_png(out / "images" / f"{stem}.png", apply_mask(base_frame, ind.genome))


def run_attack(cfg: RunConfig):
    """Execute a configured attack run; returns (archive, out_dir).

    On a detector failure mid-run the partial archive is flushed before the
    error propagates.
    """
    started = time.time()
    frames = [read_png(p) for p in cfg.images]
    shape = frames[0].shape[:2]
    for frame in frames[1:]:
        if frame.shape[:2] != shape:
            raise ValueError("all frames must share one shape")
    region = build_region(cfg.region_spec, *shape)
    detectors = []
    try:
        for spec in cfg.detector_specs:
            detectors.append(build_detector(spec))
        workers = cfg.workers
        if any(getattr(d, "concurrency", None) != CONCURRENCY_SAFE for d in detectors):
            workers = 1
        problem = make_problem(frames, detectors, region, cfg.dist)
        try:
            archive = evolve(problem, shape, region, cfg.ga, workers=workers)
        except EvolutionAborted as aborted:
            if aborted.archive.fronts:
                write_archive(cfg.out_dir, aborted.archive, frames[0])
            raise
        write_archive(cfg.out_dir, archive, frames[0])
        run_info = {
            "config": cfg.resolved(),
            "seed": cfg.ga.rng_seed,
            "workers": workers,
            "generations_archived": len(archive.fronts),
            "timings": {"started_unix": started, "elapsed_s": time.time() - started},
        }
        with open(Path(cfg.out_dir) / "run.json", "w", encoding="utf-8") as fh:
            json.dump(run_info, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return archive, Path(cfg.out_dir)
    finally:
        for detector in detectors:
            close = getattr(detector, "close", None)
            if close is not None:
                close()


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

_PALETTE = [
    (255, 64, 64),
    (64, 255, 64),
    (96, 128, 255),
    (255, 255, 0),
    (255, 0, 255),
    (0, 255, 255),
]


def _draw_box(canvas: np.ndarray, box, j_offset: int = 0) -> None:
    height, width = canvas.shape[:2]
    i_lo, i_hi, j_lo, j_hi = box.bounds()
    i0 = max(0, int(math.ceil(i_lo)))
    i1 = min(height - 1, int(math.floor(i_hi)))
    j0 = max(0, int(math.ceil(j_lo)) + j_offset)
    j1 = min(width - 1, int(math.floor(j_hi)) + j_offset)
    if i0 > i1 or j0 > j1:
        return
    color = _PALETTE[(box.cl - 1) % len(_PALETTE)]
    canvas[i0, j0 : j1 + 1] = color
    canvas[i1, j0 : j1 + 1] = color
    canvas[i0 : i1 + 1, j0] = color
    canvas[i0 : i1 + 1, j1] = color


def render_individual(img: np.ndarray, mask: np.ndarray, detector):
    """(perturbed image, side-by-side comparison with detections drawn)."""
    perturbed = apply_mask(img, mask)
    height, width = img.shape[:2]
    gap = 4
    canvas = np.full((height, 2 * width + gap, 3), 32, dtype=np.uint8)
    canvas[:, :width] = img
    canvas[:, width + gap :] = perturbed
    for box in detector.detect(img):
        if box.is_valid:
            _draw_box(canvas, box, j_offset=0)
    for box in detector.detect(perturbed):
        if box.is_valid:
            _draw_box(canvas, box, j_offset=width + gap)
    return perturbed, make_image(canvas)


def evaluate_once(img: np.ndarray, mask: np.ndarray, detectors, region, params) -> ObjectiveVector:
    """One-off evaluation used by the CLI's eval subcommand."""
    problem = make_problem([img], detectors, region, params)
    return problem(mask)


# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------

BUTTERFLY_SHAPE = (128, 64)


def butterfly_scene() -> np.ndarray:
    """The canonical attackable test scene, 128x64.

    A uniform gray-95 background carries one 16x16 class-1 block (peak
    channel 201) in the left half plus 28 isolated white pixels (too small
    to ever become boxes) that pin the global mean so the effective
    threshold sits at 200.9765625.  Raising the applied-image channel sum
    by more than 384, anywhere, pushes the threshold past 201 and the left
    block vanishes: a single saturated right-half pixel is enough.
    """
    height, width = BUTTERFLY_SHAPE
    img = np.full((height, width, 3), 95, dtype=np.uint8)
    img[56:72, 8:24, 0] = 201
    for k in range(28):
        img[4 + 4 * k, 2] = (255, 255, 255)
    return make_image(img)


def butterfly_config(scene_path: str, out_dir: str = "out") -> dict:
    return {
        "images": [scene_path],
        "detectors": [{"kind": "synthetic"}],
        "region": "right-half",
        "ga": {
            "iterations": 100,
            "population_size": 101,
            "p_c": 0.5,
            "p_m": 0.45,
            "window_fraction": 0.01,
            "rng_seed": 1,
        },
        "dist": {"epsilon": 5.0},
        "out_dir": out_dir,
    }


def write_fixture(name: str, out_dir) -> dict:
    """Emit a named deterministic test scene plus a ready-to-run config."""
    if name != "canonical-butterfly":
        raise ValueError(f"unknown fixture: {name!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene_path = out / "scene.png"
    write_png(scene_path, butterfly_scene())
    config = butterfly_config("scene.png", out_dir=str(out / "out"))
    config_path = out / "attack.json"
    with open(config_path, "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2)
        fh.write("\n")
    return {"scene": str(scene_path), "config": str(config_path)}
