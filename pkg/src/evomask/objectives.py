"""The three attack objectives and their ensemble/temporal aggregation.

All values are kept minimization-oriented: ``intensity`` (L2 size of the
mask) and ``degrad`` (surviving prediction overlap) are minimized directly,
and the perturbation-to-object distance score is stored negated as
``neg_dist`` so the search engine never needs per-objective direction
flags.

Two deliberate choices in the distance score, both load-bearing:

* pixels inside any valid box (dilated by ``epsilon`` on all sides) are
  assigned MINUS the mean center-distance, so perturbation mass inside or
  near a box is penalized rather than rewarded;
* the final sum is divided by the number of PERTURBED pixels, which favors
  a large perturbation on a few distant pixels over many tiny perturbations
  crowded around the object.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    BoundingBox,
    RegionViolationError,
    apply_mask,
    iou,
    region_satisfied,
)


@dataclass(frozen=True)
class DistParams:
    """Parameters of the distance objective; epsilon is the buffer, in
    pixels, by which boxes are dilated before the inside-penalty applies."""

    epsilon: float = 5.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")


@dataclass(frozen=True)
class ObjectiveVector:
    """One individual's objective values, all minimization-oriented."""

    intensity: float
    degrad: float
    neg_dist: float

    def __post_init__(self):
        if self.intensity < 0:
            raise ValueError(f"intensity must be >= 0, got {self.intensity}")
        if not 0.0 <= self.degrad <= 1.0:
            raise ValueError(f"degrad must lie in [0, 1], got {self.degrad}")

    @property
    def dist(self) -> float:
        """The distance score in its natural (maximized) orientation."""
        return -self.neg_dist

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.intensity, self.degrad, self.neg_dist)


def obj_intensity(mask: np.ndarray) -> float:
    """Euclidean norm of the flattened mask."""
    return float(np.linalg.norm(np.asarray(mask, dtype=np.float64)))


def degrad_between(original, perturbed) -> float:
    """Mean best same-class IoU each valid original box retains.

    For every valid box in ``original``, take the maximum IoU over boxes of
    the same class in ``perturbed``, then average over the valid originals.
    1.0 means the prediction survived unchanged; 0.0 means every object
    lost its class or vanished.  With no valid original boxes there is
    nothing to degrade and the result is defined as 1.0.
    """
    valid = [box for box in original if box.is_valid]
    if not valid:
        return 1.0
    total = 0.0
    for box in valid:
        best = 0.0
        for other in perturbed:
            if other.cl == box.cl:
                best = max(best, iou(box, other))
        total += best
    # min() guards the mean against float round-up; each summand is <= 1.
    return min(1.0, total / len(valid))


def obj_degrad(img: np.ndarray, mask: np.ndarray, detector) -> float:
    """Prediction-overlap objective in [0, 1]; lower means more damage."""
    original = detector.detect(img)
    perturbed = detector.detect(apply_mask(img, mask))
    return degrad_between(original, perturbed)


def distance_field(shape: tuple[int, int], boxes, params: DistParams) -> np.ndarray:
    """Per-pixel distance weights used by the distance objective.

    Every pixel starts at the image diagonal sqrt(L^2 + W^2) and is lowered
    to its Euclidean distance to the nearest valid box center.  Pixels
    inside any valid box dilated by epsilon (closed intervals) are then
    overwritten with minus the mean of the field, turning them into a
    penalty.  With no valid boxes the field stays at the diagonal ceiling.
    """
    height, width = shape
    rows = np.arange(height, dtype=np.float64)[:, None]
    cols = np.arange(width, dtype=np.float64)[None, :]
    field = np.full((height, width), math.hypot(height, width), dtype=np.float64)
    valid = [box for box in boxes if box.is_valid]
    for box in valid:
        dist = np.sqrt((box.x - rows) ** 2 + (box.y - cols) ** 2)
        np.minimum(field, dist, out=field)
    inside_penalty = -field.sum() / (height * width)
    for box in valid:
        i_lo, i_hi, j_lo, j_hi = box.bounds()
        inside = (
            (rows >= i_lo - params.epsilon)
            & (rows <= i_hi + params.epsilon)
            & (cols >= j_lo - params.epsilon)
            & (cols <= j_hi + params.epsilon)
        )
        field[inside] = inside_penalty
    return field


def weighted_distance(field: np.ndarray, mask: np.ndarray) -> float:
    """Weight the distance field by per-pixel peak |mask| and normalize by
    the perturbed-pixel count.  An all-zero mask scores a neutral 0."""
    peak = np.abs(np.asarray(mask, dtype=np.int32)).max(axis=2)
    perturbed = int(np.count_nonzero(peak))
    if perturbed == 0:
        return 0.0
    return float((field * peak).sum() / perturbed)


def obj_dist(img: np.ndarray, mask: np.ndarray, detector, params: DistParams) -> float:
    """Distance objective: higher means the perturbation sits further from
    the detected objects."""
    if img.shape[:2] != mask.shape[:2]:
        raise ValueError(f"image/mask shape mismatch: {img.shape} vs {mask.shape}")
    boxes = detector.detect(img)
    field = distance_field(img.shape[:2], boxes, params)
    return weighted_distance(field, mask)


def evaluate(
    img: np.ndarray,
    mask: np.ndarray,
    detectors,
    region: np.ndarray,
    params: DistParams,
) -> ObjectiveVector:
    """Three-objective evaluation against an ensemble of detectors.

    The same mask is applied to every detector, so the intensity term is a
    single L2 value; degrad and the distance score are averaged over the
    ensemble.  The mask must already satisfy the region constraint (the
    search engine enforces it; this re-checks).
    """
    detectors = list(detectors)
    if not detectors:
        raise ValueError("need at least one detector")
    if not region_satisfied(mask, region):
        raise RegionViolationError("mask is nonzero outside the allowed region")
    intensity = obj_intensity(mask)
    degrads = []
    dists = []
    for detector in detectors:
        degrads.append(obj_degrad(img, mask, detector))
        dists.append(obj_dist(img, mask, detector, params))
    degrad = min(1.0, sum(degrads) / len(degrads))
    neg_dist = -sum(dists) / len(dists)
    return ObjectiveVector(intensity=intensity, degrad=degrad, neg_dist=neg_dist)


def evaluate_temporal(
    frames,
    mask: np.ndarray,
    detector,
    region: np.ndarray,
    params: DistParams,
) -> ObjectiveVector:
    """Single shared mask scored across an ordered frame sequence.

    Intensity is computed once on the mask; degrad and the distance score
    are the uniform means over frames, each frame judged against its own
    unperturbed prediction.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("need at least one frame")
    shape = frames[0].shape
    for frame in frames[1:]:
        if frame.shape != shape:
            raise ValueError("all frames must share one shape")
    if not region_satisfied(mask, region):
        raise RegionViolationError("mask is nonzero outside the allowed region")
    intensity = obj_intensity(mask)
    degrads = []
    dists = []
    for frame in frames:
        degrads.append(obj_degrad(frame, mask, detector))
        dists.append(obj_dist(frame, mask, detector, params))
    degrad = min(1.0, sum(degrads) / len(degrads))
    neg_dist = -sum(dists) / len(dists)
    return ObjectiveVector(intensity=intensity, degrad=degrad, neg_dist=neg_dist)
