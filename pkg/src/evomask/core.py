"""Domain types and geometry primitives for mask-based detector attacks.

Conventions used throughout the package:

* an image is an ``(L, W, 3)`` uint8 array of RGB values,
* a filter mask is an ``(L, W, 3)`` int16 array of signed per-channel
  offsets in ``[-255, 255]``,
* a region mask is an ``(L, W)`` bool array; True marks pixels the search
  is allowed to perturb,
* the first array axis (rows, length L) carries box coordinates ``x`` and
  ``l``; the second axis (columns, length W) carries ``y`` and ``w``.

Arrays returned by the constructors below are read-only, so images, masks
and regions behave as immutable values and can be shared freely between
concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Class label reserved for "this prediction contains no object".
NO_OBJECT = 0

MASK_MIN = -255
MASK_MAX = 255


class ShapeMismatchError(ValueError):
    """Two arrays that must share a shape do not."""


class RegionViolationError(ValueError):
    """A filter mask carries nonzero values outside the allowed region."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def make_image(values) -> np.ndarray:
    """Validate and return a read-only (L, W, 3) uint8 image array."""
    arr = np.asarray(values)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"image must have shape (L, W, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("image must be at least 1x1")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"image values must be integers, got dtype {arr.dtype}")
    if arr.min(initial=0) < 0 or arr.max(initial=0) > 255:
        raise ValueError("image values must lie in [0, 255]")
    return _freeze(arr.astype(np.uint8))


def make_mask(values) -> np.ndarray:
    """Validate and return a read-only (L, W, 3) int16 filter mask."""
    arr = np.asarray(values)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"mask must have shape (L, W, 3), got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"mask values must be integers, got dtype {arr.dtype}")
    if arr.min(initial=0) < MASK_MIN or arr.max(initial=0) > MASK_MAX:
        raise ValueError(f"mask values must lie in [{MASK_MIN}, {MASK_MAX}]")
    return _freeze(arr.astype(np.int16))


def zero_mask(height: int, width: int) -> np.ndarray:
    return _freeze(np.zeros((height, width, 3), dtype=np.int16))


def make_region(allowed) -> np.ndarray:
    """Validate and return a read-only (L, W) bool region mask."""
    arr = np.asarray(allowed)
    if arr.ndim != 2:
        raise ValueError(f"region must have shape (L, W), got {arr.shape}")
    if arr.dtype != np.bool_:
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError(f"region values must be boolean, got dtype {arr.dtype}")
        arr = arr.astype(bool)
    return _freeze(arr.copy())


def full_region(height: int, width: int) -> np.ndarray:
    return _freeze(np.ones((height, width), dtype=bool))


def right_half_region(height: int, width: int) -> np.ndarray:
    """Allow columns j >= W // 2; for odd W the middle column is allowed."""
    region = np.zeros((height, width), dtype=bool)
    region[:, width // 2 :] = True
    return _freeze(region)


def left_half_region(height: int, width: int) -> np.ndarray:
    """Mirror of right_half_region: the middle column is allowed for odd W."""
    region = np.zeros((height, width), dtype=bool)
    region[:, : (width + 1) // 2] = True
    return _freeze(region)


def rect_region(height: int, width: int, rects) -> np.ndarray:
    """Region allowing the union of inclusive [i0, i1] x [j0, j1] rectangles."""
    region = np.zeros((height, width), dtype=bool)
    for rect in rects:
        i0, j0, i1, j1 = (int(v) for v in rect)
        if not (0 <= i0 <= i1 < height and 0 <= j0 <= j1 < width):
            raise ValueError(f"rectangle {rect!r} outside {height}x{width} image bounds")
        region[i0 : i1 + 1, j0 : j1 + 1] = True
    return _freeze(region)


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape[:2] != b.shape[:2]:
        raise ShapeMismatchError(f"{what}: {a.shape} vs {b.shape}")


def apply_mask(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Add a filter mask to an image, saturating each channel at [0, 255]."""
    _check_same_shape(img, mask, "image/mask shape mismatch")
    out = img.astype(np.int32) + mask.astype(np.int32)
    np.clip(out, 0, 255, out=out)
    return _freeze(out.astype(np.uint8))


def project_mask(mask: np.ndarray, region: np.ndarray) -> np.ndarray:
    """Zero out every mask pixel whose region entry is False."""
    _check_same_shape(mask, region, "mask/region shape mismatch")
    out = mask.copy()
    out[~region] = 0
    return _freeze(out)


def region_satisfied(mask: np.ndarray, region: np.ndarray) -> bool:
    """True iff the mask is zero on every disallowed pixel."""
    _check_same_shape(mask, region, "mask/region shape mismatch")
    return not np.any(mask[~region])


@dataclass(frozen=True)
class BoundingBox:
    """One detector prediction.

    ``cl`` is the class label; 0 (NO_OBJECT) marks a prediction that holds
    no object.  ``x``/``l`` are the center and extent along the first image
    axis (rows), ``y``/``w`` along the second (columns).  The box covers
    [x - l/2, x + l/2] x [y - w/2, y + w/2].
    """

    cl: int
    x: float
    y: float
    l: float
    w: float

    def __post_init__(self):
        if self.l < 0 or self.w < 0:
            raise ValueError(f"box extents must be nonnegative, got l={self.l} w={self.w}")

    @property
    def is_valid(self) -> bool:
        return self.cl != NO_OBJECT

    @property
    def area(self) -> float:
        return self.l * self.w

    def bounds(self) -> tuple[float, float, float, float]:
        """(i_lo, i_hi, j_lo, j_hi) edges of the covered rectangle."""
        return (
            self.x - self.l / 2,
            self.x + self.l / 2,
            self.y - self.w / 2,
            self.y + self.w / 2,
        )


# A detection set is a plain ordered list of BoundingBox; helper alias for
# signatures that want to say so.
DetectionSet = list


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Jaccard index of two axis-aligned boxes, in [0, 1].

    Boxes with zero area give 0 by convention (avoids 0/0 for degenerate
    pairs).
    """
    area_a = a.l * a.w
    area_b = b.l * b.w
    if area_a == 0.0 or area_b == 0.0:
        return 0.0
    ai0, ai1, aj0, aj1 = a.bounds()
    bi0, bi1, bj0, bj1 = b.bounds()
    inter_i = min(ai1, bi1) - max(ai0, bi0)
    inter_j = min(aj1, bj1) - max(aj0, bj0)
    if inter_i <= 0.0 or inter_j <= 0.0:
        return 0.0
    inter = inter_i * inter_j
    union = area_a + area_b - inter
    return inter / union
