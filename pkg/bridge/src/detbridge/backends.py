"""Detection backends served over the wire protocol.

The echo backend replays a canned box list for every request and exists for
protocol conformance testing.  The model backend adapts a real pretrained
object-detection model: it owns every model-specific concern (input
resizing, score thresholding, label mapping, coordinate conventions) so the
engine only ever sees the protocol's (cl, x, y, l, w) tuples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Engine-side box tuple: (cl, x, y, l, w) with x/l along image rows and
# y/w along image columns; cl 0 means no object and is never emitted here.
Box = tuple


def load_fixture_boxes(path) -> list[Box]:
    """Canned boxes from a JSON fixture: either a bare list of box objects
    or {"name": ..., "boxes": [...]}."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    entries = doc["boxes"] if isinstance(doc, dict) else doc
    boxes = []
    for entry in entries:
        boxes.append(
            (
                int(entry["cl"]),
                float(entry["x"]),
                float(entry["y"]),
                float(entry["l"]),
                float(entry["w"]),
            )
        )
    return boxes


class EchoBackend:
    """Replies with the same canned boxes regardless of the image."""

    def __init__(self, boxes: list[Box]):
        self.boxes = list(boxes)

    def detect(self, image: np.ndarray) -> list[Box]:
        return list(self.boxes)


@dataclass
class ModelSpec:
    """Configuration of the real-model adapter.

    ``class_map`` sends the model's integer labels to engine classes
    (>= 1; unmapped labels are dropped).  ``input_size`` is the square
    side the image is resized to before inference; 0 keeps the original
    resolution.
    """

    weights: str = ""
    input_size: int = 0
    score_threshold: float = 0.5
    class_map: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValueError(f"score_threshold must lie in [0, 1], got {self.score_threshold}")
        if self.input_size < 0:
            raise ValueError(f"input_size must be >= 0, got {self.input_size}")
        normalized = {}
        for key, value in self.class_map.items():
            cls = int(value)
            if cls < 1:
                raise ValueError(f"engine classes start at 1; got {value!r} for label {key!r}")
            normalized[int(key)] = cls
        self.class_map = normalized


def _resize_nearest(image: np.ndarray, size: int) -> np.ndarray:
    height, width = image.shape[:2]
    rows = (np.arange(size) * height // size).clip(0, height - 1)
    cols = (np.arange(size) * width // size).clip(0, width - 1)
    return image[rows][:, cols]


class ModelBackend:
    """Adapter around an inference callable.

    ``infer`` takes an (H, W, 3) uint8 array and returns an iterable of
    raw detections ``(label, score, x_min, y_min, x_max, y_max)`` in the
    usual model convention: x along columns, y along rows, in the
    coordinates of the array it was given.  The backend resizes the input
    when ``input_size`` is set (scaling boxes back to the original frame),
    drops detections under the score threshold or with unmapped labels,
    and converts the survivors to the engine's row-major center/extent
    tuples.
    """

    def __init__(self, spec: ModelSpec, infer=None):
        self.spec = spec
        self.infer = infer if infer is not None else load_torchscript_detector(spec.weights)

    def detect(self, image: np.ndarray) -> list[Box]:
        height, width = image.shape[:2]
        model_input = image
        scale_x = scale_y = 1.0
        if self.spec.input_size:
            model_input = _resize_nearest(image, self.spec.input_size)
            scale_x = width / self.spec.input_size
            scale_y = height / self.spec.input_size
        boxes = []
        for label, score, x_min, y_min, x_max, y_max in self.infer(model_input):
            if score < self.spec.score_threshold:
                continue
            cls = self.spec.class_map.get(int(label))
            if cls is None:
                continue
            x_min, x_max = x_min * scale_x, x_max * scale_x
            y_min, y_max = y_min * scale_y, y_max * scale_y
            boxes.append(
                (
                    cls,
                    (y_min + y_max) / 2,  # row center
                    (x_min + x_max) / 2,  # column center
                    max(0.0, y_max - y_min),
                    max(0.0, x_max - x_min),
                )
            )
        return boxes


def load_torchscript_detector(weights_path: str):
    """Inference callable over a TorchScript detection model.

    The scripted module must map a float [0,1] CHW batch of one image to
    the torchvision detection convention: a dict (or one-element list of
    dicts) with ``boxes`` (N, 4, xyxy), ``labels`` and ``scores``.
    Inference is pinned to eval mode under no_grad, so identical inputs
    give identical outputs.
    """
    try:
        import torch
    except ImportError as exc:
        raise RuntimeError(
            "the model backend needs torch installed; use the echo backend "
            "or provide an inference callable"
        ) from exc
    if not weights_path or not Path(weights_path).exists():
        raise RuntimeError(f"model weights not found: {weights_path!r}")
    module = torch.jit.load(weights_path, map_location="cpu")
    module.eval()

    def infer(image: np.ndarray):
        with torch.no_grad():
            tensor = torch.from_numpy(image.astype(np.float32) / 255.0).permute(2, 0, 1)
            output = module([tensor])
            if isinstance(output, (list, tuple)):
                output = output[-1]
            if isinstance(output, (list, tuple)):
                output = output[0]
            raw_boxes = output["boxes"].cpu().numpy()
            labels = output["labels"].cpu().numpy()
            scores = output["scores"].cpu().numpy()
        for (x_min, y_min, x_max, y_max), label, score in zip(raw_boxes, labels, scores):
            yield int(label), float(score), float(x_min), float(y_min), float(x_max), float(y_max)

    return infer
