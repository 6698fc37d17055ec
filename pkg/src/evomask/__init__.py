"""evomask: multi-objective evolutionary search for small, far-from-object
image perturbations that degrade object detectors."""

from .core import (
    NO_OBJECT,
    BoundingBox,
    RegionViolationError,
    ShapeMismatchError,
    apply_mask,
    full_region,
    iou,
    left_half_region,
    make_image,
    make_mask,
    make_region,
    project_mask,
    rect_region,
    region_satisfied,
    right_half_region,
    zero_mask,
)
from .detectors import (
    DetectorConnection,
    DetectorError,
    ExternalDetector,
    SyntheticDetector,
    SyntheticDetectorConfig,
    external_detect,
    synthetic_detect,
)
from .formats import read_bfm, read_png, write_bfm, write_png
from .nsga2 import (
    EvolutionAborted,
    GaConfig,
    Individual,
    ParetoArchive,
    binary_tournament,
    crowding_distance,
    dominates,
    evolve,
    fast_nondominated_sort,
    init_population,
    mutate,
    one_point_crossover,
)
from .objectives import (
    DistParams,
    ObjectiveVector,
    evaluate,
    evaluate_temporal,
    obj_degrad,
    obj_dist,
    obj_intensity,
)

__version__ = "0.1.0"
