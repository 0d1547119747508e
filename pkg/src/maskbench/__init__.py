"""maskbench: measurement toolkit for masked-face biometrics."""

__version__ = "0.1.0"

from .detection import average_precision, iou, match_detections, mean_ap, precision, recall
from .embedding import Embedding, calibrate_threshold, embed_blockmean, euclidean
from .errors import DataError, DimensionError, InputError, MaskbenchError, ValidationError
from .imaging import (
    RegionMask,
    apply_region_mask,
    grid_region_of,
    make_hybrid,
    occlude_lower_face,
    rescale_area,
    sample_periocular_mask,
)
from .losses import bce_loss, box_loss, contrastive_loss, grad_check, multitask_loss, smooth_l1
from .raster import BBox, Detection, GroundTruth, Manifest, ManifestEntry, Raster, load_manifest
from .recognition import (
    ConditionMatrix,
    PairTrial,
    accuracy,
    build_condition_matrix,
    degradation_delta,
    identify_top1,
)
from .splits import SplitPlan, split_holdout, split_kfold
