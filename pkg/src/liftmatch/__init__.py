"""liftmatch: local feature matching with geometry-aware descriptor lifting."""

from .backbone import NetWeights, encode, fuse, pad_to_32
from .errors import (
    DimensionError,
    EstimationError,
    FormatError,
    LiftMatchError,
    ParameterError,
    TrainingError,
    ValidationError,
)
from .geometry import MatchSet, RelativePose, estimate_pose, homography_dlt, mha, mnn_match, pose_auc, ransac_homography
from .heads import descriptor_at, keypoint_head, normal_head, scores_from_logits
from .keypoints import FeatureBundle, gather_features, nms_topk
from .lifting import LiftWeights, lift, positional_encode, train_lift
from .normals import depth_gradients, normals_from_depth
from .pipeline import PipelineConfig, extract, match_pair

__version__ = "0.1.0"

_ESTIMATORS = ("EssentialPose", "GeometryLifter", "LiftFeat", "RansacHomography")

__all__ = [
    "DimensionError", "EstimationError", "FeatureBundle", "FormatError", "LiftMatchError", "LiftWeights",
    "MatchSet", "NetWeights", "ParameterError", "PipelineConfig", "RelativePose", "TrainingError",
    "ValidationError", "depth_gradients", "descriptor_at", "encode", "estimate_pose", "extract", "fuse",
    "gather_features", "homography_dlt", "keypoint_head", "lift", "match_pair", "mha", "mnn_match", "nms_topk",
    "normal_head", "normals_from_depth", "pad_to_32", "pose_auc", "positional_encode", "ransac_homography",
    "scores_from_logits", "train_lift", *_ESTIMATORS,
]


def __getattr__(name):
    # estimators pull in scikit-learn, which is slow to import; load on demand
    if name in _ESTIMATORS:
        from . import estimators

        return getattr(estimators, name)
    raise AttributeError(f"module 'liftmatch' has no attribute {name!r}")
