"""End-to-end extraction and matching, plus the ``LiftFeat`` estimator facade."""

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

from .backbone import encode, fuse, pad_to_32
from .errors import ParameterError
from .geometry import (
    DEFAULT_H_ITERS,
    DEFAULT_H_THRESHOLD,
    DEFAULT_POSE_ITERS,
    DEFAULT_POSE_THRESHOLD,
    corner_error,
    mnn_match,
    ransac_homography,
    transfer_errors,
)
from .heads import keypoint_head, normal_head, scores_from_logits
from .keypoints import (
    DEFAULT_NMS_RADIUS,
    DEFAULT_NMS_THRESHOLD,
    DEFAULT_TOP_K,
    FeatureBundle,
    gather_features,
    nms_topk,
)
from .lifting import lift
from .losses import DEFAULT_TEMPERATURE
from .tensor import as_tensor

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    top_k: int = DEFAULT_TOP_K
    nms_radius: int = DEFAULT_NMS_RADIUS
    nms_threshold: float = DEFAULT_NMS_THRESHOLD
    min_sim: float = -1.0
    use_lift: bool = True
    freeze_normals: bool = False
    temperature: float = DEFAULT_TEMPERATURE
    ransac_iters: int = DEFAULT_H_ITERS
    ransac_px: float = DEFAULT_H_THRESHOLD
    pose_iters: int = DEFAULT_POSE_ITERS
    pose_px: float = DEFAULT_POSE_THRESHOLD
    seed: int = 0

    @classmethod
    def from_mapping(cls, values):
        """Build from string values (config file lines); unknown keys are rejected."""
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in fields:
                raise ParameterError(f"unknown config key {key!r}")
            default = fields[key].default
            if isinstance(default, bool):
                text = str(raw).strip().lower()
                if text not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                    raise ParameterError(f"{key}: expected a boolean, got {raw!r}")
                kwargs[key] = text in ("1", "true", "yes", "on")
            else:
                try:
                    kwargs[key] = type(default)(raw)
                except ValueError:
                    raise ParameterError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
        return cls(**kwargs)

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"


def parse_config_text(text):
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


@dataclass
class Extraction:
    bundle: FeatureBundle
    normal_map: np.ndarray  # H x W x 3
    score_map: np.ndarray  # H x W x 1
    fused: np.ndarray  # padded H/8 x W/8 x 64


def extract(image, weights, cfg=None):
    cfg = cfg or PipelineConfig()
    image = as_tensor(image, dtype=np.float32)
    padded, dims = pad_to_32(image)
    fused = fuse(encode(padded, weights), weights)
    scores = scores_from_logits(keypoint_head(fused, weights), dims)
    normal_map = normal_head(fused, weights, dims)
    pts, vals = nms_topk(scores, cfg.nms_radius, cfg.nms_threshold, cfg.top_k)
    bundle = gather_features(fused, normal_map, pts, vals, dims)
    return Extraction(bundle, normal_map, scores, fused)


def lifted_descriptors(bundle, lift_weights, cfg):
    if len(bundle) == 0:
        return np.zeros((0, 64))
    if cfg.freeze_normals:
        frozen = np.zeros_like(bundle.normals)
        frozen[:, 2] = 1.0
        bundle = dataclasses.replace(bundle, normals=frozen)
    return lift(bundle, lift_weights)


def _keypoint_rows(bundle):
    return [[float(x), float(y), float(s)] for (x, y), s in zip(bundle.keypoints, bundle.scores)]


def _match_rows(ms):
    return [[int(i), int(j), float(s)] for (i, j), s in zip(ms.pairs, ms.similarity)]


def match_pair(imageA, imageB, weights, lift_weights=None, cfg=None, H_gt=None):
    """Extract both images, match raw and (optionally) lifted descriptors, fit a homography.

    The report's ``correct`` mask comes from the ground-truth homography when
    one is given (symmetric transfer error below ``cfg.ransac_px``), otherwise
    from the RANSAC inliers.
    """
    cfg = cfg or PipelineConfig()
    ea, eb = extract(imageA, weights, cfg), extract(imageB, weights, cfg)
    raw = mnn_match(ea.bundle.descriptors, eb.bundle.descriptors, cfg.min_sim, "raw")
    if cfg.use_lift:
        if lift_weights is None:
            raise ParameterError("lifting is enabled but no lift weights were supplied")
        da = lifted_descriptors(ea.bundle, lift_weights, cfg)
        db = lifted_descriptors(eb.bundle, lift_weights, cfg)
        matches = mnn_match(da, db, cfg.min_sim, "lifted")
    else:
        matches = raw
    pa = ea.bundle.keypoints[matches.pairs[:, 0]]
    pb = eb.bundle.keypoints[matches.pairs[:, 1]]
    H, inliers = None, np.zeros(len(matches), dtype=bool)
    if len(matches) >= 4:
        H, inliers = ransac_homography(pa, pb, cfg.ransac_iters, cfg.ransac_px, cfg.seed)
    if H_gt is not None:
        correct = transfer_errors(H_gt, pa, pb) < cfg.ransac_px if len(matches) else inliers
    else:
        correct = inliers
    report = {
        "schema": 1,
        "dims_a": list(ea.bundle.image_dims),
        "dims_b": list(eb.bundle.image_dims),
        "keypoints_a": _keypoint_rows(ea.bundle),
        "keypoints_b": _keypoint_rows(eb.bundle),
        "provenance": matches.provenance,
        "matches": _match_rows(matches),
        "raw_matches": _match_rows(raw),
        "correct": [bool(c) for c in correct],
        "homography": None if H is None else H.tolist(),
        "inliers": [bool(c) for c in inliers],
    }
    if H_gt is not None:
        report["corner_error"] = corner_error(H, H_gt, ea.bundle.image_dims)
    return report
