"""scikit-learn style estimator facades over the functional API.

Kept apart from the core modules so the command-line tool does not pay for
importing scikit-learn.
"""

import dataclasses

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .backbone import NetWeights
from .errors import EstimationError
from .geometry import (
    DEFAULT_H_ITERS,
    DEFAULT_H_THRESHOLD,
    DEFAULT_POSE_ITERS,
    DEFAULT_POSE_THRESHOLD,
    estimate_pose,
    project_points,
    ransac_homography,
)
from .keypoints import DEFAULT_NMS_RADIUS, DEFAULT_NMS_THRESHOLD, DEFAULT_TOP_K
from .lifting import DEFAULT_LR, LiftWeights, lift, train_lift
from .losses import DEFAULT_TEMPERATURE
from .pipeline import PipelineConfig, extract, lifted_descriptors, match_pair


class GeometryLifter(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` trains on lift batches, ``transform`` lifts a bundle."""

    def __init__(self, lr=DEFAULT_LR, n_iter=200, seed=0, temperature=DEFAULT_TEMPERATURE):
        self.lr = lr
        self.n_iter = n_iter
        self.seed = seed
        self.temperature = temperature

    def fit(self, batches, y=None):
        self.weights_, self.loss_trace_ = train_lift(
            list(batches), lr=self.lr, iterations=self.n_iter, seed=self.seed, temperature=self.temperature
        )
        return self

    def transform(self, bundle):
        check_is_fitted(self, "weights_")
        return lift(bundle, self.weights_)


class RansacHomography(BaseEstimator):
    def __init__(self, iters=DEFAULT_H_ITERS, inlier_px=DEFAULT_H_THRESHOLD, seed=0, min_inliers=8):
        self.iters = iters
        self.inlier_px = inlier_px
        self.seed = seed
        self.min_inliers = min_inliers

    def fit(self, ptsA, ptsB):
        H, mask = ransac_homography(ptsA, ptsB, self.iters, self.inlier_px, self.seed, self.min_inliers)
        if H is None:
            raise EstimationError("RANSAC found no homography with enough inliers")
        self.H_, self.inlier_mask_ = H, mask
        return self

    def predict(self, pts):
        check_is_fitted(self, "H_")
        return project_points(self.H_, pts)


class EssentialPose(BaseEstimator):
    def __init__(self, iters=DEFAULT_POSE_ITERS, thresh_px=DEFAULT_POSE_THRESHOLD, seed=0):
        self.iters = iters
        self.thresh_px = thresh_px
        self.seed = seed

    def fit(self, ptsA, ptsB, KA, KB):
        pose = estimate_pose(ptsA, ptsB, KA, KB, self.iters, self.thresh_px, self.seed)
        self.R_, self.t_, self.inlier_mask_, self.degenerate_ = pose.R, pose.t, pose.inliers, pose.degenerate
        return self


class LiftFeat(TransformerMixin, BaseEstimator):
    """Estimator facade over the full pipeline.

    ``fit`` trains the lifting module on ``LiftBatch`` objects; ``transform``
    maps an image to a ``FeatureBundle`` whose descriptors are lifted when
    ``use_lift`` is set.
    """

    def __init__(self, top_k=DEFAULT_TOP_K, nms_radius=DEFAULT_NMS_RADIUS, nms_threshold=DEFAULT_NMS_THRESHOLD,
                 min_sim=-1.0, use_lift=True, temperature=DEFAULT_TEMPERATURE, lr=1e-4, n_iter=200, seed=0,
                 net_weights=None, lift_weights=None):
        self.top_k = top_k
        self.nms_radius = nms_radius
        self.nms_threshold = nms_threshold
        self.min_sim = min_sim
        self.use_lift = use_lift
        self.temperature = temperature
        self.lr = lr
        self.n_iter = n_iter
        self.seed = seed
        self.net_weights = net_weights
        self.lift_weights = lift_weights

    def _config(self):
        return PipelineConfig(top_k=self.top_k, nms_radius=self.nms_radius, nms_threshold=self.nms_threshold,
                              min_sim=self.min_sim, use_lift=self.use_lift, temperature=self.temperature,
                              seed=self.seed)

    def _net(self):
        return self.net_weights if self.net_weights is not None else NetWeights.random(self.seed)

    def fit(self, batches=None, y=None):
        self.net_weights_ = self._net()
        if batches is not None:
            self.lift_weights_, self.loss_trace_ = train_lift(
                list(batches), lr=self.lr, iterations=self.n_iter, seed=self.seed,
                temperature=self.temperature, init=self.lift_weights)
        else:
            self.lift_weights_ = self.lift_weights if self.lift_weights is not None else LiftWeights.random(self.seed)
            self.loss_trace_ = []
        return self

    def transform(self, image):
        check_is_fitted(self, "net_weights_")
        cfg = self._config()
        bundle = extract(image, self.net_weights_, cfg).bundle
        if cfg.use_lift and len(bundle):
            bundle = dataclasses.replace(bundle, descriptors=lifted_descriptors(bundle, self.lift_weights_, cfg))
        return bundle

    def match(self, imageA, imageB, H_gt=None):
        check_is_fitted(self, "net_weights_")
        return match_pair(imageA, imageB, self.net_weights_, self.lift_weights_, self._config(), H_gt)
