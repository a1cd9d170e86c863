"""Score-map NMS, top-K selection, and per-keypoint feature gathering."""

from dataclasses import dataclass

import numpy as np

from .heads import descriptor_at
from .tensor import grid_sample, l2_normalize

DEFAULT_TOP_K = 4096
DEFAULT_NMS_RADIUS = 4
DEFAULT_NMS_THRESHOLD = 0.05


@dataclass
class FeatureBundle:
    """Keypoints (N x 2, x then y), scores (N), unit descriptors (N x 64) and normals (N x 3)."""

    keypoints: np.ndarray
    scores: np.ndarray
    descriptors: np.ndarray
    normals: np.ndarray
    image_dims: tuple  # (H, W)

    def __post_init__(self):
        n = len(self.keypoints)
        if not (len(self.scores) == len(self.descriptors) == len(self.normals) == n):
            raise ValueError("keypoints, scores, descriptors and normals must have equal length")

    def __len__(self):
        return len(self.keypoints)

    def take(self, index):
        index = np.asarray(index)
        return FeatureBundle(
            self.keypoints[index],
            self.scores[index],
            self.descriptors[index],
            self.normals[index],
            self.image_dims,
        )


def nms_topk(scores, radius=DEFAULT_NMS_RADIUS, threshold=DEFAULT_NMS_THRESHOLD, k=DEFAULT_TOP_K):
    """Local maxima of a score map, best first.

    A pixel survives when its score is at least ``threshold``, no earlier
    (row-major) pixel in its ``(2r+1)^2`` window scores >= it, no later pixel
    scores > it, and the window is not flat (some neighbor is strictly lower).
    Returns ``(points, values)`` with points as N x 2 integer-valued (x, y).
    """
    if radius < 1 or k < 1:
        raise ValueError("radius and k must be >= 1")
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim == 3:
        s = s[:, :, 0]
    h, w = s.shape
    r = int(radius)
    padded = np.pad(s, r, constant_values=-np.inf)
    keep = s >= threshold
    has_lower = np.zeros_like(keep)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            nb = padded[r + dy : r + dy + h, r + dx : r + dx + w]
            if dy < 0 or (dy == 0 and dx < 0):
                keep &= ~(nb >= s)
            else:
                keep &= ~(nb > s)
            has_lower |= np.isfinite(nb) & (nb < s)
    keep &= has_lower
    ys, xs = np.nonzero(keep)
    vals = s[ys, xs]
    order = np.lexsort((ys * w + xs, -vals))[:k]
    pts = np.stack([xs[order], ys[order]], axis=1).astype(np.float64)
    return pts, vals[order]


def gather_features(fused, normal_map, points, scores=None, image_dims=None):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if image_dims is None:
        image_dims = tuple(normal_map.shape[:2])
    if scores is None:
        scores = np.ones(len(pts))
    if len(pts) == 0:
        return FeatureBundle(
            pts, np.zeros(0), np.zeros((0, fused.shape[2]), np.float32), np.zeros((0, 3), np.float32), image_dims
        )
    desc = descriptor_at(fused, pts)
    normals = l2_normalize(grid_sample(normal_map, pts))
    return FeatureBundle(pts, np.asarray(scores, dtype=np.float64), desc, normals, tuple(image_dims))
