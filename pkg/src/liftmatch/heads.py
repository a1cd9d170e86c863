"""Keypoint, descriptor and normal heads on top of the fused W/8 x H/8 x 64 map."""

import numpy as np

from .backbone import KEYPOINT_CHANNELS
from .errors import DimensionError
from .tensor import as_tensor, bilinear_resize, channel_softmax, conv2d, grid_sample, l2_normalize

CELL = 8


def keypoint_head(fused, weights):
    """Per-cell logits: 64 pixel positions plus the dustbin in channel 64."""
    return conv2d(fused, weights.conv("kpt"))


def unshuffle_cells(cells):
    """(Hc, Wc, 64) -> (8 Hc, 8 Wc); channel c goes to row c // 8, column c % 8 of its block."""
    hc, wc, c = cells.shape
    if c != CELL * CELL:
        raise DimensionError(f"expected 64 cell channels, got {c}")
    blocks = cells.reshape(hc, wc, CELL, CELL).transpose(0, 2, 1, 3)
    return blocks.reshape(hc * CELL, wc * CELL)


def scores_from_logits(logits, out_dims=None):
    logits = as_tensor(logits)
    if logits.shape[2] != KEYPOINT_CHANNELS:
        raise DimensionError(f"keypoint logits need 65 channels, got {logits.shape[2]}")
    hc, wc = logits.shape[:2]
    h, w = out_dims if out_dims is not None else (hc * CELL, wc * CELL)
    if h > hc * CELL or w > wc * CELL:
        raise DimensionError(f"output {h}x{w} exceeds 8x the logit grid {hc}x{wc}")
    prob = channel_softmax(logits)[:, :, :-1]
    return unshuffle_cells(prob)[:h, :w, None]


def normal_head(fused, weights, out_dims=None):
    proj = conv2d(fused, weights.conv("normal"))
    hc, wc = proj.shape[:2]
    up = bilinear_resize(proj, hc * CELL, wc * CELL)
    if out_dims is not None:
        up = up[: out_dims[0], : out_dims[1]]
    h, w = up.shape[:2]
    return l2_normalize(up.reshape(-1, 3)).reshape(h, w, 3)


def descriptor_at(fused, points):
    """Unit 64-d descriptors at full-resolution ``points``.

    Sampling the W/8 map and normalizing afterwards gives the same vectors as
    materializing the dense upsampled, normalized W x H x 64 map.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        return np.zeros((0, fused.shape[2]), dtype=fused.dtype)
    return l2_normalize(grid_sample(fused, pts, scale=CELL))
