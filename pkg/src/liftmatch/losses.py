"""Training losses and their analytic gradients.

Reductions are means throughout, so magnitudes do not depend on how many
cells, normals or match pairs a batch contains.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

log = logging.getLogger(__name__)

NORMAL_WEIGHT = 2.0
DESC_WEIGHT = 1.0
DEFAULT_TEMPERATURE = 0.1
LOG_FLOOR = np.log(1e-12)


@dataclass
class MatchGroundTruth:
    pairs: np.ndarray  # (P, 2) int: (index in A, index in B)
    m: int
    n: int

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        a, b = self.pairs[:, 0], self.pairs[:, 1]
        if len(a) and (a.min() < 0 or a.max() >= self.m or b.min() < 0 or b.max() >= self.n):
            raise ValidationError("ground-truth match index out of range")
        if len(np.unique(a)) != len(a) or len(np.unique(b)) != len(b):
            raise ValidationError("ground-truth matches must be one-to-one")


def _log_softmax(x, axis):
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def cells_from_keypoints(points, dims, cell=8):
    """Per-cell class labels: position ``(y % 8) * 8 + x % 8`` of the first point in a cell, else 64."""
    h, w = dims
    hc, wc = -(-h // cell), -(-w // cell)
    labels = np.full((hc, wc), cell * cell, dtype=np.int64)
    for x, y in np.asarray(points, dtype=np.int64).reshape(-1, 2)[::-1]:
        labels[y // cell, x // cell] = (y % cell) * cell + x % cell
    return labels


def keypoint_nll(logits, gt_cells):
    return keypoint_nll_grad(logits, gt_cells)[0]


def keypoint_nll_grad(logits, gt_cells):
    """Mean over cells of ``-log softmax(logits)[label]``; label 64 is the dustbin."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(gt_cells, dtype=np.int64)
    flat = logits.reshape(-1, logits.shape[-1])
    lab = labels.reshape(-1)
    logp = _log_softmax(flat, axis=1)
    rows = np.arange(len(lab))
    loss = -logp[rows, lab].mean()
    grad = np.exp(logp)
    grad[rows, lab] -= 1.0
    return loss, (grad / len(lab)).reshape(logits.shape)


def normal_loss(pred, gt):
    return normal_loss_grad(pred, gt)[0]


def normal_loss_grad(pred, gt):
    """Mean of ``1 - cos(pred, gt)`` and its gradient w.r.t. ``pred``."""
    p = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    g = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    pn = np.linalg.norm(p, axis=1)
    gn = np.linalg.norm(g, axis=1)
    if (pn == 0).any() or (gn == 0).any():
        raise ValidationError("normal_loss got a zero-length normal")
    cos = (p * g).sum(axis=1) / (pn * gn)
    dcos = g / (pn * gn)[:, None] - cos[:, None] * p / (pn**2)[:, None]
    return float(np.mean(1.0 - cos)), -dcos / len(p)


def match_score_matrix(dA, dB, temperature=DEFAULT_TEMPERATURE):
    """Dual-softmax: row softmax times column softmax of ``dA dB^T / temperature``."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    logits = np.asarray(dA, dtype=np.float64) @ np.asarray(dB, dtype=np.float64).T / temperature
    return np.exp(_log_softmax(logits, 1) + _log_softmax(logits, 0))


def descriptor_nll(S, gt, return_diagnostics=False):
    """Mean ``-log S(i, j)`` over ground-truth pairs; zeros are clamped to 1e-12."""
    pairs = gt.pairs if isinstance(gt, MatchGroundTruth) else np.asarray(gt, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        raise ValidationError("descriptor_nll needs at least one ground-truth pair")
    vals = np.asarray(S, dtype=np.float64)[pairs[:, 0], pairs[:, 1]]
    clamped = int((vals < 1e-12).sum())
    if clamped:
        log.warning("descriptor_nll clamped %d score(s) below 1e-12", clamped)
    loss = float(-np.log(np.maximum(vals, 1e-12)).mean())
    return (loss, {"clamped": clamped}) if return_diagnostics else loss


def descriptor_loss(dA, dB, gt, temperature=DEFAULT_TEMPERATURE):
    """Dual-softmax NLL straight from descriptors, with gradients for both sides.

    Works in log space, so it agrees with ``descriptor_nll(match_score_matrix(...))``
    wherever no clamping happens. Returns ``(loss, grad_A, grad_B)``.
    """
    pairs = gt.pairs if isinstance(gt, MatchGroundTruth) else np.asarray(gt, dtype=np.int64).reshape(-1, 2)
    a = np.asarray(dA, dtype=np.float64)
    b = np.asarray(dB, dtype=np.float64)
    logits = a @ b.T / temperature
    lr = _log_softmax(logits, 1)
    lc = _log_softmax(logits, 0)
    i, j = pairs[:, 0], pairs[:, 1]
    raw = lr[i, j] + lc[i, j]
    loss = float(-np.maximum(raw, LOG_FLOOR).mean())
    w = 1.0 / len(pairs)
    active = raw > LOG_FLOOR
    i, j = i[active], j[active]
    # d(-log R_ij)/dL = R_i. - e_j ; d(-log C_ij)/dL = C_.j - e_i, gathered over gt pairs
    row_cnt = np.bincount(i, minlength=a.shape[0]).astype(np.float64)
    col_cnt = np.bincount(j, minlength=b.shape[0]).astype(np.float64)
    gl = np.exp(lr) * row_cnt[:, None] + np.exp(lc) * col_cnt[None, :]
    np.add.at(gl, (i, j), -2.0)
    gl *= w / temperature
    return loss, gl @ b, gl.T @ a


def total_loss(lk, ln, ld, alpha1=NORMAL_WEIGHT, alpha2=DESC_WEIGHT):
    return lk + alpha1 * ln + alpha2 * ld
