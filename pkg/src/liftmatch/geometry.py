"""Matching, robust two-view estimation and the evaluation metrics.

Homographies use a Hartley-normalized DLT inside a fixed-threshold RANSAC;
relative pose uses a normalized 8-point essential solver with rank-2
projection and cheirality-based decomposition. RANSAC draws every minimal
sample from a counter-based stream keyed on ``(seed, iteration)``, so results
do not depend on evaluation order.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import EstimationError
from .rng import SplitMix64

DEFAULT_H_ITERS = 1000
DEFAULT_H_THRESHOLD = 3.0
DEFAULT_POSE_ITERS = 2000
DEFAULT_POSE_THRESHOLD = 1.0
MHA_THRESHOLDS = (3, 5, 7)
AUC_THRESHOLDS = (5, 10, 20)


@dataclass
class MatchSet:
    pairs: np.ndarray  # (P, 2) int
    similarity: np.ndarray  # (P,)
    provenance: str = "raw"

    def __len__(self):
        return len(self.pairs)


def mnn_match(dA, dB, min_sim=-np.inf, provenance="raw"):
    """Mutual nearest neighbours by dot product; ties go to the lower index."""
    a = np.asarray(dA, dtype=np.float64)
    b = np.asarray(dB, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        return MatchSet(np.zeros((0, 2), np.int64), np.zeros(0), provenance)
    sim = a @ b.T
    nn12 = sim.argmax(axis=1)
    nn21 = sim.argmax(axis=0)
    ids = np.arange(len(a))
    best = sim[ids, nn12]
    keep = (nn21[nn12] == ids) & (best >= min_sim)
    return MatchSet(np.stack([ids[keep], nn12[keep]], axis=1), best[keep], provenance)


def _hom(pts):
    return np.concatenate([pts, np.ones(pts.shape[:-1] + (1,))], axis=-1)


def project_points(H, pts):
    """Apply ``H`` to N x 2 points (or a batch B x N x 2 with H of shape B x 3 x 3)."""
    pts = np.asarray(pts, dtype=np.float64)
    q = _hom(pts) @ np.swapaxes(np.asarray(H, dtype=np.float64), -1, -2)
    w = q[..., 2:3]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = q[..., :2] / w
    return np.where(np.abs(w) > 1e-12, out, np.inf)


def _normalizing_transform(pts):
    """Similarity taking the batch of point sets to zero mean, RMS radius sqrt(2)."""
    c = pts.mean(axis=-2, keepdims=True)
    rms = np.sqrt(((pts - c) ** 2).sum(axis=-1).mean(axis=-1))
    s = np.sqrt(2.0) / np.maximum(rms, 1e-300)
    T = np.zeros(pts.shape[:-2] + (3, 3))
    T[..., 0, 0] = s
    T[..., 1, 1] = s
    T[..., 0, 2] = -s * c[..., 0, 0]
    T[..., 1, 2] = -s * c[..., 0, 1]
    T[..., 2, 2] = 1.0
    return T, (pts - c) * s[..., None, None]


def _dlt_batch(src, dst, rank_tol=1e-8):
    """Normalized DLT for a batch (B, N, 2); returns (B, 3, 3) homographies and validity."""
    ts, xs = _normalizing_transform(src)
    td, xd = _normalizing_transform(dst)
    x, y = xs[..., 0], xs[..., 1]
    u, v = xd[..., 0], xd[..., 1]
    one, zero = np.ones_like(x), np.zeros_like(x)
    r1 = np.stack([x, y, one, zero, zero, zero, -u * x, -u * y, -u], axis=-1)
    r2 = np.stack([zero, zero, zero, x, y, one, -v * x, -v * y, -v], axis=-1)
    A = np.concatenate([r1, r2], axis=-2)
    if A.shape[-2] < 9:
        A = np.concatenate([A, np.zeros(A.shape[:-2] + (9 - A.shape[-2], 9))], axis=-2)
    _, s, vt = np.linalg.svd(A)
    hn = vt[..., -1, :].reshape(A.shape[:-2] + (3, 3))
    H = np.linalg.inv(td) @ hn @ ts
    h33 = H[..., 2, 2]
    scale = np.where(np.abs(h33) > 1e-12, h33, 1.0)
    H = H / scale[..., None, None]
    valid = (s[..., 7] > rank_tol * s[..., 0]) & np.isfinite(H).all(axis=(-1, -2))
    det = np.linalg.det(np.where(np.isfinite(H), H, 0.0))
    valid &= np.abs(det) > 1e-12
    return H, valid


def homography_dlt(ptsA, ptsB):
    """Least-squares homography from four or more correspondences (h33 scaled to 1)."""
    a = np.asarray(ptsA, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(ptsB, dtype=np.float64).reshape(-1, 2)
    if len(a) < 4 or len(a) != len(b):
        raise EstimationError(f"homography needs >= 4 paired points, got {len(a)}/{len(b)}")
    H, valid = _dlt_batch(a[None], b[None])
    if not valid[0]:
        raise EstimationError("degenerate point configuration for homography")
    return H[0]


def transfer_errors(H, ptsA, ptsB):
    """Symmetric transfer error: max of forward and backward reprojection distances."""
    H = np.asarray(H, dtype=np.float64)
    with np.errstate(invalid="ignore", over="ignore"):
        Hinv = np.linalg.inv(H)
        fwd = np.linalg.norm(project_points(H, ptsA) - ptsB, axis=-1)
        bwd = np.linalg.norm(project_points(Hinv, ptsB) - ptsA, axis=-1)
        err = np.maximum(fwd, bwd)
    return np.where(np.isfinite(err), err, np.inf)


def _sample_sets(n, k, iters, seed):
    # row i uses counters [i*n, (i+1)*n) of the stream: one independent draw per iteration
    keys = SplitMix64(seed).u64(iters * n).reshape(iters, n)
    part = np.argpartition(keys, k - 1, axis=1)[:, :k]
    order = np.argsort(np.take_along_axis(keys, part, axis=1), axis=1)
    return np.take_along_axis(part, order, axis=1)


def ransac_homography(ptsA, ptsB, iters=DEFAULT_H_ITERS, inlier_px=DEFAULT_H_THRESHOLD, seed=0,
                      min_inliers=8):
    """Fixed-threshold RANSAC over 4-point DLT samples, then a DLT refit on the inliers.

    Returns ``(H, inlier_mask)``; ``H`` is ``None`` when no hypothesis gathers
    ``min_inliers`` supporters (a 4-point sample always explains itself, so
    the bar sits above the minimal sample).
    """
    a = np.asarray(ptsA, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(ptsB, dtype=np.float64).reshape(-1, 2)
    n = len(a)
    if n < 4:
        raise EstimationError(f"ransac_homography needs >= 4 matches, got {n}")
    idx = _sample_sets(n, 4, iters, seed)
    Hs, valid = _dlt_batch(a[idx], b[idx])
    Hs[~valid] = np.eye(3)
    err = transfer_errors(Hs, a[None], b[None])
    counts = np.where(valid, (err < inlier_px).sum(axis=1), -1)
    best = int(np.argmax(counts))  # first maximum: lowest iteration index wins ties
    if counts[best] < max(min_inliers, 4):
        return None, np.zeros(n, dtype=bool)
    mask = err[best] < inlier_px
    H = Hs[best]
    try:
        refit = homography_dlt(a[mask], b[mask])
        refit_mask = transfer_errors(refit, a, b) < inlier_px
        if refit_mask.sum() >= mask.sum():
            H, mask = refit, refit_mask
    except EstimationError:
        pass
    return H, mask


def image_corners(dims):
    h, w = dims
    return np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], dtype=np.float64)


def corner_error(H_est, H_gt, dims):
    if H_est is None:
        return np.inf
    c = image_corners(dims)
    d = np.linalg.norm(project_points(H_est, c) - project_points(H_gt, c), axis=1)
    return float(d.mean()) if np.isfinite(d).all() else np.inf


def mha(H_est, H_gt, dims, thresholds=MHA_THRESHOLDS):
    """Per-pair homography accuracy: 1 where the mean corner error <= threshold."""
    err = corner_error(H_est, H_gt, dims)
    return {"corner_error": err, "accuracy": [float(err <= t) for t in thresholds]}


# ---------------------------------------------------------------- relative pose


@dataclass
class RelativePose:
    R: np.ndarray
    t: np.ndarray
    inliers: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))
    degenerate: bool = False


def _skew(t):
    return np.array([[0, -t[2], t[1]], [t[2], 0, -t[0]], [-t[1], t[0], 0]], dtype=np.float64)


def essential_from_pose(R, t):
    return _skew(np.asarray(t, dtype=np.float64)) @ np.asarray(R, dtype=np.float64)


def _eight_point_batch(x1, x2):
    """Essential matrices from (B, N>=8, 2) normalized coordinates, projected to rank 2."""
    t1, y1 = _normalizing_transform(x1)
    t2, y2 = _normalizing_transform(x2)
    h1, h2 = _hom(y1), _hom(y2)
    A = (h2[..., :, None] * h1[..., None, :]).reshape(h1.shape[:-1] + (9,))
    if A.shape[-2] < 9:
        A = np.concatenate([A, np.zeros(A.shape[:-2] + (9 - A.shape[-2], 9))], axis=-2)
    vt = np.linalg.svd(A)[2]
    F = vt[..., -1, :].reshape(A.shape[:-2] + (3, 3))
    E = np.swapaxes(t2, -1, -2) @ F @ t1
    u, sv, vt = np.linalg.svd(E)
    sig = 0.5 * (sv[..., 0] + sv[..., 1])
    d = np.zeros_like(sv)
    d[..., 0] = d[..., 1] = sig
    E = (u * d[..., None, :]) @ vt
    # Rank-deficient systems (pure rotation) still yield a null-space member
    # consistent with the data, so only non-finite or zero solutions are rejected.
    valid = np.isfinite(E).all(axis=(-2, -1)) & (sig > 0)
    return E, valid


def sampson_errors(E, x1, x2):
    """Squared Sampson distance of normalized correspondences under ``E`` (batched)."""
    h1, h2 = _hom(x1), _hom(x2)
    Ex1 = h1 @ np.swapaxes(E, -1, -2)
    Etx2 = h2 @ E
    num = (h2 * Ex1).sum(axis=-1) ** 2
    den = Ex1[..., 0] ** 2 + Ex1[..., 1] ** 2 + Etx2[..., 0] ** 2 + Etx2[..., 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    return np.where(np.isfinite(out), out, np.inf)


def _triangulate_depths(R, t, x1, x2):
    """Linear triangulation; depths of each point in both cameras."""
    P1 = np.hstack([np.eye(3), np.zeros((3, 1))])
    P2 = np.hstack([R, t[:, None]])
    A = np.stack([
        x1[:, 0, None] * P1[2] - P1[0],
        x1[:, 1, None] * P1[2] - P1[1],
        x2[:, 0, None] * P2[2] - P2[0],
        x2[:, 1, None] * P2[2] - P2[1],
    ], axis=1)
    Xh = np.linalg.svd(A)[2][:, -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        X = Xh[:, :3] / Xh[:, 3:4]
    z1 = X[:, 2]
    z2 = X @ R[2] + t[2]
    return np.nan_to_num(z1, nan=-1.0), np.nan_to_num(z2, nan=-1.0)


def decompose_essential(E):
    u, _, vt = np.linalg.svd(E)
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    W = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], dtype=np.float64)
    t = u[:, 2]
    return [u @ W @ vt, u @ W.T @ vt], t


def _ray_angles(R, x1, x2):
    r1 = _hom(x1) @ R.T
    r2 = _hom(x2)
    cos = (r1 * r2).sum(1) / (np.linalg.norm(r1, axis=1) * np.linalg.norm(r2, axis=1))
    return np.arccos(np.clip(cos, -1.0, 1.0))


def _normalize_by_intrinsics(pts, K):
    K = np.asarray(K, dtype=np.float64)
    return (_hom(np.asarray(pts, dtype=np.float64)) @ np.linalg.inv(K).T)[:, :2]


def estimate_pose(ptsA, ptsB, KA, KB, iters=DEFAULT_POSE_ITERS, thresh_px=DEFAULT_POSE_THRESHOLD, seed=0,
                  min_inliers=16):
    """Relative pose of camera B w.r.t. camera A (``X_B = R X_A + t``), ``t`` unit length.

    When the inlier rays are explained by a rotation alone (no parallax) the
    rotation is chosen by ray alignment, ``degenerate`` is set, and ``t`` is
    whatever direction the essential matrix carries.
    """
    a = np.asarray(ptsA, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(ptsB, dtype=np.float64).reshape(-1, 2)
    n = len(a)
    if n < 8:
        raise EstimationError(f"estimate_pose needs >= 8 matches, got {n}")
    x1 = _normalize_by_intrinsics(a, KA)
    x2 = _normalize_by_intrinsics(b, KB)
    focal = np.mean([KA[0][0], KA[1][1], KB[0][0], KB[1][1]])
    gate = (thresh_px / focal) ** 2
    idx = _sample_sets(n, 8, iters, seed)
    Es, valid = _eight_point_batch(x1[idx], x2[idx])
    err = sampson_errors(Es, x1[None], x2[None])
    counts = np.where(valid, (err < gate).sum(axis=1), -1)
    best = int(np.argmax(counts))
    if counts[best] < max(min_inliers, 8):
        raise EstimationError(f"no essential matrix reached {min_inliers} inliers (best {counts[best]})")
    mask = err[best] < gate
    E = Es[best]
    refit, ok = _eight_point_batch(x1[mask][None], x2[mask][None])
    if ok[0]:
        refit_mask = sampson_errors(refit[0], x1, x2) < gate
        if refit_mask.sum() >= mask.sum():
            E, mask = refit[0], refit_mask
    rots, t = decompose_essential(E)
    p1, p2 = x1[mask], x2[mask]
    residual = [float(np.median(_ray_angles(R, p1, p2))) for R in rots]
    if min(residual) < thresh_px / focal:
        R = rots[int(np.argmin(residual))]
        return RelativePose(R, t / np.linalg.norm(t), mask, degenerate=True)
    scores = []
    for R in rots:
        for sign in (1.0, -1.0):
            z1, z2 = _triangulate_depths(R, sign * t, p1, p2)
            scores.append(int(((z1 > 0) & (z2 > 0)).sum()))
    best_c = int(np.argmax(scores))
    if scores[best_c] == 0:
        raise EstimationError("no pose candidate places points in front of both cameras")
    R = rots[best_c // 2]
    tt = t * (1.0 if best_c % 2 == 0 else -1.0)
    return RelativePose(R, tt / np.linalg.norm(tt), mask)


def rotation_error_deg(R_est, R_gt):
    cos = (np.trace(np.asarray(R_est).T @ np.asarray(R_gt)) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


def translation_error_deg(t_est, t_gt):
    """Angle between translation directions, sign-agnostic (E fixes t only up to sign)."""
    a = np.asarray(t_est, dtype=np.float64)
    b = np.asarray(t_gt, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return float("nan")
    ang = float(np.degrees(np.arccos(np.clip(a @ b / (na * nb), -1.0, 1.0))))
    return min(ang, 180.0 - ang)


def pose_error_deg(pose, R_gt, t_gt):
    if pose is None:
        return np.inf
    return max(rotation_error_deg(pose.R, R_gt), translation_error_deg(pose.t, t_gt))


def pose_auc(errors, thresholds=AUC_THRESHOLDS):
    """Exact area under the step recall curve up to each threshold, normalized by it.

    Failures are encoded as ``inf``; an error ``e < T`` contributes ``(T - e) / (N T)``.
    """
    e = np.asarray(errors, dtype=np.float64).reshape(-1)
    if len(e) == 0:
        raise ValueError("pose_auc needs at least one error")
    if (e < 0).any() or np.isnan(e).any():
        raise ValueError("pose errors must be non-negative")
    return [float(np.clip(T - e, 0.0, None).sum() / (len(e) * T)) for T in thresholds]
