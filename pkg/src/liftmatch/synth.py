"""Deterministic synthetic data: warped texture pairs, analytic depth scenes,
lift-training batches and two-view pose scenes.

Every generator is a pure function of its arguments; randomness comes from
``SplitMix64`` streams derived from the seed.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import homography_dlt, image_corners, project_points
from .keypoints import FeatureBundle
from .losses import MatchGroundTruth
from .rng import SplitMix64, derive_seed
from .tensor import bilinear_resize, l2_normalize

log = logging.getLogger(__name__)

TEXTURES = ("checker", "noise", "low_texture")
DEPTH_SCENES = ("plane", "two_planes", "sphere")


@dataclass
class SynthPair:
    imageA: np.ndarray
    imageB: np.ndarray
    H_gt: np.ndarray
    correspondences: np.ndarray  # (N, 4): xA, yA, xB, yB
    depthA: np.ndarray | None = None
    normalsA_gt: np.ndarray | None = None


@dataclass
class LiftBatch:
    a: FeatureBundle
    b: FeatureBundle
    gt: MatchGroundTruth
    ambiguous: np.ndarray  # bool mask over points of view A


# ------------------------------------------------------------------ textures


def make_texture(rng, dims, texture):
    h, w = dims
    if texture == "checker":
        size = rng.integers(12, 28)
        lo, hi = 0.15 + 0.1 * rng.uniform(), 0.75 + 0.1 * rng.uniform()
        yy, xx = np.mgrid[0:h, 0:w]
        img = np.where(((yy // size) + (xx // size)) % 2 == 0, lo, hi)
        # jitter cell brightness so distant cells are not exact copies
        cells = rng.uniform(-0.08, 0.08, size=(h // size + 1, w // size + 1))
        img = img + cells[yy // size, xx // size]
    elif texture == "noise":
        img = np.zeros((h, w))
        for cell, amp in ((32, 0.5), (8, 0.3), (2, 0.2)):
            grid = rng.uniform(size=(max(h // cell, 1), max(w // cell, 1), 1))
            img += amp * bilinear_resize(grid, h, w)[:, :, 0]
    elif texture == "low_texture":
        img = np.full((h, w), 0.5)
        yy, xx = np.mgrid[0:h, 0:w]
        for _ in range(12):
            cx, cy = rng.uniform(0, w), rng.uniform(0, h)
            sigma = rng.uniform(2.0, 5.0)
            amp = rng.uniform(0.03, 0.08) * (1 if rng.uniform() < 0.5 else -1)
            img += amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma**2))
    else:
        raise ValueError(f"unknown texture {texture!r}; expected one of {TEXTURES}")
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    return np.repeat(img[:, :, None], 3, axis=2)


def warp_image(image, H, out_dims=None):
    """``out(x) = image(H^-1 x)`` with bilinear sampling; outside pixels are 0."""
    h, w = image.shape[:2] if out_dims is None else out_dims
    yy, xx = np.mgrid[0:h, 0:w]
    grid = np.stack([xx.ravel(), yy.ravel()], axis=1).astype(np.float64)
    src = project_points(np.linalg.inv(H), grid)
    sh, sw = image.shape[:2]
    inside = (src[:, 0] >= 0) & (src[:, 0] <= sw - 1) & (src[:, 1] >= 0) & (src[:, 1] <= sh - 1)
    src = np.where(inside[:, None], src, 0.0)
    x0 = np.floor(src[:, 0]).astype(np.int64)
    y0 = np.floor(src[:, 1]).astype(np.int64)
    x1 = np.minimum(x0 + 1, sw - 1)
    y1 = np.minimum(y0 + 1, sh - 1)
    fx = (src[:, 0] - x0)[:, None]
    fy = (src[:, 1] - y0)[:, None]
    img = image.astype(np.float64)
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    out = (top * (1 - fy) + bot * fy) * inside[:, None]
    return out.reshape(h, w, -1).astype(image.dtype)


def random_homography(rng, dims, magnitude):
    """Homography moving the four image corners by up to ``magnitude * min(H, W)`` pixels."""
    corners = image_corners(dims)
    if magnitude == 0:
        rng.uniform(size=8)
        return np.eye(3)
    shift = rng.uniform(-1.0, 1.0, size=(4, 2)) * magnitude * min(dims)
    return homography_dlt(corners, corners + shift)


def overlap_fraction(H, dims, step=4):
    h, w = dims
    yy, xx = np.mgrid[0:h:step, 0:w:step]
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1).astype(np.float64)
    src = project_points(np.linalg.inv(H), pts)
    ok = (src[:, 0] >= 0) & (src[:, 0] <= w - 1) & (src[:, 1] >= 0) & (src[:, 1] <= h - 1)
    return float(ok.mean())


def sample_correspondences(rng, H, dims, n):
    """``n`` points of A whose images under ``H`` land inside B, with their exact images."""
    h, w = dims
    out = []
    for _ in range(50):
        pa = rng.uniform(size=(4 * n, 2)) * [w - 1, h - 1]
        pb = project_points(H, pa)
        ok = np.isfinite(pb).all(axis=1) & (pb[:, 0] >= 0) & (pb[:, 0] <= w - 1) & (pb[:, 1] >= 0) & (pb[:, 1] <= h - 1)
        out.append(np.hstack([pa[ok], pb[ok]]))
        if sum(len(o) for o in out) >= n:
            break
    return np.vstack(out)[:n]


def gen_pair(seed, dims=(256, 256), texture="noise", warp=0.1, translation=None, n_corr=200):
    """Texture image, a homography-warped copy, and exact correspondences.

    ``translation=(tx, ty)`` replaces the random homography with a pure shift.
    Warps leaving less than 25% overlap are redrawn at half the magnitude.
    """
    h, w = dims
    if h % 32 or w % 32:
        raise ValueError(f"synthetic pair dims must be multiples of 32, got {dims}")
    rng = SplitMix64(derive_seed(seed, 1))
    image = make_texture(rng, dims, texture)
    if translation is not None:
        H = np.array([[1.0, 0.0, translation[0]], [0.0, 1.0, translation[1]], [0.0, 0.0, 1.0]])
    else:
        H = random_homography(rng, dims, warp)
        while overlap_fraction(H, dims) < 0.25:
            warp *= 0.5
            log.info("seed %s: overlap below 25%%, regenerating with warp %.4f", seed, warp)
            H = random_homography(rng, dims, warp)
    corr = sample_correspondences(rng, H, dims, n_corr)
    return SynthPair(image, warp_image(image, H), H, corr)


def gen_planted_matches(seed, n=200, outlier_ratio=0.5, dims=(256, 256), warp=0.1, noise_px=0.0):
    """Correspondences under a random homography with a fraction replaced by uniform outliers.

    Returns ``(ptsA, ptsB, H, inlier_mask)``.
    """
    rng = SplitMix64(derive_seed(seed, 2))
    h, w = dims
    H = random_homography(rng, dims, warp)
    corr = sample_correspondences(rng, H, dims, n)
    a, b = corr[:, :2].copy(), corr[:, 2:].copy()
    if noise_px:
        b += rng.normal(0.0, noise_px, size=b.shape)
    n_out = int(round(outlier_ratio * len(a)))
    out_idx = rng.permutation(len(a))[:n_out]
    b[out_idx] = rng.uniform(size=(n_out, 2)) * [w - 1, h - 1]
    inliers = np.ones(len(a), dtype=bool)
    inliers[out_idx] = False
    # uniform replacements that happen to land on the true projection are still inliers
    inliers |= np.linalg.norm(project_points(H, a) - b, axis=1) < 1e-9
    return a, b, H, inliers


# ------------------------------------------------------------------ depth scenes


def _plane_fn(z0, a, b):
    return lambda u, v: z0 + a * u + b * v


def _scene_function(rng, dims, scene, slope):
    h, w = dims
    if scene == "plane":
        a, b = slope if slope is not None else rng.uniform(-0.05, 0.05, size=2)
        z0 = 1.0 + abs(a) * w + abs(b) * h
        return _plane_fn(z0, a, b), None
    if scene == "two_planes":
        a1, a2, b = slope if slope is not None else rng.uniform(-0.05, 0.05, size=3)
        seam = w // 2
        z0 = 1.0 + (abs(a1) + abs(a2)) * w + abs(b) * h

        def f(u, v):
            return z0 + b * v + np.where(u < seam, a1 * u, a1 * seam + a2 * (u - seam))

        return f, ("seam", seam)
    if scene == "sphere":
        cx, cy = w // 2, h // 2
        r = 0.4 * min(h, w)
        zc = 3.0 * r

        def f(u, v):
            d2 = (u - cx) ** 2 + (v - cy) ** 2
            return zc - np.sqrt(np.clip(r * r - d2, 0.0, None))

        return f, ("sphere", cx, cy, r)
    raise ValueError(f"unknown depth scene {scene!r}; expected one of {DEPTH_SCENES}")


def gen_depth_scene(seed, dims=(64, 64), scene="plane", slope=None, return_mask=False):
    """Analytic depth and its closed-form normals.

    Normals are the un-halved central-difference normals of the analytic depth
    function itself, ``(-(Z(u+1,v) - Z(u-1,v)), -(Z(u,v+1) - Z(u,v-1)), 1)``
    normalized; for a plane with slopes ``(a, b)`` this is
    ``(-2a, -2b, 1) / norm``. With ``return_mask`` a third array flags pixels
    whose difference stencil stays on one smooth piece and off the border.
    """
    h, w = dims
    if h < 16 or w < 16:
        raise ValueError(f"depth scenes need dims >= 16, got {dims}")
    rng = SplitMix64(derive_seed(seed, 3))
    f, kind = _scene_function(rng, dims, scene, slope)
    vv, uu = np.mgrid[0:h, 0:w].astype(np.float64)
    depth = f(uu, vv)
    du = f(uu + 1, vv) - f(uu - 1, vv)
    dv = f(uu, vv + 1) - f(uu, vv - 1)
    n = np.stack([-du, -dv, np.ones_like(du)], axis=-1)
    normals = n / np.linalg.norm(n, axis=-1, keepdims=True)
    if not return_mask:
        return depth, normals
    mask = np.zeros((h, w), dtype=bool)
    mask[1:-1, 1:-1] = True
    if kind is not None and kind[0] == "seam":
        mask[:, kind[1] - 1 : kind[1] + 2] = False
    elif kind is not None and kind[0] == "sphere":
        _, cx, cy, r = kind
        for du_, dv_ in ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)):
            d2 = (uu + du_ - cx) ** 2 + (vv + dv_ - cy) ** 2
            inside = d2 < r * r
            if du_ == 0 and dv_ == 0:
                ref = inside
            else:
                mask &= inside == ref
        # the square root is not smooth at the rim itself
        mask &= np.abs(np.sqrt((uu - cx) ** 2 + (vv - cy) ** 2) - r) > 2.0
    return depth, normals, mask


# ------------------------------------------------------------------ lift batches


def hemisphere_directions(n, rng):
    """``n`` well-separated unit vectors with z > 0 (Fibonacci lattice, random order and spin)."""
    i = np.arange(n) + 0.5
    z = 1.0 - 0.85 * i / n
    phi = i * np.pi * (3.0 - np.sqrt(5.0)) + rng.uniform(0, 2 * np.pi)
    r = np.sqrt(1.0 - z * z)
    dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    return dirs[rng.permutation(n)]


def gen_lift_batch(seed, n_points=128, ambiguity=0.5, dims=(256, 256), desc_noise=0.1,
                   normal_noise_deg=2.0, jitter_px=0.5, group_size=2, group_spread=0.001):
    """Two views of one keypoint set where a fraction of descriptors collide.

    Ambiguous points come in groups of ``group_size`` sharing one base
    descriptor (pairwise cosine above 0.98) while carrying well-separated
    normals, so raw descriptors can only pick a partner within the group at
    chance. The other points get independent random unit descriptors. View B
    perturbs descriptors, normals and positions slightly. Ground truth is the
    identity pairing.
    """
    if n_points < 4 or not 0.0 <= ambiguity <= 1.0 or group_size < 2:
        raise ValueError("need n_points >= 4, ambiguity in [0, 1] and group_size >= 2")
    rng = SplitMix64(derive_seed(seed, 4))
    h, w = dims
    n_amb = int(round(ambiguity * n_points))
    desc = l2_normalize(rng.normal(size=(n_points, 64)))
    if n_amb:
        group = np.arange(n_amb) // group_size
        bases = l2_normalize(rng.normal(size=(group.max() + 1, 64)))
        desc[:n_amb] = l2_normalize(bases[group] + group_spread * rng.normal(size=(n_amb, 64)) / 8.0)
    normals = hemisphere_directions(n_points, rng)
    pts = rng.uniform(size=(n_points, 2)) * [w - 1, h - 1]
    order = rng.permutation(n_points)
    desc, normals, pts = desc[order], normals[order], pts[order]
    ambiguous = order < n_amb

    desc_b = l2_normalize(desc + desc_noise * rng.normal(size=desc.shape) / 8.0)
    sigma = np.radians(normal_noise_deg)
    normals_b = l2_normalize(normals + sigma * rng.normal(size=normals.shape))
    pts_b = np.clip(pts + jitter_px * rng.normal(size=pts.shape), 0, [w - 1, h - 1])
    ones = np.ones(n_points)
    a = FeatureBundle(pts, ones, desc, normals, dims)
    b = FeatureBundle(pts_b, ones, desc_b, normals_b, dims)
    gt = MatchGroundTruth(np.stack([np.arange(n_points)] * 2, axis=1), n_points, n_points)
    return LiftBatch(a, b, gt, ambiguous)


# ------------------------------------------------------------------ pose scenes


@dataclass
class PoseScene:
    ptsA: np.ndarray
    ptsB: np.ndarray
    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    inliers: np.ndarray
    dims: tuple = (480, 640)


def rotation_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * k @ k


def default_intrinsics(dims=(480, 640), focal=500.0):
    h, w = dims
    return np.array([[focal, 0.0, w / 2.0], [0.0, focal, h / 2.0], [0.0, 0.0, 1.0]])


def gen_pose_scene(seed, n_points=100, outlier_ratio=0.0, noise_px=0.0, max_rot_deg=15.0,
                   translation=True, K=None, dims=(480, 640)):
    """Random 3D points seen by two cameras; ``X_B = R X_A + t`` with unit ``t``.

    ``translation=False`` gives a pure rotation. Outliers replace a fraction of
    view-B points with uniform random pixels.
    """
    rng = SplitMix64(derive_seed(seed, 5))
    K = default_intrinsics(dims) if K is None else np.asarray(K, dtype=np.float64)
    h, w = dims
    R = rotation_from_axis_angle(rng.normal(size=3), np.radians(rng.uniform(2.0, max_rot_deg)))
    if translation:
        t = rng.normal(size=3)
        t /= np.linalg.norm(t)
    else:
        t = np.zeros(3)
    pa, pb = [], []
    while sum(len(p) for p in pa) < n_points:
        m = 4 * n_points
        z = rng.uniform(4.0, 10.0, size=m)
        xy = (rng.uniform(size=(m, 2)) * [w, h] - K[:2, 2]) / [K[0, 0], K[1, 1]]
        X = np.column_stack([xy * z[:, None], z])
        Xb = X @ R.T + t
        ok = Xb[:, 2] > 0.5
        ua = X @ K.T
        ub = Xb @ K.T
        ua = ua[:, :2] / ua[:, 2:]
        with np.errstate(divide="ignore", invalid="ignore"):
            ub = ub[:, :2] / ub[:, 2:]
        ok &= (ub[:, 0] >= 0) & (ub[:, 0] < w) & (ub[:, 1] >= 0) & (ub[:, 1] < h)
        pa.append(ua[ok])
        pb.append(ub[ok])
    a = np.vstack(pa)[:n_points]
    b = np.vstack(pb)[:n_points]
    if noise_px:
        a = a + rng.normal(0.0, noise_px, size=a.shape)
        b = b + rng.normal(0.0, noise_px, size=b.shape)
    n_out = int(round(outlier_ratio * n_points))
    out_idx = rng.permutation(n_points)[:n_out]
    b[out_idx] = rng.uniform(size=(n_out, 2)) * [w, h]
    inliers = np.ones(n_points, dtype=bool)
    inliers[out_idx] = False
    return PoseScene(a, b, K, R, t, inliers, dims)
