"""Pseudo surface normals from depth maps via un-halved central differences."""

import numpy as np

from .errors import DimensionError, ValidationError


def check_depth(depth):
    z = np.asarray(depth, dtype=np.float64)
    if z.ndim == 3:
        if z.shape[2] != 1:
            raise DimensionError(f"depth must have one channel, got {z.shape[2]}")
        z = z[:, :, 0]
    if z.ndim != 2:
        raise DimensionError(f"depth must be H x W, got shape {z.shape}")
    bad = ~np.isfinite(z) | (z <= 0)
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise ValidationError(f"depth must be positive and finite; pixel (x={x}, y={y}) is {z[y, x]}")
    return z


def _diff(z, axis):
    # Interior: z[i+1] - z[i-1] with no 1/2 factor. Borders: one-sided
    # difference doubled so a linear ramp has the same gradient everywhere.
    d = np.empty_like(z)
    src = np.moveaxis(z, axis, 0)
    dst = np.moveaxis(d, axis, 0)
    dst[1:-1] = src[2:] - src[:-2]
    dst[0] = 2.0 * (src[1] - src[0])
    dst[-1] = 2.0 * (src[-1] - src[-2])
    return d


def depth_gradients(depth):
    """Return ``(du, dv)``: differences along columns (u) and rows (v)."""
    z = check_depth(depth)
    if z.shape[0] < 3 or z.shape[1] < 3:
        raise DimensionError(f"depth map must be at least 3x3, got {z.shape[1]}x{z.shape[0]}")
    return _diff(z, 1), _diff(z, 0)


def normals_from_depth(depth):
    """Unit normals ``(-dZ/du, -dZ/dv, 1) / norm`` as an H x W x 3 array (float64)."""
    du, dv = depth_gradients(depth)
    n = np.stack([-du, -dv, np.ones_like(du)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)
