"""Dense HWC tensor kernels shared by the network modules.

A tensor is a numpy array of shape ``(H, W, C)``; there is no batch axis.
Inference runs in float32, gradient checks in float64: kernels preserve the
dtype of their input.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, ParameterError


def as_tensor(x, dtype=None):
    x = np.asarray(x, dtype=dtype)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3:
        raise DimensionError(f"expected an HxWxC tensor, got shape {x.shape}")
    if x.size == 0:
        raise DimensionError(f"zero-sized tensor {x.shape}")
    return x


@dataclass
class ConvParams:
    kernel: np.ndarray  # (k, k, Cin, Cout)
    bias: np.ndarray  # (Cout,)
    stride: int = 1
    padding: int | None = None

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel)
        self.bias = np.asarray(self.bias)
        if self.kernel.ndim != 4 or self.kernel.shape[0] != self.kernel.shape[1]:
            raise ParameterError(f"kernel must be (k, k, Cin, Cout), got {self.kernel.shape}")
        if self.kernel.shape[0] not in (1, 3):
            raise ParameterError(f"kernel size must be 1 or 3, got {self.kernel.shape[0]}")
        if self.bias.shape != (self.kernel.shape[3],):
            raise ParameterError(
                f"bias length {self.bias.shape} does not match Cout={self.kernel.shape[3]}"
            )
        if self.stride not in (1, 2):
            raise ParameterError(f"stride must be 1 or 2, got {self.stride}")
        if self.padding is None:
            self.padding = (self.kernel.shape[0] - 1) // 2

    @property
    def k(self):
        return self.kernel.shape[0]


def conv2d(x, params):
    """Zero-padded cross-correlation ``sum(kernel * window) + bias``."""
    x = as_tensor(x)
    k, _, cin, cout = params.kernel.shape
    if x.shape[2] != cin:
        raise ParameterError(f"input has {x.shape[2]} channels, kernel expects {cin}")
    p, s = params.padding, params.stride
    kernel = params.kernel.astype(x.dtype, copy=False)
    bias = params.bias.astype(x.dtype, copy=False)
    if k == 1 and p == 0:
        out = x[::s, ::s] @ kernel[0, 0]
        return out + bias
    xp = np.pad(x, ((p, p), (p, p), (0, 0))) if p else x
    if xp.shape[0] < k or xp.shape[1] < k:
        raise DimensionError(f"input {x.shape} smaller than kernel {k}x{k}")
    win = sliding_window_view(xp, (k, k), axis=(0, 1))[::s, ::s]  # (Ho, Wo, Cin, k, k)
    ho, wo = win.shape[:2]
    cols = win.transpose(0, 1, 3, 4, 2).reshape(ho * wo, k * k * cin)
    out = cols @ kernel.reshape(k * k * cin, cout)
    return out.reshape(ho, wo, cout) + bias


def relu(x):
    return np.maximum(x, 0)


def maxpool2(x):
    x = as_tensor(x)
    h, w, c = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2 needs even dims, got {h}x{w}")
    return x.reshape(h // 2, 2, w // 2, 2, c).max(axis=(1, 3))


def _resize_axis(n_in, n_out):
    # align_corners=False: src = (i + 0.5) * in / out - 0.5, clamped to [0, in - 1]
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def bilinear_resize(x, out_h, out_w):
    x = as_tensor(x)
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"output size must be positive, got {out_h}x{out_w}")
    h, w, _ = x.shape
    if (h, w) == (out_h, out_w):
        return x.copy()
    y0, y1, fy = _resize_axis(h, out_h)
    x0, x1, fx = _resize_axis(w, out_w)
    fy = fy.astype(x.dtype)[:, None, None]
    fx = fx.astype(x.dtype)[None, :, None]
    rows = x[y0] * (1 - fy) + x[y1] * fy
    return rows[:, x0] * (1 - fx) + rows[:, x1] * fx


def channel_softmax(x):
    x = as_tensor(x)
    z = x - x.max(axis=2, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=2, keepdims=True)


def l2_normalize(v, eps=1e-12):
    """Row-normalize; rows with norm below ``eps`` become ``e1``."""
    v = np.asarray(v)
    if v.ndim != 2 or v.shape[1] < 1:
        raise DimensionError(f"expected an N x D array with D >= 1, got {v.shape}")
    norm = np.sqrt((v * v).sum(axis=1, keepdims=True))
    small = norm[:, 0] < eps
    out = v / np.where(norm < eps, 1, norm)
    if small.any():
        out[small] = 0
        out[small, 0] = 1
    return out


def grid_sample(fmap, points, scale=1.0):
    """Bilinearly sample ``fmap`` at full-resolution ``points`` (N x 2, x then y).

    ``fmap`` may be a downsampled map: a full-resolution coordinate ``p`` maps
    to ``(p + 0.5) / scale - 0.5`` in map cells, the same convention as
    ``bilinear_resize``, so sampling here equals upsampling densely and then
    reading pixel ``p``. Coordinates are clamped to the map border.
    """
    fmap = as_tensor(fmap)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    h, w, c = fmap.shape
    if len(pts) == 0:
        return np.zeros((0, c), dtype=fmap.dtype)
    sx = np.clip((pts[:, 0] + 0.5) / scale - 0.5, 0.0, w - 1)
    sy = np.clip((pts[:, 1] + 0.5) / scale - 0.5, 0.0, h - 1)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0).astype(fmap.dtype)[:, None]
    fy = (sy - y0).astype(fmap.dtype)[:, None]
    top = fmap[y0, x0] * (1 - fx) + fmap[y0, x1] * fx
    bot = fmap[y1, x0] * (1 - fx) + fmap[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def mlp_forward(x, layers, return_hidden=False):
    """Affine + ReLU for every layer but the last, which stays affine.

    ``layers`` is a sequence of ``(weight, bias)`` with weight shaped
    ``(Din, Dout)``.
    """
    h = np.asarray(x)
    hidden = []
    for i, (w, b) in enumerate(layers):
        if h.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
            raise ParameterError(
                f"layer {i}: input dim {h.shape[-1]} vs weight {w.shape}, bias {b.shape}"
            )
        h = h @ w + b
        if i < len(layers) - 1:
            h = relu(h)
            hidden.append(h)
    return (h, hidden) if return_hidden else h
