"""Geometry-aware descriptor lifting.

Descriptors and normals are projected by two small MLPs, summed, modulated by
a Fourier positional encoding, then refined by three linear self-attention
layers. Every step has a hand-written backward pass so the module can be
trained without an autodiff engine.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, TrainingError
from .losses import DEFAULT_TEMPERATURE, descriptor_loss
from .rng import SplitMix64, derive_seed
from .tensor import l2_normalize, mlp_forward

log = logging.getLogger(__name__)

DIM = 64
N_LAYERS = 3
PE_OCTAVES = 16
DEFAULT_LR = 1e-4
DEFAULT_ATTN_SCALE = 0.5


@dataclass
class LiftWeights:
    """MLP layers are ``(weight (Din, Dout), bias)``; attention is a list of ``{"q", "k", "v"}``."""

    mlp2d: list
    mlp3d: list
    attn: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.attn) != N_LAYERS:
            raise ParameterError(f"lifting needs exactly {N_LAYERS} attention layers, got {len(self.attn)}")

    @classmethod
    def random(cls, seed=0, attn_scale=DEFAULT_ATTN_SCALE, dtype=np.float64):
        rng = SplitMix64(derive_seed(seed, 0x11F7))

        def dense(din, dout, scale=1.0):
            bound = scale * np.sqrt(6.0 / din)
            return rng.uniform(-bound, bound, size=(din, dout)).astype(dtype)

        mlp2d = [(dense(DIM, DIM), np.zeros(DIM, dtype)), (dense(DIM, DIM), np.zeros(DIM, dtype))]
        mlp3d = [(dense(3, DIM), np.zeros(DIM, dtype)), (dense(DIM, DIM), np.zeros(DIM, dtype))]
        attn = [
            {key: dense(DIM, DIM, attn_scale / np.sqrt(3.0)) for key in ("q", "k", "v")}
            for _ in range(N_LAYERS)
        ]
        return cls(mlp2d, mlp3d, attn)

    def to_dict(self, prefix="lift."):
        out = {}
        for name, layers in (("mlp2d", self.mlp2d), ("mlp3d", self.mlp3d)):
            for i, (w, b) in enumerate(layers):
                out[f"{prefix}{name}.{i}.weight"] = w
                out[f"{prefix}{name}.{i}.bias"] = b
        for i, layer in enumerate(self.attn):
            for key in ("q", "k", "v"):
                out[f"{prefix}attn.{i}.{key}"] = layer[key]
        return out

    @classmethod
    def from_dict(cls, tensors, prefix="lift.", dtype=np.float64):
        def get(name):
            try:
                return np.asarray(tensors[prefix + name], dtype=dtype)
            except KeyError:
                raise ParameterError(f"missing weight tensor {prefix + name!r}") from None

        mlps = {
            name: [(get(f"{name}.{i}.weight"), get(f"{name}.{i}.bias")) for i in range(2)]
            for name in ("mlp2d", "mlp3d")
        }
        attn = [{key: get(f"attn.{i}.{key}") for key in ("q", "k", "v")} for i in range(N_LAYERS)]
        return cls(mlps["mlp2d"], mlps["mlp3d"], attn)

    def astype(self, dtype):
        return LiftWeights.from_dict(self.to_dict(), dtype=dtype)

    def zeros_like(self):
        return LiftWeights.from_dict({k: np.zeros_like(v) for k, v in self.to_dict().items()})


def positional_encode(points, dims):
    """Fourier features of coordinates scaled to [-1, 1].

    For octave f = 0..15 the row holds cos/sin of ``2^f * pi * x`` then cos/sin
    of ``2^f * pi * y``, giving 64 values per point.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    h, w = dims
    xn = 2.0 * pts[:, 0] / max(w - 1, 1) - 1.0
    yn = 2.0 * pts[:, 1] / max(h - 1, 1) - 1.0
    freq = (2.0 ** np.arange(PE_OCTAVES)) * np.pi
    ax = xn[:, None] * freq
    ay = yn[:, None] * freq
    pe = np.stack([np.cos(ax), np.sin(ax), np.cos(ay), np.sin(ay)], axis=2)
    return pe.reshape(len(pts), 4 * PE_OCTAVES)


def mix_features(bundle, weights, pe=None):
    """``PE(p) * (MLP_2d(d) + MLP_3d(n))`` per keypoint; pass ``pe`` to override the encoding."""
    if pe is None:
        pe = positional_encode(bundle.keypoints, bundle.image_dims)
    return pe * (mlp_forward(bundle.descriptors, weights.mlp2d) + mlp_forward(bundle.normals, weights.mlp3d))


def attention_layer(m, wq, wk, wv):
    """Linear self-attention with a residual.

    Keys are softmax-normalized over the keypoint axis separately for each
    channel, so the shared context is a length-64 vector and the layer costs
    O(N * 64^2).
    """
    return attention_forward(m, wq, wk, wv)[0]


def attention_forward(m, wq, wk, wv):
    q = m @ wq
    k = m @ wk
    v = m @ wv
    a = np.exp(k - k.max(axis=0, keepdims=True))
    a /= a.sum(axis=0, keepdims=True)
    ctx = (a * v).sum(axis=0)
    return q * ctx + m, (m, q, a, v, ctx)


def attention_backward(cache, g, wq, wk, wv):
    """Returns ``(grad_m, {"q", "k", "v"} weight grads)``."""
    m, q, a, v, ctx = cache
    g_q = g * ctx
    g_ctx = (g * q).sum(axis=0)
    g_a = g_ctx * v
    g_v = g_ctx * a
    g_k = a * (g_a - (g_a * a).sum(axis=0, keepdims=True))
    grads = {"q": m.T @ g_q, "k": m.T @ g_k, "v": m.T @ g_v}
    g_m = g + g_q @ wq.T + g_k @ wk.T + g_v @ wv.T
    return g_m, grads


def _mlp_backward(x, layers, hidden, g):
    # two-layer MLP: h = relu(x W0 + b0); y = h W1 + b1
    (w0, _), (w1, _) = layers
    h = hidden[0]
    g_w1 = h.T @ g
    g_b1 = g.sum(axis=0)
    g_h = (g @ w1.T) * (h > 0)
    return [(x.T @ g_h, g_h.sum(axis=0)), (g_w1, g_b1)], g_h @ w0.T


def mix_forward(descriptors, normals, pe, weights):
    y2, h2 = mlp_forward(descriptors, weights.mlp2d, return_hidden=True)
    y3, h3 = mlp_forward(normals, weights.mlp3d, return_hidden=True)
    return pe * (y2 + y3), dict(d=descriptors, n=normals, pe=pe, h2=h2, h3=h3)


def mix_backward(cache, weights, g):
    """Returns ``(mlp2d grads, mlp3d grads, grad_descriptors, grad_normals)``."""
    g_y = g * cache["pe"]
    g2, g_d = _mlp_backward(cache["d"], weights.mlp2d, cache["h2"], g_y)
    g3, g_n = _mlp_backward(cache["n"], weights.mlp3d, cache["h3"], g_y)
    return g2, g3, g_d, g_n


def lift_forward(descriptors, normals, pe, weights):
    """Forward pass keeping every intermediate needed by ``lift_backward``."""
    m, cache = mix_forward(descriptors, normals, pe, weights)
    caches = []
    for layer in weights.attn:
        m, c = attention_forward(m, layer["q"], layer["k"], layer["v"])
        caches.append(c)
    out = l2_normalize(m)
    cache.update(attn=caches, pre=m, out=out)
    return out, cache


def lift(bundle, weights, pe=None):
    """Lifted unit descriptors for a feature bundle."""
    if pe is None:
        pe = positional_encode(bundle.keypoints, bundle.image_dims)
    d = np.asarray(bundle.descriptors, dtype=np.float64)
    n = np.asarray(bundle.normals, dtype=np.float64)
    return lift_forward(d, n, pe, weights)[0]


def lift_backward(cache, weights, upstream):
    """Reverse pass of ``lift_forward``.

    ``upstream`` is dLoss/d(lifted descriptors). Returns
    ``(weight_grads, grad_descriptors, grad_normals)`` where ``weight_grads``
    is a ``LiftWeights`` holding gradients.
    """
    pre, out = cache["pre"], cache["out"]
    norm = np.linalg.norm(pre, axis=1, keepdims=True)
    g = (upstream - out * (out * upstream).sum(axis=1, keepdims=True)) / norm
    attn_grads = [None] * N_LAYERS
    for li in reversed(range(N_LAYERS)):
        layer = weights.attn[li]
        g, attn_grads[li] = attention_backward(cache["attn"][li], g, layer["q"], layer["k"], layer["v"])
    g2, g3, g_d, g_n = mix_backward(cache, weights, g)
    return LiftWeights(g2, g3, attn_grads), g_d, g_n


def _flat(weights):
    return weights.to_dict()


def train_lift(batches, lr=DEFAULT_LR, iterations=200, seed=0, temperature=DEFAULT_TEMPERATURE,
               init=None, betas=(0.9, 0.999), eps=1e-8):
    """Adam on the dual-softmax descriptor NLL of lifted descriptors.

    ``batches`` is a sequence of ``LiftBatch``; iteration ``t`` uses
    ``batches[t % len(batches)]``. Returns ``(weights, loss_trace)``.
    """
    if not batches:
        raise ValueError("train_lift needs at least one batch")
    weights = init.astype(np.float64) if init is not None else LiftWeights.random(seed)
    params = _flat(weights)
    m1 = {k: np.zeros_like(v) for k, v in params.items()}
    m2 = {k: np.zeros_like(v) for k, v in params.items()}
    pes = [(positional_encode(b.a.keypoints, b.a.image_dims), positional_encode(b.b.keypoints, b.b.image_dims))
           for b in batches]
    trace = []
    for t in range(iterations):
        bi = t % len(batches)
        batch = batches[bi]
        weights = LiftWeights.from_dict(params)
        out_a, cache_a = lift_forward(batch.a.descriptors, batch.a.normals, pes[bi][0], weights)
        out_b, cache_b = lift_forward(batch.b.descriptors, batch.b.normals, pes[bi][1], weights)
        loss, g_a, g_b = descriptor_loss(out_a, out_b, batch.gt, temperature)
        if not np.isfinite(loss):
            raise TrainingError(f"loss became non-finite at iteration {t}", iteration=t)
        trace.append(loss)
        grads_a = _flat(lift_backward(cache_a, weights, g_a)[0])
        grads_b = _flat(lift_backward(cache_b, weights, g_b)[0])
        b1, b2 = betas
        for k in params:
            g = grads_a[k] + grads_b[k]
            m1[k] = b1 * m1[k] + (1 - b1) * g
            m2[k] = b2 * m2[k] + (1 - b2) * g * g
            mhat = m1[k] / (1 - b1 ** (t + 1))
            vhat = m2[k] / (1 - b2 ** (t + 1))
            params[k] = params[k] - lr * mhat / (np.sqrt(vhat) + eps)
        if t % 50 == 0:
            log.debug("train_lift iter %d loss %.6f", t, loss)
    return LiftWeights.from_dict(params), trace
