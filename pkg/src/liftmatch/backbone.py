"""Five-block convolutional encoder and the multi-scale fusion block."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError
from .rng import SplitMix64, derive_seed
from .tensor import ConvParams, as_tensor, bilinear_resize, conv2d, maxpool2, relu

BLOCK_DEPTHS = (4, 8, 16, 32, 64)
IN_CHANNELS = 3
FUSED_CHANNELS = 64
DESC_DIM = 64
KEYPOINT_CHANNELS = 65


def net_weight_shapes():
    """Required backbone and head tensors, in serialization order."""
    shapes = {}
    cin = IN_CHANNELS
    for i, cout in enumerate(BLOCK_DEPTHS, start=1):
        shapes[f"enc{i}.weight"] = (3, 3, cin, cout)
        shapes[f"enc{i}.bias"] = (cout,)
        cin = cout
    for b in (3, 4, 5):
        shapes[f"fuse{b}.weight"] = (1, 1, BLOCK_DEPTHS[b - 1], FUSED_CHANNELS)
        shapes[f"fuse{b}.bias"] = (FUSED_CHANNELS,)
    shapes["kpt.weight"] = (1, 1, FUSED_CHANNELS, KEYPOINT_CHANNELS)
    shapes["kpt.bias"] = (KEYPOINT_CHANNELS,)
    shapes["normal.weight"] = (1, 1, FUSED_CHANNELS, 3)
    shapes["normal.bias"] = (3,)
    return shapes


@dataclass
class NetWeights:
    """Named backbone + head tensors. Extra names (e.g. ``lift.*``) ride along untouched."""

    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name):
        try:
            return self.tensors[name]
        except KeyError:
            raise ParameterError(f"missing weight tensor {name!r}") from None

    def __setitem__(self, name, value):
        self.tensors[name] = np.asarray(value, dtype=np.float32)

    def __contains__(self, name):
        return name in self.tensors

    def conv(self, prefix, stride=1):
        return ConvParams(self[f"{prefix}.weight"], self[f"{prefix}.bias"], stride=stride)

    def validate(self):
        for name, shape in net_weight_shapes().items():
            got = self[name].shape
            if got != shape:
                raise ParameterError(f"{name}: expected shape {shape}, got {got}")
        return self

    @classmethod
    def random(cls, seed=0):
        """He-uniform fan-in initialization with zero biases."""
        w = cls()
        for i, (name, shape) in enumerate(net_weight_shapes().items()):
            if name.endswith(".bias"):
                w[name] = np.zeros(shape)
                continue
            fan_in = shape[0] * shape[1] * shape[2]
            bound = np.sqrt(6.0 / fan_in)
            rng = SplitMix64(derive_seed(seed, i))
            w[name] = rng.uniform(-bound, bound, size=shape)
        return w


@dataclass
class PyramidFeatures:
    block3: np.ndarray
    block4: np.ndarray
    block5: np.ndarray


def pad_to_32(image):
    """Replicate-pad right and bottom edges up to multiples of 32.

    Returns the padded tensor and the original ``(H, W)``.
    """
    image = as_tensor(image)
    h, w = image.shape[:2]
    ph = -h % 32
    pw = -w % 32
    if ph or pw:
        image = np.pad(image, ((0, ph), (0, pw), (0, 0)), mode="edge")
    return image, (h, w)


def encode(image, weights):
    image = as_tensor(image, dtype=np.float32)
    h, w, c = image.shape
    if h % 32 or w % 32:
        raise DimensionError(f"encoder input must be a multiple of 32, got {h}x{w}")
    if c == 1:
        image = np.repeat(image, 3, axis=2)
    elif c != IN_CHANNELS:
        raise ParameterError(f"encoder takes 1 or 3 channels, got {c}")
    x = image
    blocks = []
    for i in range(1, len(BLOCK_DEPTHS) + 1):
        x = maxpool2(relu(conv2d(x, weights.conv(f"enc{i}"))))
        blocks.append(x)
    return PyramidFeatures(blocks[2], blocks[3], blocks[4])


def fuse(pyr, weights):
    """1x1-project blocks 3-5 to 64 channels, upsample to block 3's grid, and sum."""
    h, w = pyr.block3.shape[:2]
    out = conv2d(pyr.block3, weights.conv("fuse3"))
    for name, feat in (("fuse4", pyr.block4), ("fuse5", pyr.block5)):
        out = out + bilinear_resize(conv2d(feat, weights.conv(name)), h, w)
    return out
