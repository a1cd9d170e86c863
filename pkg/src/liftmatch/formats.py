"""Binary PGM/PPM images, PFM float maps, LFW1 weight containers and JSON reports."""

import json
import math
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .normals import check_depth

WEIGHTS_MAGIC = b"LFW1"
REPORT_SCHEMA = 1


# ------------------------------------------------------------------ netpbm


def _read_token(data, pos):
    """Next whitespace-delimited header token, skipping ``#`` comments."""
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError(f"unexpected end of header at byte {start}")
    return data[start:pos], pos


def parse_netpbm(data):
    """Decode P5/P6 bytes into float32 H x W x 3 in [0, 1] (P5 replicated to 3 channels)."""
    magic, pos = _read_token(data, 0)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported image format {magic.decode(errors='replace')!r} at byte 0; expected P5 or P6")
    fields = []
    for name in ("width", "height", "maxval"):
        start = pos
        tok, pos = _read_token(data, pos)
        if not tok.isdigit():
            raise FormatError(f"bad {name} {tok!r} at byte {start}")
        fields.append(int(tok))
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval} at byte {pos}; only 255 is accepted")
    if w < 1 or h < 1:
        raise FormatError(f"image dimensions must be positive, got {w}x{h}")
    pos += 1  # single whitespace byte after maxval
    c = 1 if magic == b"P5" else 3
    need = w * h * c
    if len(data) - pos < need:
        raise FormatError(f"truncated pixel data at byte {len(data)}: need {need} bytes from byte {pos}")
    px = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos).reshape(h, w, c)
    img = px.astype(np.float32) / np.float32(255.0)
    return np.repeat(img, 3, axis=2) if c == 1 else img


def load_image(path):
    return parse_netpbm(Path(path).read_bytes())


def encode_netpbm(image):
    img = np.asarray(image)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w, c = img.shape
    if c not in (1, 3):
        raise FormatError(f"can only write 1- or 3-channel images, got {c}")
    if img.dtype != np.uint8:
        img = np.round(np.clip(img.astype(np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    magic = b"P5" if c == 1 else b"P6"
    return magic + f"\n{w} {h}\n255\n".encode() + img.tobytes()


def save_image(path, image):
    """Write P5 for single-channel input, P6 for RGB. Floats are taken as [0, 1]."""
    Path(path).write_bytes(encode_netpbm(image))


# ------------------------------------------------------------------ PFM


def parse_pfm(data):
    """Decode PFM bytes into float32 H x W x C, rows top-down."""
    magic, pos = _read_token(data, 0)
    if magic not in (b"Pf", b"PF"):
        raise FormatError(f"unsupported float map {magic.decode(errors='replace')!r} at byte 0; expected Pf or PF")
    toks = []
    for _ in range(3):
        start = pos
        tok, pos = _read_token(data, pos)
        toks.append((tok, start))
    try:
        w, h = int(toks[0][0]), int(toks[1][0])
        scale = float(toks[2][0])
    except ValueError:
        raise FormatError(f"malformed PFM header near byte {toks[0][1]}") from None
    if w < 1 or h < 1 or scale == 0 or not math.isfinite(scale):
        raise FormatError(f"invalid PFM header values ({w}x{h}, scale {scale})")
    pos += 1
    c = 1 if magic == b"Pf" else 3
    need = w * h * c * 4
    if len(data) - pos < need:
        raise FormatError(f"truncated PFM payload at byte {len(data)}: need {need} bytes from byte {pos}")
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(data, dtype=dtype, count=w * h * c, offset=pos).reshape(h, w, c)
    return np.ascontiguousarray(arr[::-1]).astype(np.float32)


def encode_pfm(array, little_endian=True):
    arr = np.asarray(array, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    if c not in (1, 3):
        raise FormatError(f"PFM holds 1 or 3 channels, got {c}")
    magic = "Pf" if c == 1 else "PF"
    scale = -1.0 if little_endian else 1.0
    body = arr[::-1].astype("<f4" if little_endian else ">f4").tobytes()
    return f"{magic}\n{w} {h}\n{scale}\n".encode() + body


def load_pfm(path):
    return parse_pfm(Path(path).read_bytes())


def save_pfm(path, array, little_endian=True):
    Path(path).write_bytes(encode_pfm(array, little_endian))


def load_depth(path):
    """Single-channel PFM depth; every value must be positive and finite."""
    arr = load_pfm(path)
    if arr.shape[2] != 1:
        raise FormatError(f"depth PFM must be single-channel ('Pf'), got {arr.shape[2]} channels")
    check_depth(arr)
    return arr


# ------------------------------------------------------------------ LFW1 weights


def weights_to_bytes(tensors):
    out = [WEIGHTS_MAGIC, struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(value, dtype="<f4")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def weights_from_bytes(data):
    """Parse an LFW1 container into an ordered ``{name: float32 array}``."""
    if data[:4] != WEIGHTS_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}; expected {WEIGHTS_MAGIC!r}")
    pos = 4

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"truncated container while reading {what} at byte {pos}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4, "tensor count"))
    tensors = {}
    for k in range(count):
        (nlen,) = struct.unpack("<H", take(2, f"name length of tensor #{k}"))
        try:
            name = take(nlen, f"name of tensor #{k}").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"tensor #{k} name is not valid UTF-8") from None
        if name in tensors:
            raise FormatError(f"duplicate tensor name {name!r}")
        (ndim,) = struct.unpack("<B", take(1, f"ndim of {name!r}"))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim, f"dims of {name!r}"))
        size = int(np.prod(dims)) if ndim else 1
        payload = take(4 * size, f"payload of tensor {name!r}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after last tensor")
    return tensors


def save_weights(path, tensors):
    Path(path).write_bytes(weights_to_bytes(tensors))


def load_weights(path):
    return weights_from_bytes(Path(path).read_bytes())


# ------------------------------------------------------------------ JSON reports


def to_jsonable(obj):
    """Plain JSON types; numpy scalars/arrays unwrapped, non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def dumps_report(report):
    return json.dumps(to_jsonable(report), allow_nan=False) + "\n"


def write_report(path, report):
    Path(path).write_text(dumps_report(report), encoding="utf-8")


def read_report(path):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None
    if isinstance(data, dict) and "schema" in data and data["schema"] != REPORT_SCHEMA:
        raise ValidationError(f"{path}: unsupported report schema {data['schema']!r}")
    return data
