"""Side-by-side match visualizations: green lines for correct matches, red for wrong ones."""

import numpy as np

GREEN = (0, 255, 0)
RED = (255, 0, 0)
KEYPOINT = (255, 255, 0)


def _to_rgb8(image):
    img = np.asarray(image)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    if img.dtype != np.uint8:
        img = np.round(np.clip(img.astype(np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    return img


def bresenham(x0, y0, x1, y1):
    """Integer pixels on the segment from (x0, y0) to (x1, y1), endpoints included."""
    pts = []
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        pts.append((x0, y0))
        if x0 == x1 and y0 == y1:
            return pts
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def _put(canvas, x, y, color):
    h, w = canvas.shape[:2]
    if 0 <= x < w and 0 <= y < h:
        canvas[y, x] = color


def render_matches(imageA, imageB, kpsA, kpsB, matches, correct):
    """Return a uint8 canvas ``[A | B]``; the shorter image is padded with black."""
    a, b = _to_rgb8(imageA), _to_rgb8(imageB)
    h = max(a.shape[0], b.shape[0])
    wa = a.shape[1]
    canvas = np.zeros((h, wa + b.shape[1], 3), dtype=np.uint8)
    canvas[: a.shape[0], :wa] = a
    canvas[: b.shape[0], wa:] = b
    pa = np.rint(np.asarray(kpsA, dtype=np.float64).reshape(-1, 2)).astype(int)
    pb = np.rint(np.asarray(kpsB, dtype=np.float64).reshape(-1, 2)).astype(int) + [wa, 0]
    for x, y in np.vstack([pa, pb]):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                _put(canvas, x + dx, y + dy, KEYPOINT)
    matches = np.asarray(matches, dtype=np.int64).reshape(-1, 2)
    correct = np.asarray(correct, dtype=bool).reshape(-1)
    for (i, j), ok in zip(matches, correct):
        color = GREEN if ok else RED
        for x, y in bresenham(*pa[i], *pb[j]):
            _put(canvas, x, y, color)
    return canvas
