"""Image ingestion and input representations.

Images travel as float32 (C, H, W) arrays in [0, 1]. Five representations
can be stacked channel-wise: grayscale (G), RGB, HSV, Otsu binary (B), and
dense upright SURF descriptors (S). PGM/PPM is decoded natively to keep the
pixel path auditable; PNG goes through Pillow.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

REPRESENTATION_CODES = ("G", "RGB", "HSV", "B", "S")

# ITU-R 601 luma weights
_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


@dataclass
class RawImage:
    """8-bit image as decoded from disk: (H, W, C) samples, C in {1, 3}."""

    width: int
    height: int
    channels: int
    samples: np.ndarray

    def to_float(self) -> np.ndarray:
        """(C, H, W) float32 in [0, 1]."""
        arr = self.samples.astype(np.float32) / 255.0
        return np.ascontiguousarray(arr.transpose(2, 0, 1))


@dataclass(frozen=True)
class RepresentationSpec:
    """Ordered channel stack drawn from G / RGB / HSV / B / S."""

    channels: tuple = ("G",)
    surf_grid: int = 227

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if not self.channels:
            raise ValueError("representation needs at least one channel group")
        if len(set(self.channels)) != len(self.channels):
            raise ValueError(f"duplicate representation {self.channels}")
        for code in self.channels:
            if code not in REPRESENTATION_CODES:
                raise ValueError(
                    f"unknown representation {code!r}, expected one of "
                    f"{REPRESENTATION_CODES}")
        if self.surf_grid < 1:
            raise ValueError(f"surf grid must be positive, got {self.surf_grid}")

    @property
    def channel_count(self) -> int:
        return sum({"G": 1, "RGB": 3, "HSV": 3, "B": 1, "S": 64}[c]
                   for c in self.channels)


# ---------------------------------------------------------------------------
# File IO


def _read_netpbm(path: str) -> RawImage:
    with open(path, "rb") as f:
        data = f.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    magic = fields[0]
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported netpbm magic {magic!r}")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit netpbm supported, maxval={maxval}")
    channels = 1 if magic == b"P5" else 3
    count = width * height * channels
    try:
        pixels = np.frombuffer(data, dtype=np.uint8, count=count, offset=pos)
    except ValueError as e:
        raise ValueError(f"{path}: truncated pixel data") from e
    return RawImage(width, height, channels,
                    pixels.reshape(height, width, channels).copy())


def read_image(path: str) -> RawImage:
    ext = os.path.splitext(path)[1].lower()
    if ext in (".pgm", ".ppm"):
        return _read_netpbm(path)
    from PIL import Image

    with Image.open(path) as im:
        if im.mode in ("L", "1", "I;16", "I"):
            im = im.convert("L")
        else:
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return RawImage(arr.shape[1], arr.shape[0], arr.shape[2], arr)


def write_pgm(path: str, gray_u8: np.ndarray):
    gray_u8 = np.asarray(gray_u8, dtype=np.uint8)
    if gray_u8.ndim != 2:
        raise ValueError(f"write_pgm expects (H, W), got {gray_u8.shape}")
    h, w = gray_u8.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(gray_u8.tobytes())


def write_png(path: str, img: np.ndarray):
    """img: (H, W) or (H, W, 3) uint8, or float in [0, 1] (scaled to 8 bit)."""
    from PIL import Image

    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


# ---------------------------------------------------------------------------
# Resizing (bilinear, half-pixel centers; exact identity at equal size)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize (C, H, W) -> (C, out_h, out_w)."""
    c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys), 0, h - 1).astype(np.int64)
    x0 = np.clip(np.floor(xs), 0, w - 1).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0).astype(np.float32)
    fx = np.clip(xs - x0, 0.0, 1.0).astype(np.float32)
    top = img[:, y0][:, :, x0] * (1 - fx) + img[:, y0][:, :, x1] * fx
    bot = img[:, y1][:, :, x0] * (1 - fx) + img[:, y1][:, :, x1] * fx
    return (top * (1 - fy[None, :, None]) + bot * fy[None, :, None]).astype(img.dtype)


# ---------------------------------------------------------------------------
# Representations


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """(C, H, W) in [0,1] -> (1, H, W) luma (0.299 R + 0.587 G + 0.114 B);
    single-channel input passes through."""
    if img.shape[0] == 1:
        return img.copy()
    if img.shape[0] != 3:
        raise ValueError(f"expected 1 or 3 channels, got {img.shape[0]}")
    return np.tensordot(_LUMA, img, axes=(0, 0))[None].astype(img.dtype)


def rgb_to_hsv(img: np.ndarray) -> np.ndarray:
    """Hexcone RGB->HSV; all three output channels scaled to [0, 1]
    (hue stored as angle/360). Gray pixels get H = 0, S = 0."""
    if img.shape[0] != 3:
        raise ValueError(f"HSV conversion needs 3 channels, got {img.shape[0]}")
    r, g, b = img[0], img[1], img[2]
    mx = img.max(axis=0)
    mn = img.min(axis=0)
    delta = mx - mn
    safe = np.where(delta > 0, delta, 1).astype(img.dtype)
    h = np.zeros_like(mx)
    is_r = (mx == r) & (delta > 0)
    is_g = (mx == g) & (delta > 0) & ~is_r
    is_b = (delta > 0) & ~is_r & ~is_g
    h = np.where(is_r, ((g - b) / safe) % 6.0, h)
    h = np.where(is_g, (b - r) / safe + 2.0, h)
    h = np.where(is_b, (r - g) / safe + 4.0, h)
    h = h / 6.0
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1), 0.0)
    return np.stack([h, s, mx]).astype(img.dtype)


def otsu_threshold(gray_u8: np.ndarray) -> int:
    """Threshold in 0..255 maximizing inter-class variance of the 256-bin
    histogram; ties take the smallest threshold. A constant image gets 0."""
    hist = np.bincount(gray_u8.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    if np.count_nonzero(hist) <= 1:
        return 0
    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)
    sum0 = np.cumsum(hist * levels)
    w1 = total - w0
    mu_total = sum0[-1]
    valid = (w0 > 0) & (w1 > 0)
    mu0 = np.where(valid, sum0 / np.where(w0 > 0, w0, 1), 0.0)
    mu1 = np.where(valid, (mu_total - sum0) / np.where(w1 > 0, w1, 1), 0.0)
    objective = np.where(valid, w0 * w1 * (mu0 - mu1) ** 2, 0.0)
    return int(np.argmax(objective))


def otsu_binarize(img: np.ndarray) -> np.ndarray:
    """(C, H, W) in [0,1] -> (1, H, W) with values in {0, 1}: pixels above
    the Otsu threshold map to 1. Color input is converted to grayscale first.
    A constant image has no separating threshold and maps to all zeros."""
    gray = to_grayscale(img)[0]
    q = np.clip(np.round(gray * 255.0), 0, 255).astype(np.uint8)
    if np.count_nonzero(np.bincount(q.ravel(), minlength=256)) <= 1:
        return np.zeros((1,) + q.shape, dtype=np.float32)
    t = otsu_threshold(q)
    return (q > t)[None].astype(np.float32)


def integral_image(gray: np.ndarray) -> np.ndarray:
    """Summed-area table I(y, x) = sum of gray over rows <= y, cols <= x.
    Returned in float64 so box sums of large images stay exact."""
    if gray.ndim == 3 and gray.shape[0] == 1:
        gray = gray[0]
    if gray.ndim != 2:
        raise ValueError(f"integral image expects (H, W), got {gray.shape}")
    return gray.astype(np.float64).cumsum(axis=0).cumsum(axis=1)


def _padded_integral(gray: np.ndarray) -> np.ndarray:
    ii = np.zeros((gray.shape[0] + 1, gray.shape[1] + 1), dtype=np.float64)
    ii[1:, 1:] = integral_image(gray)
    return ii


def _box_sum(ii_pad, r0, c0, r1, c1):
    """Inclusive box sums [r0..r1] x [c0..c1] from a padded integral image;
    supports broadcast index arrays."""
    return (ii_pad[r1 + 1, c1 + 1] - ii_pad[r0, c1 + 1]
            - ii_pad[r1 + 1, c0] + ii_pad[r0, c0])


_SURF_SCALE = 2  # sampling scale s: 20s descriptor window, 2s Haar wavelets


def dense_surf_grid(img: np.ndarray, grid: int) -> np.ndarray:
    """Upright SURF descriptors on a grid x grid lattice over the full image.

    At each grid point a 20s x 20s window (s = 2) is split into a 4x4 grid of
    subregions; 5x5 Haar responses (dx, dy) per subregion are summed into
    (sum dx, sum |dx|, sum dy, sum |dy|), giving 64 values, L2-normalized per
    descriptor. Sample positions are clamped to keep wavelet support inside
    the image, so small images degrade gracefully instead of erroring.

    Returns (64, grid, grid) float32.
    """
    s = _SURF_SCALE
    gray = to_grayscale(img)[0]
    h, w = gray.shape
    ii = _padded_integral(gray)

    centers_y = np.round((np.arange(grid) + 0.5) * (h / grid) - 0.5).astype(np.int64)
    centers_x = np.round((np.arange(grid) + 0.5) * (w / grid) - 0.5).astype(np.int64)

    # 20x20 sample lattice (units of s) around each center
    offs = (np.arange(20) - 10) * s

    desc = np.empty((grid, grid, 16, 4), dtype=np.float64)
    # chunk over grid rows to bound the gather buffers
    chunk = max(1, 2_000_000 // (grid * 400))
    for g0 in range(0, grid, chunk):
        g1 = min(grid, g0 + chunk)
        py = centers_y[g0:g1, None, None, None] + offs[None, None, :, None]
        px = centers_x[None, :, None, None] + offs[None, None, None, :]
        py = np.clip(py, s, max(s, h - s))
        px = np.clip(px, s, max(s, w - s))
        rows_lo = py - s
        rows_hi = np.minimum(py + s - 1, h - 1)
        cols_lo = px - s
        cols_hi = np.minimum(px + s - 1, w - 1)
        # Haar responses: dx = right half - left half, dy = bottom - top
        left = _box_sum(ii, rows_lo, cols_lo, rows_hi, np.minimum(px - 1, w - 1))
        right = _box_sum(ii, rows_lo, np.minimum(px, w - 1), rows_hi, cols_hi)
        top = _box_sum(ii, rows_lo, cols_lo, np.minimum(py - 1, h - 1), cols_hi)
        bottom = _box_sum(ii, np.minimum(py, h - 1), cols_lo, rows_hi, cols_hi)
        gy = g1 - g0
        # subregions are 4x4 blocks of 5x5 samples
        dx = (right - left).reshape(gy, grid, 4, 5, 4, 5)
        dy = (bottom - top).reshape(gy, grid, 4, 5, 4, 5)
        for comp, vals in enumerate((dx, np.abs(dx), dy, np.abs(dy))):
            desc[g0:g1, :, :, comp] = vals.sum(axis=(3, 5)).reshape(gy, grid, 16)

    flat = desc.reshape(grid, grid, 64)
    norms = np.sqrt((flat ** 2).sum(axis=2, keepdims=True))
    flat = np.where(norms > 0, flat / np.where(norms > 0, norms, 1), 0.0)
    return np.ascontiguousarray(flat.transpose(2, 0, 1)).astype(np.float32)


def stack_representations(img: np.ndarray, spec: RepresentationSpec,
                          original: np.ndarray | None = None) -> np.ndarray:
    """Concatenate the requested representations of img (C, H, W) in spec
    order. SURF descriptors are computed from `original` (the un-resized
    image) when provided, per their contract, then resized to match img.
    """
    _, h, w = img.shape
    parts = []
    for code in spec.channels:
        if code == "G":
            parts.append(to_grayscale(img))
        elif code == "RGB":
            if img.shape[0] != 3:
                raise ValueError("RGB representation requires a color image")
            parts.append(img)
        elif code == "HSV":
            parts.append(rgb_to_hsv(img))
        elif code == "B":
            parts.append(otsu_binarize(img))
        elif code == "S":
            src = img if original is None else original
            d = dense_surf_grid(src, spec.surf_grid)
            if d.shape[1:] != (h, w):
                d = resize_bilinear(d, h, w)
            parts.append(d)
    return np.concatenate(parts, axis=0).astype(np.float32)


def normalize(tensor: np.ndarray, channel_means: np.ndarray) -> np.ndarray:
    """Subtract per-channel means (computed over the training split)."""
    channel_means = np.asarray(channel_means, dtype=tensor.dtype)
    c = tensor.shape[-3]
    if channel_means.shape != (c,):
        raise ValueError(
            f"got {channel_means.shape[0] if channel_means.ndim else 0} means "
            f"for {c} channels")
    shape = (c, 1, 1) if tensor.ndim == 3 else (1, c, 1, 1)
    return tensor - channel_means.reshape(shape)


# ---------------------------------------------------------------------------
# Dataset manifest: CSV with header path,label,split (UTF-8, LF endings)


@dataclass(frozen=True)
class ManifestRow:
    path: str
    label: str
    split: str


def write_manifest(path: str, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["path", "label", "split"])
        for r in rows:
            writer.writerow([r.path, r.label, r.split])


def read_manifest(path: str):
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["path", "label", "split"]:
            raise ValueError(
                f"{path}: manifest must start with 'path,label,split', "
                f"got {header}")
        for rec in reader:
            if not rec:
                continue
            if len(rec) != 3:
                raise ValueError(f"{path}: malformed manifest row {rec}")
            rows.append(ManifestRow(*rec))
    return rows
