"""Deterministic generator of labeled synthetic document images.

Four layout archetypes are rendered from seeded primitives:

* letter: header block top-left, date line at the right, margined body text
  lines, signature squiggle. Never draws anything edge to edge.
* memo: dark title block, stacked header rules, to/from stubs, body lines.
* form: ruled grid whose horizontal lines span the full page width, plus
  vertical rules and short cell entries.
* email: key/value header rows, separator rule, body lines.

Text is rendered as dark dash runs with jittered baselines (no glyphs).
Every page gets a per-sample content translation and scale so raw pixel
positions are unstable across samples (a linear classifier on raw pixels
generalizes poorly while a convolutional model does not care). Pages are
near-white with additive Gaussian scan noise; every image is
bit-deterministic given (class, seed, size).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .augment import ConcreteTransform, apply_transform
from .imaging import ManifestRow, write_manifest, write_pgm

CLASSES = ("email", "form", "letter", "memo")
_CLASS_IDS = {name: i for i, name in enumerate(CLASSES)}


@dataclass(frozen=True)
class SynthSample:
    image: np.ndarray  # (H, W) float32 in [0, 1]
    label: str
    seed: int


class _Frame:
    """Per-sample content frame: fractional coordinates -> pixels through a
    random scale and translation, so layouts shift between samples."""

    def __init__(self, size: int, rng: np.random.Generator):
        self.size = size
        self.scale = float(rng.uniform(0.7, 1.05))
        margin = size // 8
        self.dy = int(rng.integers(-margin, margin + 1))
        self.dx = int(rng.integers(-margin, margin + 1))

    def y(self, frac: float) -> int:
        return int(frac * self.scale * self.size) + self.dy

    def x(self, frac: float) -> int:
        return int(frac * self.scale * self.size) + self.dx

    def length(self, frac: float) -> int:
        return max(1, int(frac * self.scale * self.size))


def _ink(img, y0, y1, x0, x1, value):
    h, w = img.shape
    y0, y1 = max(0, y0), min(h, y1)
    x0, x1 = max(0, x0), min(w, x1)
    if y0 < y1 and x0 < x1:
        img[y0:y1, x0:x1] = np.minimum(img[y0:y1, x0:x1], value)


def _dash_line(img, rng, y, x0, x1, thickness, max_value=0.35):
    """One text line: dark dash runs with word gaps, jittered baseline."""
    size = img.shape[1]
    x = x0
    while x < x1:
        run = int(rng.integers(max(2, size // 32), max(3, size // 10)))
        gap = int(rng.integers(max(1, size // 64), max(2, size // 24)))
        yy = y + int(rng.integers(-1, 2))
        value = float(rng.uniform(0.05, max_value))
        _ink(img, yy, yy + thickness, x, min(x + run, x1), value)
        x += run + gap


def _body_lines(img, rng, y0, y1, x0, x1, spacing, thickness):
    y = y0
    while y < y1:
        end = x1 if rng.random() > 0.25 else int(x0 + (x1 - x0) * rng.uniform(0.4, 0.9))
        _dash_line(img, rng, y, x0, end, thickness)
        y += spacing + int(rng.integers(0, 2))
        if rng.random() < 0.12:  # paragraph break
            y += spacing


def _render_letter(img, rng, fr, thick):
    left, right = fr.x(0.14), fr.x(0.8)
    # sender block
    for i in range(int(rng.integers(2, 4))):
        y = fr.y(0.05) + i * max(thick + 1, fr.length(0.035))
        _dash_line(img, rng, y, left, left + fr.length(rng.uniform(0.18, 0.32)),
                   thick)
    # date line on the right
    _dash_line(img, rng, fr.y(0.2), right - fr.length(0.2), right, thick)
    # body
    _body_lines(img, rng, fr.y(0.3), fr.y(0.76), left, right,
                max(thick + 1, fr.length(0.045)), thick)
    # signature squiggle
    y0 = fr.y(0.85)
    x0 = fr.x(rng.uniform(0.45, 0.55))
    xs = np.arange(x0, x0 + fr.length(0.2))
    ys = (y0 + np.round(np.sin((xs - x0) * rng.uniform(0.5, 0.9))
                        * rng.uniform(1.0, max(1.5, 0.02 * fr.size)))).astype(int)
    val = float(rng.uniform(0.05, 0.3))
    for x, y in zip(xs, ys):
        _ink(img, y, y + thick, x, x + 1, val)


def _render_memo(img, rng, fr, thick):
    left, right = fr.x(0.06), fr.x(0.88)
    # title block
    _ink(img, fr.y(0.04), fr.y(0.04) + max(2, fr.length(0.05)),
         fr.x(0.34), fr.x(0.6), float(rng.uniform(0.05, 0.2)))
    # stacked header rules
    y = fr.y(0.14)
    for _ in range(int(rng.integers(2, 4))):
        _ink(img, y, y + thick, left, right, float(rng.uniform(0.1, 0.3)))
        y += max(thick + 1, fr.length(0.045))
    # to / from stubs
    for i in range(2):
        yy = y + i * max(thick + 1, fr.length(0.04))
        _dash_line(img, rng, yy, left, left + fr.length(0.3), thick)
    # body
    _body_lines(img, rng, y + fr.length(0.12), fr.y(0.9), left, right,
                max(thick + 1, fr.length(0.05)), thick)


def _render_form(img, rng, fr, thick):
    # ruled grid: horizontal lines spanning the full width, edge to edge;
    # the grid is clamped on-page so every rule stays visible
    size = img.shape[0]
    n_rules = int(rng.integers(4, 8))
    ys = np.linspace(max(1, fr.y(0.1)), min(size - 2, fr.y(0.86)),
                     n_rules).astype(int)
    for y in ys:
        _ink(img, y, y + thick, 0, size, float(rng.uniform(0.05, 0.25)))
    # vertical rules between top and bottom lines
    for _ in range(int(rng.integers(2, 5))):
        x = fr.x(rng.uniform(0.08, 0.8))
        _ink(img, ys[0], ys[-1] + thick, x, x + thick,
             float(rng.uniform(0.05, 0.25)))
    # short cell entries
    for y0, y1 in zip(ys[:-1], ys[1:]):
        if rng.random() < 0.7 and y1 - y0 > thick + 2:
            x = fr.x(rng.uniform(0.05, 0.45))
            _dash_line(img, rng, (y0 + y1) // 2, x, x + fr.length(0.25), thick)
    # header snippet
    _dash_line(img, rng, fr.y(0.04), fr.x(0.28), fr.x(0.6), thick)


def _render_email(img, rng, fr, thick):
    left, right = fr.x(0.08), fr.x(0.84)
    # key/value header rows
    y = fr.y(0.06)
    for _ in range(int(rng.integers(3, 5))):
        key_w = fr.length(rng.uniform(0.08, 0.14))
        _ink(img, y, y + thick, left, left + key_w,
             float(rng.uniform(0.05, 0.2)))
        _dash_line(img, rng, y, left + key_w + max(2, fr.size // 32),
                   left + fr.length(rng.uniform(0.45, 0.65)), thick)
        y += max(thick + 1, fr.length(0.045))
    # separator rule
    _ink(img, y + 1, y + 1 + thick, left, right, float(rng.uniform(0.1, 0.3)))
    # body
    _body_lines(img, rng, y + max(3, fr.length(0.06)), fr.y(0.92), left, right,
                max(thick + 1, fr.length(0.045)), thick)


_RENDERERS = {
    "letter": _render_letter,
    "memo": _render_memo,
    "form": _render_form,
    "email": _render_email,
}


def generate_sample(cls: str, seed: int, size: int) -> SynthSample:
    """Render one page. Bit-deterministic per (class, seed, size)."""
    if cls not in _RENDERERS:
        raise ValueError(f"unknown document class {cls!r}, expected one of {CLASSES}")
    if size < 32:
        raise ValueError(f"size must be >= 32, got {size}")
    rng = np.random.default_rng([_CLASS_IDS[cls], seed, size])
    img = np.full((size, size), float(rng.uniform(0.93, 0.98)), dtype=np.float64)
    frame = _Frame(size, rng)
    thick = max(1, size // 100)
    _RENDERERS[cls](img, rng, frame, thick)
    if cls != "form":
        # scan skew: forms keep axis-aligned rules, the text classes get a
        # small page shear so their layouts are not pixel-aligned
        theta = float(rng.uniform(-4.0, 4.0))
        axis = "horizontal" if rng.integers(2) == 0 else "vertical"
        img = apply_transform(img[None],
                              ConcreteTransform("shear", {"theta": theta,
                                                          "axis": axis}))[0]
    noise = rng.normal(0.0, rng.uniform(0.005, 0.02), img.shape)
    img = np.clip(img + noise, 0.0, 1.0)
    return SynthSample(img.astype(np.float32), cls, seed)


def _sample_seed(base_seed: int, class_idx: int, index: int, n_per_class: int) -> int:
    # disjoint per-sample seed streams for any dataset below a million images
    return (base_seed * 1_000_003 + class_idx * n_per_class + index) % (2 ** 63)


def generate_dataset(n_per_class: int, classes, seed: int, size: int,
                     out_dir: str) -> str:
    """Write n_per_class PGM images per class plus a manifest CSV with a
    stratified 8:1:1 train/val/test split. Returns the manifest path."""
    if n_per_class < 1:
        raise ValueError(f"need at least one sample per class, got {n_per_class}")
    classes = tuple(classes)
    os.makedirs(out_dir, exist_ok=True)
    n_holdout = n_per_class // 10
    rows = []
    for ci, cls in enumerate(classes):
        for i in range(n_per_class):
            sample = generate_sample(cls, _sample_seed(seed, ci, i, n_per_class), size)
            fname = f"{cls}_{i:04d}.pgm"
            write_pgm(os.path.join(out_dir, fname),
                      np.round(sample.image * 255.0).astype(np.uint8))
            if i < n_per_class - 2 * n_holdout:
                split = "train"
            elif i < n_per_class - n_holdout:
                split = "val"
            else:
                split = "test"
            rows.append(ManifestRow(fname, cls, split))
    manifest_path = os.path.join(out_dir, "manifest.csv")
    write_manifest(manifest_path, rows)
    return manifest_path
