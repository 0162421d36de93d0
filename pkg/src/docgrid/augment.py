"""Label-preserving image transforms, aspect-ratio policies, and view sets
for multi-view / multi-scale testing.

A TransformSpec describes a parameterized family (shear with an angle range,
blur with a sigma range, ...). sample_transform draws one ConcreteTransform
from it; apply_transform is a pure function of (image, ConcreteTransform),
so reapplying the same transform is bit-deterministic (stochastic kinds
carry their realized noise seed).

Geometric kinds use inverse mapping with bilinear interpolation; samples
falling outside the source are filled with white (1.0), since documents have
white margins. All outputs stay in [0, 1].
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .imaging import resize_bilinear

TRANSFORM_KINDS = ("none", "color_jitter", "crop", "elastic", "gaussian_blur",
                   "gaussian_noise", "mirror", "perspective", "rotation",
                   "salt_pepper", "shear")

FILL_VALUE = 1.0


@dataclass(frozen=True)
class TransformSpec:
    """One transform family with its sampling ranges.

    Defaults: shear/rotation +-10 degrees, crop fraction 0.9, perspective
    corner jitter 5% of the side, elastic sigma 4 px / alpha 8 px, blur sigma
    in [0.5, 1.5] px, Gaussian noise sigma 0.02, salt/pepper rate 2%, jitter
    +-10% brightness/contrast. All tunable per experiment config.
    """

    kind: str = "none"
    theta_range: tuple = (-10.0, 10.0)   # degrees; shear and rotation
    axis: str = "both"                   # shear: horizontal | vertical | both
    crop_fraction: float = 0.9
    corner_jitter: float = 0.05
    elastic_sigma: float = 4.0
    elastic_alpha: float = 8.0
    blur_sigma_range: tuple = (0.5, 1.5)
    noise_sigma: float = 0.02
    sp_rate: float = 0.02
    jitter_brightness: float = 0.1
    jitter_contrast: float = 0.1

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        object.__setattr__(self, "theta_range", tuple(self.theta_range))
        object.__setattr__(self, "blur_sigma_range", tuple(self.blur_sigma_range))
        lo, hi = self.theta_range
        if lo > hi:
            raise ValueError(f"empty angle range {self.theta_range}")
        if self.kind in ("shear", "rotation") and max(abs(lo), abs(hi)) > 45.0:
            raise ValueError(
                f"{self.kind} angles limited to +-45 degrees, got {self.theta_range}")
        if self.axis not in ("horizontal", "vertical", "both"):
            raise ValueError(f"bad shear axis {self.axis!r}")
        if not 0.0 < self.crop_fraction <= 1.0:
            raise ValueError(f"crop fraction must be in (0, 1], got {self.crop_fraction}")
        if self.blur_sigma_range[0] > self.blur_sigma_range[1] \
                or self.blur_sigma_range[0] < 0:
            raise ValueError(f"bad blur sigma range {self.blur_sigma_range}")
        for name in ("corner_jitter", "elastic_sigma", "elastic_alpha",
                     "noise_sigma", "jitter_brightness", "jitter_contrast"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.sp_rate <= 1.0:
            raise ValueError(f"salt/pepper rate must be in [0, 1], got {self.sp_rate}")


@dataclass(frozen=True)
class ConcreteTransform:
    """A fully sampled transform instance; applying it is deterministic."""

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0  # realization seed for noise / elastic displacement fields

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")


IDENTITY_TRANSFORM = ConcreteTransform("none")


def sample_transform(spec: TransformSpec, rng: np.random.Generator) -> ConcreteTransform:
    """Draw one ConcreteTransform, parameters uniform over the spec ranges."""
    k = spec.kind
    if k == "none":
        return IDENTITY_TRANSFORM
    if k == "shear":
        theta = float(rng.uniform(*spec.theta_range))
        axis = spec.axis
        if axis == "both":
            axis = "horizontal" if rng.integers(2) == 0 else "vertical"
        return ConcreteTransform(k, {"theta": theta, "axis": axis})
    if k == "rotation":
        return ConcreteTransform(k, {"theta": float(rng.uniform(*spec.theta_range))})
    if k == "crop":
        return ConcreteTransform(k, {"fraction": spec.crop_fraction,
                                     "off_y": float(rng.random()),
                                     "off_x": float(rng.random())})
    if k == "perspective":
        j = spec.corner_jitter
        offs = rng.uniform(-j, j, size=8)
        return ConcreteTransform(k, {f"d{i}": float(v) for i, v in enumerate(offs)})
    if k == "elastic":
        return ConcreteTransform(k, {"sigma": spec.elastic_sigma,
                                     "alpha": spec.elastic_alpha},
                                 seed=int(rng.integers(2 ** 31)))
    if k == "gaussian_blur":
        return ConcreteTransform(k, {"sigma": float(rng.uniform(*spec.blur_sigma_range))})
    if k == "gaussian_noise":
        return ConcreteTransform(k, {"sigma": spec.noise_sigma},
                                 seed=int(rng.integers(2 ** 31)))
    if k == "salt_pepper":
        return ConcreteTransform(k, {"rate": spec.sp_rate},
                                 seed=int(rng.integers(2 ** 31)))
    if k == "mirror":
        return ConcreteTransform(k, {"apply": int(rng.integers(2))})
    if k == "color_jitter":
        return ConcreteTransform(k, {
            "brightness": float(rng.uniform(-spec.jitter_brightness,
                                            spec.jitter_brightness)),
            "contrast": float(1.0 + rng.uniform(-spec.jitter_contrast,
                                                spec.jitter_contrast)),
        })
    raise ValueError(f"unhandled transform kind {k!r}")


# ---------------------------------------------------------------------------
# Inverse-mapped warps


def _bilinear_sample(img: np.ndarray, sy: np.ndarray, sx: np.ndarray,
                     fill: float = FILL_VALUE) -> np.ndarray:
    """Sample img (C, H, W) at float coords (sy, sx) shaped (H', W');
    out-of-bounds contributions take the fill value."""
    c, h, w = img.shape
    padded = np.full((c, h + 2, w + 2), fill, dtype=img.dtype)
    padded[:, 1:-1, 1:-1] = img
    y0 = np.floor(sy)
    x0 = np.floor(sx)
    fy = (sy - y0).astype(img.dtype)
    fx = (sx - x0).astype(img.dtype)
    # shift into the padded frame; anything beyond 1 px outside clamps to fill
    iy0 = np.clip(y0.astype(np.int64) + 1, 0, h + 1)
    ix0 = np.clip(x0.astype(np.int64) + 1, 0, w + 1)
    iy1 = np.clip(iy0 + 1, 0, h + 1)
    ix1 = np.clip(ix0 + 1, 0, w + 1)
    far = (sy < -1) | (sy > h) | (sx < -1) | (sx > w)
    tl = padded[:, iy0, ix0]
    tr = padded[:, iy0, ix1]
    bl = padded[:, iy1, ix0]
    br = padded[:, iy1, ix1]
    out = (tl * (1 - fy) * (1 - fx) + tr * (1 - fy) * fx
           + bl * fy * (1 - fx) + br * fy * fx)
    out[:, far] = fill
    return out


def _warp(img: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    return _bilinear_sample(img, sy, sx).astype(img.dtype)


def _grid(h: int, w: int):
    return np.meshgrid(np.arange(h, dtype=np.float64),
                       np.arange(w, dtype=np.float64), indexing="ij")


def _perspective_matrix(src_quad, dst_quad) -> np.ndarray:
    """Homography H mapping dst (x, y) -> src, from 4 point pairs."""
    a = []
    b = []
    for (xd, yd), (xs, ys) in zip(dst_quad, src_quad):
        a.append([xd, yd, 1, 0, 0, 0, -xd * xs, -yd * xs])
        b.append(xs)
        a.append([0, 0, 0, xd, yd, 1, -xd * ys, -yd * ys])
        b.append(ys)
    coeffs = np.linalg.solve(np.asarray(a, dtype=np.float64),
                             np.asarray(b, dtype=np.float64))
    return np.append(coeffs, 1.0).reshape(3, 3)


def apply_transform(img: np.ndarray, t: ConcreteTransform) -> np.ndarray:
    """Apply one ConcreteTransform to a (C, H, W) image in [0, 1]."""
    c, h, w = img.shape
    k = t.kind
    p = t.params
    if k == "none":
        return img.copy()

    if k == "mirror":
        return np.ascontiguousarray(img[:, :, ::-1]) if p.get("apply", 1) else img.copy()

    if k == "shear":
        theta = p["theta"]
        if theta == 0.0:
            return img.copy()
        tan = math.tan(math.radians(theta))
        yy, xx = _grid(h, w)
        if p.get("axis", "horizontal") == "horizontal":
            # forward (x, y) -> (x + y*tan, y)
            return _warp(img, yy, xx - yy * tan)
        # forward (x, y) -> (x, y + x*tan)
        return _warp(img, yy - xx * tan, xx)

    if k == "rotation":
        theta = p["theta"]
        if theta == 0.0:
            return img.copy()
        rad = math.radians(theta)
        cos, sin = math.cos(rad), math.sin(rad)
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        yy, xx = _grid(h, w)
        dx, dy = xx - cx, yy - cy
        return _warp(img, -sin * dx + cos * dy + cy, cos * dx + sin * dy + cx)

    if k == "crop":
        fr = p["fraction"]
        if fr == 1.0:
            return img.copy()
        ch = max(1, int(round(fr * h)))
        cw = max(1, int(round(fr * w)))
        top = int(round(p.get("off_y", 0.5) * (h - ch)))
        left = int(round(p.get("off_x", 0.5) * (w - cw)))
        ys = top + (np.arange(h) + 0.5) * (ch / h) - 0.5
        xs = left + (np.arange(w) + 0.5) * (cw / w) - 0.5
        yy, xx = np.meshgrid(ys, xs, indexing="ij")
        return _warp(img, yy, xx)

    if k == "perspective":
        offs = [p.get(f"d{i}", 0.0) for i in range(8)]
        if all(v == 0.0 for v in offs):
            return img.copy()
        corners = [(0.0, 0.0), (w - 1.0, 0.0), (w - 1.0, h - 1.0), (0.0, h - 1.0)]
        src = [(x + offs[2 * i] * w, y + offs[2 * i + 1] * h)
               for i, (x, y) in enumerate(corners)]
        hm = _perspective_matrix(src, corners)
        yy, xx = _grid(h, w)
        denom = hm[2, 0] * xx + hm[2, 1] * yy + hm[2, 2]
        sx = (hm[0, 0] * xx + hm[0, 1] * yy + hm[0, 2]) / denom
        sy = (hm[1, 0] * xx + hm[1, 1] * yy + hm[1, 2]) / denom
        return _warp(img, sy, sx)

    if k == "elastic":
        alpha, sigma = p["alpha"], p["sigma"]
        if alpha == 0.0:
            return img.copy()
        rng = np.random.default_rng(t.seed)
        dy = gaussian_filter(rng.uniform(-1, 1, (h, w)), sigma, mode="reflect")
        dx = gaussian_filter(rng.uniform(-1, 1, (h, w)), sigma, mode="reflect")
        yy, xx = _grid(h, w)
        return _warp(img, yy + alpha * dy, xx + alpha * dx)

    if k == "gaussian_blur":
        sigma = p["sigma"]
        if sigma == 0.0:
            return img.copy()
        out = np.empty_like(img)
        for ch in range(c):
            out[ch] = gaussian_filter(img[ch], sigma, mode="reflect")
        return np.clip(out, 0.0, 1.0)

    if k == "gaussian_noise":
        sigma = p["sigma"]
        if sigma == 0.0:
            return img.copy()
        rng = np.random.default_rng(t.seed)
        noise = rng.normal(0.0, sigma, img.shape).astype(img.dtype)
        return np.clip(img + noise, 0.0, 1.0)

    if k == "salt_pepper":
        rate = p["rate"]
        if rate == 0.0:
            return img.copy()
        rng = np.random.default_rng(t.seed)
        u = rng.random(img.shape)
        out = img.copy()
        out[u < rate / 2] = 0.0
        out[u > 1.0 - rate / 2] = 1.0
        return out

    if k == "color_jitter":
        db = p.get("brightness", 0.0)
        fc = p.get("contrast", 1.0)
        if db == 0.0 and fc == 1.0:
            return img.copy()
        return np.clip((img - 0.5) * fc + 0.5 + db, 0.0, 1.0).astype(img.dtype)

    raise ValueError(f"unhandled transform kind {k!r}")


# ---------------------------------------------------------------------------
# Aspect-ratio policies

AR_MODES = ("warp", "pad", "crop3", "variable")


@dataclass(frozen=True)
class ARPolicy:
    """How an arbitrary-aspect image becomes network input.

    warp: resize to the target, ignoring aspect ratio. pad: aspect-preserving
    resize centered on a filled canvas. crop3: aspect-preserving resize of the
    short side, then start/middle/end crops along the long axis. variable:
    aspect-preserving resize to at most pixel_budget pixels (requires an SPP
    network downstream).
    """

    mode: str = "warp"
    pad_fill: float = 1.0
    pixel_budget: int | None = None

    def __post_init__(self):
        if self.mode not in AR_MODES:
            raise ValueError(f"unknown AR policy {self.mode!r}")
        if not 0.0 <= self.pad_fill <= 1.0:
            raise ValueError(f"pad fill must be in [0, 1], got {self.pad_fill}")
        if self.pixel_budget is not None and self.pixel_budget < 1:
            raise ValueError(f"pixel budget must be positive, got {self.pixel_budget}")


def apply_ar_policy(img: np.ndarray, policy: ARPolicy, target) -> list:
    """Return the list of policy outputs for one (C, H, W) image.
    target is (height, width); warp/pad/variable yield one image, crop3 three.
    """
    th, tw = (target, target) if np.isscalar(target) else target
    if th < 1 or tw < 1:
        raise ValueError(f"target size must be positive, got {(th, tw)}")
    c, h, w = img.shape

    if policy.mode == "warp":
        return [resize_bilinear(img, th, tw)]

    if policy.mode == "pad":
        scale = min(th / h, tw / w)
        nh = min(th, max(1, int(round(h * scale))))
        nw = min(tw, max(1, int(round(w * scale))))
        resized = resize_bilinear(img, nh, nw)
        canvas = np.full((c, th, tw), policy.pad_fill, dtype=img.dtype)
        y0 = (th - nh) // 2
        x0 = (tw - nw) // 2
        canvas[:, y0:y0 + nh, x0:x0 + nw] = resized
        return [canvas]

    if policy.mode == "crop3":
        if w / h >= tw / th:
            nh, nw = th, max(tw, int(round(w * th / h)))
            resized = resize_bilinear(img, nh, nw)
            span = nw - tw
            return [resized[:, :, o:o + tw].copy()
                    for o in (0, span // 2, span)]
        nh, nw = max(th, int(round(h * tw / w))), tw
        resized = resize_bilinear(img, nh, nw)
        span = nh - th
        return [resized[:, o:o + th, :].copy() for o in (0, span // 2, span)]

    # variable: aspect-preserving, at most `budget` pixels
    budget = policy.pixel_budget if policy.pixel_budget else th * tw
    scale = math.sqrt(budget / (h * w))
    nh = max(1, int(math.floor(h * scale)))
    nw = max(1, int(math.floor(w * scale)))
    while nh * nw > budget and max(nh, nw) > 1:
        if nh >= nw:
            nh -= 1
        else:
            nw -= 1
    return [resize_bilinear(img, nh, nw)]


# ---------------------------------------------------------------------------
# View sets and scale sampling


def make_views(image_id: str, spec: TransformSpec, n: int) -> list:
    """n ConcreteTransforms for multi-view testing: the first is the
    identity, the rest are drawn from spec with a seed derived from the
    image id, so the view set is reproducible per image."""
    if n < 1:
        raise ValueError(f"view count must be >= 1, got {n}")
    views = [IDENTITY_TRANSFORM]
    rng = np.random.default_rng(zlib.crc32(str(image_id).encode("utf-8")))
    for _ in range(n - 1):
        views.append(sample_transform(spec, rng))
    return views


def sample_scale(sizes, rng: np.random.Generator) -> int:
    """Uniform draw from a list of training input sizes."""
    sizes = list(sizes)
    if not sizes:
        raise ValueError("scale range must be non-empty")
    return int(sizes[int(rng.integers(len(sizes)))])
