"""Declarative network construction, parameter init, forward/backward
drivers, and checkpoint persistence.

An ArchSpec is a flat, ordered list of LayerConfigs (conv, batchnorm, relu,
lrn, maxpool, spp, fc, dropout, softmax). Builders produce the 5-conv/3-fc
family plus its edit axes: conv depth (drop conv3, then conv4, then conv5;
or insert copies of conv3 after conv3), width multipliers (whole-net or
conv-only / fc-only), and per-input-size geometry chosen so the final
convolutional map is always 6x6.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from . import ops

LAYER_KINDS = ("conv", "fc", "relu", "maxpool", "lrn", "dropout",
               "batchnorm", "spp", "softmax")


@dataclass(frozen=True)
class LayerConfig:
    kind: str
    name: str = ""
    out_channels: int = 0       # conv
    kernel: int = 0             # conv
    stride: int = 1             # conv / maxpool
    pad: int = 0                # conv
    units: int = 0              # fc
    window: int = 0             # maxpool
    lrn_n: int = 5
    lrn_k: float = 2.0
    lrn_alpha: float = 1e-4
    lrn_beta: float = 0.75
    keep_prob: float = 0.5      # dropout
    bn_eps: float = 1e-5
    bn_momentum: float = 0.9
    levels: tuple = ()          # spp

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "dropout" and not 0.0 < self.keep_prob <= 1.0:
            raise ValueError(f"keep probability must be in (0, 1], got {self.keep_prob}")
        if self.kind == "batchnorm" and self.bn_eps <= 0:
            raise ValueError(f"batchnorm eps must be positive, got {self.bn_eps}")
        if self.kind == "spp":
            if not self.levels or any(l < 1 for l in self.levels):
                raise ValueError(f"spp levels must be non-empty and >= 1, got {self.levels}")
        if self.kind == "conv" and (self.out_channels < 1 or self.kernel < 1):
            raise ValueError(f"conv layer {self.name!r} needs positive channels/kernel")
        if self.kind == "fc" and self.units < 1:
            raise ValueError(f"fc layer {self.name!r} needs positive units")

    _FIELDS_BY_KIND = {
        "conv": ("name", "out_channels", "kernel", "stride", "pad"),
        "fc": ("name", "units"),
        "relu": (),
        "maxpool": ("window", "stride"),
        "lrn": ("lrn_n", "lrn_k", "lrn_alpha", "lrn_beta"),
        "dropout": ("keep_prob",),
        "batchnorm": ("name", "bn_eps", "bn_momentum"),
        "spp": ("levels",),
        "softmax": (),
    }

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        for f in self._FIELDS_BY_KIND[self.kind]:
            v = getattr(self, f)
            d[f] = list(v) if isinstance(v, tuple) else v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerConfig":
        kw = dict(d)
        if "levels" in kw:
            kw["levels"] = tuple(kw["levels"])
        return cls(**kw)


@dataclass(frozen=True)
class ArchSpec:
    """Full network description: input shape, class count, ordered layers."""

    input_channels: int
    input_size: int
    num_classes: int
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def has_spp(self) -> bool:
        return any(l.kind == "spp" for l in self.layers)

    def conv_names(self):
        return [l.name for l in self.layers if l.kind == "conv"]

    def validate(self):
        if not self.layers or self.layers[-1].kind != "softmax":
            raise ValueError("network must end with a single softmax layer")
        if sum(1 for l in self.layers if l.kind == "softmax") != 1:
            raise ValueError("network must contain exactly one softmax layer")
        fcs = [l for l in self.layers if l.kind == "fc"]
        if not fcs or fcs[-1].units != self.num_classes:
            raise ValueError(
                f"final fc width must equal class count {self.num_classes}")
        propagate_shapes(self)  # raises on any degenerate intermediate shape
        return self

    def to_dict(self) -> dict:
        return {
            "input_channels": self.input_channels,
            "input_size": self.input_size,
            "num_classes": self.num_classes,
            "layers": [l.to_dict() for l in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(
            input_channels=d["input_channels"],
            input_size=d["input_size"],
            num_classes=d["num_classes"],
            layers=tuple(LayerConfig.from_dict(ld) for ld in d["layers"]),
        )

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def propagate_shapes(spec: ArchSpec, in_h: int | None = None,
                     in_w: int | None = None):
    """Walk the layer list and return one shape descriptor per layer:
    ("spatial", c, h, w) or ("flat", f). Raises ValueError if any
    intermediate spatial size collapses below 1.
    """
    h = spec.input_size if in_h is None else in_h
    w = spec.input_size if in_w is None else in_w
    c = spec.input_channels
    flat = None
    out = []
    for cfg in spec.layers:
        if cfg.kind == "conv":
            if flat is not None:
                raise ValueError(f"conv layer {cfg.name!r} after flattening")
            geom = ops.ConvGeometry(cfg.kernel, cfg.kernel, cfg.stride, cfg.pad)
            nh, nw = geom.out_size(h, w)
            if nh < 1 or nw < 1:
                raise ValueError(
                    f"layer {cfg.name!r} output collapses to {nh}x{nw} "
                    f"for input {h}x{w}")
            c, h, w = cfg.out_channels, nh, nw
        elif cfg.kind == "maxpool":
            if flat is not None:
                raise ValueError("maxpool after flattening")
            if cfg.window > h or cfg.window > w:
                raise ValueError(
                    f"pool window {cfg.window} exceeds map {h}x{w}")
            h = (h - cfg.window) // cfg.stride + 1
            w = (w - cfg.window) // cfg.stride + 1
            if h < 1 or w < 1:
                raise ValueError(f"pool output collapses to {h}x{w}")
        elif cfg.kind == "spp":
            if flat is not None:
                raise ValueError("spp after flattening")
            if min(h, w) < max(cfg.levels):
                raise ValueError(
                    f"map {h}x{w} smaller than pyramid level {max(cfg.levels)}")
            flat = L.spp_output_length(c, cfg.levels)
        elif cfg.kind == "fc":
            if flat is None:
                flat = c * h * w
            flat = cfg.units
        elif cfg.kind in ("relu", "lrn", "dropout", "batchnorm", "softmax"):
            pass
        out.append(("flat", flat) if flat is not None else ("spatial", c, h, w))
    return out


def param_shapes(spec: ArchSpec):
    """Parameter and statistics tensors in declaration order:
    yields (name, shape, kind) with kind in {"param", "stat"}."""
    shapes = propagate_shapes(spec)
    entries = []
    c = spec.input_channels
    flat = None
    prev = ("spatial", spec.input_channels, spec.input_size, spec.input_size)
    for cfg, shape in zip(spec.layers, shapes):
        if cfg.kind == "conv":
            in_c = prev[1]
            entries.append((f"{cfg.name}.w",
                            (cfg.out_channels, in_c, cfg.kernel, cfg.kernel),
                            "param"))
            entries.append((f"{cfg.name}.b", (cfg.out_channels,), "param"))
        elif cfg.kind == "fc":
            in_f = prev[1] if prev[0] == "flat" else prev[1] * prev[2] * prev[3]
            entries.append((f"{cfg.name}.w", (cfg.units, in_f), "param"))
            entries.append((f"{cfg.name}.b", (cfg.units,), "param"))
        elif cfg.kind == "batchnorm":
            ch = prev[1]
            entries.append((f"{cfg.name}.gamma", (ch,), "param"))
            entries.append((f"{cfg.name}.beta", (ch,), "param"))
            entries.append((f"{cfg.name}.rmean", (ch,), "stat"))
            entries.append((f"{cfg.name}.rvar", (ch,), "stat"))
        prev = shape
    return entries


@dataclass
class Model:
    spec: ArchSpec
    params: dict
    stats: dict

    def copy(self) -> "Model":
        return Model(self.spec,
                     {k: v.copy() for k, v in self.params.items()},
                     {k: v.copy() for k, v in self.stats.items()})


def init_params(spec: ArchSpec, seed: int) -> Model:
    """Fan-in-scaled Gaussian weights (std sqrt(2/fan_in)), zero biases,
    unit-gamma batchnorm. Deterministic given (spec, seed)."""
    spec.validate()
    rng = np.random.default_rng(seed)
    params, stats = {}, {}
    for name, shape, kind in param_shapes(spec):
        leaf = name.rsplit(".", 1)[1]
        if leaf == "w":
            fan_in = int(np.prod(shape[1:]))
            std = float(np.sqrt(2.0 / fan_in))
            params[name] = rng.standard_normal(shape, dtype=np.float32) * std
        elif leaf in ("b", "beta"):
            params[name] = np.zeros(shape, dtype=np.float32)
        elif leaf == "gamma":
            params[name] = np.ones(shape, dtype=np.float32)
        elif leaf == "rmean":
            stats[name] = np.zeros(shape, dtype=np.float32)
        elif leaf == "rvar":
            stats[name] = np.ones(shape, dtype=np.float32)
    return Model(spec, params, stats)


# ---------------------------------------------------------------------------
# Geometry table: per input size, the conv/pool parameters that land the
# final convolutional map on exactly 6x6. Kernel sizes and widths are
# non-decreasing in the input size. The table is a documented reconstruction
# and can be overridden by building ArchSpecs directly.

GEOMETRY = {
    #    conv1(k,s,p) pool1(w,s) conv2(k,p) pool2(w,s) pool3(w,s)  conv widths                fc widths
    32:  dict(conv1=(5, 1, 2), pool1=(3, 1), conv2=(3, 1), pool2=(3, 2), pool3=(3, 2),
              conv_widths=(32, 64, 96, 96, 64), fc_widths=(512, 512)),
    64:  dict(conv1=(5, 2, 2), pool1=(3, 1), conv2=(3, 1), pool2=(3, 2), pool3=(3, 2),
              conv_widths=(48, 96, 128, 128, 96), fc_widths=(1024, 1024)),
    100: dict(conv1=(7, 2, 3), pool1=(2, 2), conv2=(5, 2), pool2=(3, 2), pool3=(2, 2),
              conv_widths=(64, 128, 192, 192, 128), fc_widths=(2048, 2048)),
    150: dict(conv1=(7, 2, 3), pool1=(3, 2), conv2=(5, 2), pool2=(3, 2), pool3=(3, 3),
              conv_widths=(80, 192, 256, 256, 192), fc_widths=(3072, 3072)),
    227: dict(conv1=(11, 4, 0), pool1=(3, 2), conv2=(5, 2), pool2=(3, 2), pool3=(3, 2),
              conv_widths=(96, 256, 384, 384, 256), fc_widths=(4096, 4096)),
    256: dict(conv1=(11, 4, 1), pool1=(3, 2), conv2=(5, 2), pool2=(3, 2), pool3=(3, 2),
              conv_widths=(96, 256, 384, 384, 256), fc_widths=(4096, 4096)),
    320: dict(conv1=(11, 4, 1), pool1=(3, 2), conv2=(5, 2), pool2=(3, 2), pool3=(3, 3),
              conv_widths=(112, 288, 448, 448, 288), fc_widths=(4096, 4096)),
    384: dict(conv1=(13, 7, 7), pool1=(3, 2), conv2=(7, 3), pool2=(3, 2), pool3=(3, 2),
              conv_widths=(128, 320, 512, 512, 320), fc_widths=(4608, 4608)),
    512: dict(conv1=(17, 9, 0), pool1=(3, 2), conv2=(7, 3), pool2=(3, 2), pool3=(3, 2),
              conv_widths=(160, 384, 576, 576, 384), fc_widths=(4608, 4608)),
}

DEEP_KERNEL = 3  # conv3..conv5 are size-preserving 3x3 stride-1 pad-1


class UnsupportedSizeError(ValueError):
    pass


def _tail_lands_on_six(row: dict, a: int) -> bool:
    h = (a - row["pool1"][0]) // row["pool1"][1] + 1
    if h < 1:
        return False
    h = (h - row["pool2"][0]) // row["pool2"][1] + 1
    if h < 1:
        return False
    return (h - row["pool3"][0]) // row["pool3"][1] + 1 == 6


def geometry_for(n: int) -> dict:
    """Table row for input size n; for unlisted sizes, solve a conv1 geometry
    that reaches the nearest row's pooling tail. Raises UnsupportedSizeError
    when no solution exists."""
    if n in GEOMETRY:
        return GEOMETRY[n]
    base = GEOMETRY[min(GEOMETRY, key=lambda t: (abs(t - n), t))]
    targets = [a for a in range(6, n + 16) if _tail_lands_on_six(base, a)]
    for s in range(1, 13):
        for k in range(3, min(n, 31) + 1, 2):
            for p in range(0, k + 1):
                a = (n + 2 * p - k) // s + 1
                if a in targets and k <= n + 2 * p:
                    row = dict(base)
                    row["conv1"] = (k, s, p)
                    return row
    raise UnsupportedSizeError(f"no conv geometry found for input size {n}")


def conv_layer_names(conv_depth: int):
    """Names of the retained/inserted conv layers for a depth edit.

    Shallower nets drop conv3, then conv4, then conv5 (conv1/conv2 always
    stay); deeper nets insert copies of conv3 directly after conv3."""
    if conv_depth < 2:
        raise ValueError(f"conv depth must be >= 2, got {conv_depth}")
    base = ["conv1", "conv2", "conv3", "conv4", "conv5"]
    if conv_depth <= 5:
        dropped = {"conv3", "conv4", "conv5"}.intersection(
            ["conv3", "conv4", "conv5"][: 5 - conv_depth])
        return [nm for nm in base if nm not in dropped]
    inserts = [f"conv3_{i}" for i in range(2, conv_depth - 5 + 2)]
    return base[:3] + inserts + base[3:]


def _scale_width(w: int, factor: float) -> int:
    return max(1, int(np.floor(w * factor + 0.5)))


def build_alexnet(input_size: int, width_factor: float = 1.0,
                  conv_depth: int = 5, *, num_classes: int = 16,
                  input_channels: int = 1, use_lrn: bool = True,
                  use_bn: bool = False, use_dropout: bool = True,
                  spp_levels=None, conv_width_factor: float | None = None,
                  fc_width_factor: float | None = None,
                  keep_prob: float = 0.5) -> ArchSpec:
    """5-conv/3-fc network for the given input size, with depth/width edits.

    conv_width_factor / fc_width_factor override width_factor for their
    layer group. spp_levels, when given, replaces the final max-pool with a
    spatial pyramid pooling layer so the fc stack accepts variable map sizes.
    """
    if width_factor <= 0:
        raise ValueError(f"width factor must be positive, got {width_factor}")
    cf = width_factor if conv_width_factor is None else conv_width_factor
    ff = width_factor if fc_width_factor is None else fc_width_factor
    if cf <= 0 or ff <= 0:
        raise ValueError("width factors must be positive")
    row = geometry_for(input_size)
    base_w = dict(zip(("conv1", "conv2", "conv3", "conv4", "conv5"),
                      row["conv_widths"]))
    names = conv_layer_names(conv_depth)

    def conv_cfg(name: str) -> LayerConfig:
        base_name = "conv3" if name.startswith("conv3_") else name
        width = _scale_width(base_w[base_name], cf)
        if name == "conv1":
            k, s, p = row["conv1"]
        elif name == "conv2":
            k, p = row["conv2"]
            s = 1
        else:
            k, s, p = DEEP_KERNEL, 1, DEEP_KERNEL // 2
        return LayerConfig("conv", name=name, out_channels=width,
                           kernel=k, stride=s, pad=p)

    layer_list = []
    for name in names:
        layer_list.append(conv_cfg(name))
        if use_bn:
            layer_list.append(LayerConfig("batchnorm", name=f"{name}.bn"))
        layer_list.append(LayerConfig("relu"))
        if use_lrn and name in ("conv1", "conv2"):
            layer_list.append(LayerConfig("lrn"))
        if name == "conv1":
            w, s = row["pool1"]
            layer_list.append(LayerConfig("maxpool", window=w, stride=s))
        elif name == "conv2":
            w, s = row["pool2"]
            layer_list.append(LayerConfig("maxpool", window=w, stride=s))
    if spp_levels:
        layer_list.append(LayerConfig("spp", levels=tuple(spp_levels)))
    else:
        w, s = row["pool3"]
        layer_list.append(LayerConfig("maxpool", window=w, stride=s))
    for fc_name, base_units in zip(("fc6", "fc7"), row["fc_widths"]):
        layer_list.append(LayerConfig("fc", name=fc_name,
                                      units=_scale_width(base_units, ff)))
        if use_bn:
            layer_list.append(LayerConfig("batchnorm", name=f"{fc_name}.bn"))
        layer_list.append(LayerConfig("relu"))
        if use_dropout:
            layer_list.append(LayerConfig("dropout", keep_prob=keep_prob))
    layer_list.append(LayerConfig("fc", name="fc8", units=num_classes))
    layer_list.append(LayerConfig("softmax"))
    return ArchSpec(input_channels, input_size, num_classes,
                    tuple(layer_list)).validate()


def scale_for_input(n: int, **kwargs) -> ArchSpec:
    """Baseline depth-5, width-1.0 architecture sized for an n x n input;
    the final convolutional map is 6x6 for every supported size."""
    return build_alexnet(n, width_factor=1.0, conv_depth=5, **kwargs)


def final_conv_map(spec: ArchSpec) -> tuple:
    """(h, w) of the map feeding the fc stack (after the last pool/spp)."""
    shapes = propagate_shapes(spec)
    last = None
    for cfg, shape in zip(spec.layers, shapes):
        if shape[0] == "spatial":
            last = shape
        else:
            break
    return (last[2], last[3])


# ---------------------------------------------------------------------------
# Forward / backward drivers


def _bn_state(model: Model, cfg: LayerConfig) -> L.BatchNormState:
    return L.BatchNormState(
        gamma=model.params[f"{cfg.name}.gamma"],
        beta=model.params[f"{cfg.name}.beta"],
        running_mean=model.stats[f"{cfg.name}.rmean"],
        running_var=model.stats[f"{cfg.name}.rvar"],
        eps=cfg.bn_eps,
        momentum=cfg.bn_momentum,
    )


def forward_layers(model: Model, x: np.ndarray, mode: str = "eval",
                   rng: np.random.Generator | None = None):
    """Run every layer up to (excluding) the terminal softmax.
    Returns (logits, caches) with one cache entry per executed layer."""
    spec = model.spec
    if x.ndim != 4:
        raise ValueError(f"input must be NCHW, got shape {x.shape}")
    if x.shape[1] != spec.input_channels:
        raise ValueError(
            f"input has {x.shape[1]} channels, network expects "
            f"{spec.input_channels}")
    a = x
    caches = []
    for cfg in spec.layers[:-1]:
        if cfg.kind == "conv":
            geom = ops.ConvGeometry(cfg.kernel, cfg.kernel, cfg.stride, cfg.pad)
            w = model.params[f"{cfg.name}.w"]
            b = model.params[f"{cfg.name}.b"]
            cache = (a, geom)
            a = ops.conv2d(a, w, b, geom)
        elif cfg.kind == "fc":
            orig_shape = a.shape
            a2 = a.reshape(a.shape[0], -1) if a.ndim == 4 else a
            w = model.params[f"{cfg.name}.w"]
            if a2.shape[1] != w.shape[1]:
                raise ValueError(
                    f"layer {cfg.name!r} expects {w.shape[1]} inputs but got "
                    f"{a2.shape[1]}; fixed-size fc stacks require the nominal "
                    f"input size (use spp for variable sizes)")
            cache = (a2, orig_shape)
            a = ops.matmul_affine(a2, w, model.params[f"{cfg.name}.b"])
        elif cfg.kind == "relu":
            a, cache = L.relu_forward(a)
        elif cfg.kind == "maxpool":
            a, cache = L.maxpool_forward(a, cfg.window, cfg.stride)
        elif cfg.kind == "lrn":
            a, cache = L.lrn_forward(a, cfg.lrn_n, cfg.lrn_k,
                                     cfg.lrn_alpha, cfg.lrn_beta)
        elif cfg.kind == "dropout":
            a, cache = L.dropout_forward(a, cfg.keep_prob, mode, rng)
        elif cfg.kind == "batchnorm":
            a, cache = L.batchnorm_forward(a, _bn_state(model, cfg), mode)
        elif cfg.kind == "spp":
            a, cache = L.spp_forward(a, cfg.levels)
        else:
            raise ValueError(f"unexpected layer kind {cfg.kind!r}")
        caches.append(cache)
    return a, caches


def forward(model: Model, x: np.ndarray, mode: str = "eval",
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Class probabilities (N, num_classes) for a batch of images."""
    logits, _ = forward_layers(model, x, mode, rng)
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward_with_cache(model: Model, x: np.ndarray, mode: str = "eval",
                       rng: np.random.Generator | None = None):
    logits, caches = forward_layers(model, x, mode, rng)
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True), caches


def backward_layers(model: Model, caches, grad: np.ndarray):
    """Back-propagate grad (w.r.t. the logits) through all cached layers.
    Returns (grad_input, grads) with grads keyed like model.params."""
    spec = model.spec
    grads = {}
    g = grad
    for cfg, cache in zip(reversed(spec.layers[:-1]), reversed(caches)):
        if cfg.kind == "conv":
            a, geom = cache
            w = model.params[f"{cfg.name}.w"]
            g, gw, gb = ops.conv2d_grad(a, w, geom, g)
            grads[f"{cfg.name}.w"] = gw
            grads[f"{cfg.name}.b"] = gb
        elif cfg.kind == "fc":
            a2, orig_shape = cache
            w = model.params[f"{cfg.name}.w"]
            g, gw, gb = ops.matmul_affine_grad(a2, w, g)
            grads[f"{cfg.name}.w"] = gw
            grads[f"{cfg.name}.b"] = gb
            if len(orig_shape) == 4:
                g = g.reshape(orig_shape)
        elif cfg.kind == "relu":
            g = L.relu_backward(cache, g)
        elif cfg.kind == "maxpool":
            g = L.maxpool_backward(cache, g)
        elif cfg.kind == "lrn":
            g = L.lrn_backward(cache, g)
        elif cfg.kind == "dropout":
            g = L.dropout_backward(cache, g)
        elif cfg.kind == "batchnorm":
            g, ggamma, gbeta = L.batchnorm_backward(cache, g)
            grads[f"{cfg.name}.gamma"] = ggamma
            grads[f"{cfg.name}.beta"] = gbeta
        elif cfg.kind == "spp":
            g = L.spp_backward(cache, g)
    return g, grads


def loss_and_grads(model: Model, x: np.ndarray, labels,
                   mode: str = "train",
                   rng: np.random.Generator | None = None):
    """One forward/backward pass. Returns (mean loss, probs, grads)."""
    logits, caches = forward_layers(model, x, mode, rng)
    probs, loss = L.softmax_xent(logits, labels)
    g = L.softmax_xent_grad(probs, labels)
    _, grads = backward_layers(model, caches, g)
    return loss, probs, grads


# ---------------------------------------------------------------------------
# Checkpoints
#
# Layout: magic "DGRD", u16 version, then the payload (u32 header length +
# canonical-JSON header holding the ArchSpec and metadata, then each tensor
# in declaration order as a u64 element count + little-endian float32 data),
# then a u32 CRC32 of the payload.

CHECKPOINT_MAGIC = b"DGRD"
CHECKPOINT_VERSION = 1


class CheckpointFormatError(ValueError):
    pass


class CheckpointCorruptError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: Model
    meta: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION


def save_checkpoint(model: Model, path, meta: dict | None = None):
    header = {"arch": model.spec.to_dict(), "meta": meta or {}}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = bytearray(struct.pack("<I", len(blob)))
    payload += blob
    for name, shape, kind in param_shapes(model.spec):
        arr = (model.params if kind == "param" else model.stats)[name]
        if arr.shape != shape:
            raise ValueError(f"tensor {name} has shape {arr.shape}, expected {shape}")
        data = np.ascontiguousarray(arr, dtype="<f4")
        payload += struct.pack("<Q", data.size)
        payload += data.tobytes()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<H", CHECKPOINT_VERSION))
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(bytes(payload))))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 10:
        raise CheckpointCorruptError(f"checkpoint {path} is truncated")
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(
            f"bad checkpoint magic {raw[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    (version,) = struct.unpack("<H", raw[4:6])
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(
            f"unsupported checkpoint version {version}")
    payload = raw[6:-4]
    (crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(payload) != crc:
        raise CheckpointCorruptError(f"checkpoint {path} fails its checksum")
    off = 0
    try:
        (blob_len,) = struct.unpack_from("<I", payload, off)
        off += 4
        header = json.loads(payload[off:off + blob_len].decode("utf-8"))
        off += blob_len
        spec = ArchSpec.from_dict(header["arch"]).validate()
        params, stats = {}, {}
        for name, shape, kind in param_shapes(spec):
            (count,) = struct.unpack_from("<Q", payload, off)
            off += 8
            expected = int(np.prod(shape))
            if count != expected:
                raise CheckpointCorruptError(
                    f"tensor {name} has {count} elements, expected {expected}")
            arr = np.frombuffer(payload, dtype="<f4", count=count, offset=off)
            off += 4 * count
            arr = arr.reshape(shape).astype(np.float32)
            (params if kind == "param" else stats)[name] = arr
        if off != len(payload):
            raise CheckpointCorruptError(
                f"checkpoint {path} has {len(payload) - off} trailing bytes")
    except (struct.error, IndexError, KeyError, json.JSONDecodeError) as e:
        raise CheckpointCorruptError(f"checkpoint {path} is corrupt: {e}") from e
    return Checkpoint(Model(spec, params, stats), header.get("meta", {}), version)
