"""Network introspection: receptive-field arithmetic, strongest-activating
input patches, backward reconstruction of single-neuron activations, and
per-filter mean response maps.

The reconstruction pass inverts the cached forward layer by layer: conv
layers run as transposed convolutions with the same weights, max-pool and
spp unpool through their recorded switches, ReLU rectifies the backward
signal, and normalization layers pass through as identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L
from . import network, ops
from .imaging import resize_bilinear, write_png


@dataclass(frozen=True)
class NeuronRef:
    """One channel of a conv layer, optionally pinned to a map position."""

    layer: str           # conv layer name, e.g. "conv5"
    channel: int
    position: tuple | None = None  # (row, col) on the layer's output map


@dataclass
class PatchRecord:
    image_id: str
    position: tuple        # (row, col) on the activation map
    activation: float
    rect: tuple            # (r0, c0, r1, c1) input rectangle, clamped
    patch: np.ndarray      # pixels cut from the (un-normalized) input


def _conv_index(spec: network.ArchSpec, name: str) -> int:
    for i, cfg in enumerate(spec.layers):
        if cfg.kind == "conv" and cfg.name == name:
            return i
    raise ValueError(f"no conv layer named {name!r} in {spec.conv_names()}")


def _activation_index(spec: network.ArchSpec, name: str) -> int:
    """Index of the layer whose output represents the named conv layer's
    activation: the relu directly after it when present."""
    i = _conv_index(spec, name)
    j = i + 1
    while j < len(spec.layers) and spec.layers[j].kind == "batchnorm":
        j += 1
    if j < len(spec.layers) and spec.layers[j].kind == "relu":
        return j
    return i


def receptive_field(spec: network.ArchSpec, layer: str | int,
                    position: tuple) -> tuple:
    """Input rectangle (r0, c0, r1, c1), inclusive, that can influence the
    activation at `position` of the named conv layer's output. Coordinates
    are pre-clamp: they may extend past the image into the padding."""
    upto = _activation_index(spec, layer) if isinstance(layer, str) else layer
    if not 0 <= upto < len(spec.layers):
        raise ValueError(f"layer index {upto} out of range")
    r0, c0 = position
    r1, c1 = position
    if r0 < 0 or c0 < 0:
        raise ValueError(f"position {position} out of range")
    for cfg in reversed(spec.layers[:upto + 1]):
        if cfg.kind == "conv":
            k, s, p = cfg.kernel, cfg.stride, cfg.pad
        elif cfg.kind == "maxpool":
            k, s, p = cfg.window, cfg.stride, 0
        else:
            if cfg.kind in ("fc", "spp", "softmax"):
                raise ValueError(
                    f"receptive field is only defined through conv/pool "
                    f"layers, found {cfg.kind!r}")
            continue
        r0, c0 = r0 * s - p, c0 * s - p
        r1, c1 = r1 * s - p + k - 1, c1 * s - p + k - 1
    return r0, c0, r1, c1


def clamp_rect(rect: tuple, height: int, width: int) -> tuple:
    r0, c0, r1, c1 = rect
    return (max(0, r0), max(0, c0), min(height - 1, r1), min(width - 1, c1))


def layer_activations(model: network.Model, x: np.ndarray,
                      layer: str) -> np.ndarray:
    """Eval-mode activation maps (N, C, h, w) of the named conv layer
    (post-ReLU when the layer has one)."""
    act_index = _activation_index(model.spec, layer)
    a = x
    for i, cfg in enumerate(model.spec.layers[:-1]):
        a, _ = _forward_one(model, cfg, a)
        if i == act_index:
            return a
    raise ValueError(f"layer {layer!r} not reached")


def _forward_one(model, cfg, a, mode="eval"):
    if cfg.kind == "conv":
        geom = ops.ConvGeometry(cfg.kernel, cfg.kernel, cfg.stride, cfg.pad)
        return ops.conv2d(a, model.params[f"{cfg.name}.w"],
                          model.params[f"{cfg.name}.b"], geom), (a, geom)
    if cfg.kind == "fc":
        a2 = a.reshape(a.shape[0], -1) if a.ndim == 4 else a
        return ops.matmul_affine(a2, model.params[f"{cfg.name}.w"],
                                 model.params[f"{cfg.name}.b"]), (a2, a.shape)
    if cfg.kind == "relu":
        return L.relu_forward(a)
    if cfg.kind == "maxpool":
        return L.maxpool_forward(a, cfg.window, cfg.stride)
    if cfg.kind == "lrn":
        return L.lrn_forward(a, cfg.lrn_n, cfg.lrn_k, cfg.lrn_alpha, cfg.lrn_beta)
    if cfg.kind == "dropout":
        return a, L.DropoutCache(None, cfg.keep_prob)
    if cfg.kind == "batchnorm":
        return L.batchnorm_forward(a, network._bn_state(model, cfg), "eval")
    if cfg.kind == "spp":
        return L.spp_forward(a, cfg.levels)
    raise ValueError(f"unexpected layer kind {cfg.kind!r}")


def top_k_patches(model: network.Model, items, pipeline, neuron: NeuronRef,
                  k: int = 9):
    """Globally strongest activations of one channel over a dataset, at most
    one record per image so a single document cannot fill the grid. Patches
    are cut from the un-normalized input at the receptive-field rectangle."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    best = []
    for item in items:
        display = pipeline.represent(item.path)
        x = pipeline.finalize(display)
        maps = layer_activations(model, x[None], neuron.layer)
        plane = maps[0, neuron.channel]
        pos = np.unravel_index(int(np.argmax(plane)), plane.shape)
        best.append((float(plane[pos]), item.path, pos, display))
    best.sort(key=lambda rec: -rec[0])
    records = []
    h, w = best[0][3].shape[1:]
    for activation, path, pos, display in best[:k]:
        rect = clamp_rect(
            receptive_field(model.spec, neuron.layer, pos), h, w)
        r0, c0, r1, c1 = rect
        records.append(PatchRecord(path, (int(pos[0]), int(pos[1])),
                                   activation, rect,
                                   display[:, r0:r1 + 1, c0:c1 + 1].copy()))
    return records


def forward_to_layer(model: network.Model, x: np.ndarray, layer: str):
    """Eval forward up to the named conv layer's activation. Returns
    (activation maps (1, C, h, w), per-layer caches, activation index)."""
    spec = model.spec
    act_index = _activation_index(spec, layer)
    a = x[None] if x.ndim == 3 else x
    caches = []
    for cfg in spec.layers[:act_index + 1]:
        a, cache = _forward_one(model, cfg, a)
        caches.append(cache)
    return a, caches, act_index


def deconv_backward(model: network.Model, caches, act_index: int,
                    seed: np.ndarray) -> np.ndarray:
    """Invert cached layers from a seed activation tensor back to input
    space: transposed conv with the same weights, unpooling via switches,
    rectification of the backward signal at relu, identity through
    normalization layers."""
    spec = model.spec
    r = seed
    for cfg, cache in zip(reversed(spec.layers[:act_index + 1]),
                          reversed(caches)):
        if cfg.kind == "conv":
            xin, geom = cache
            r, _, _ = ops.conv2d_grad(xin, model.params[f"{cfg.name}.w"],
                                      geom, r)
        elif cfg.kind == "maxpool":
            r = L.maxpool_backward(cache, r)
        elif cfg.kind == "spp":
            r = L.spp_backward(cache, r)
        elif cfg.kind == "relu":
            r = np.maximum(r, 0)  # rectify the backward signal
        elif cfg.kind in ("lrn", "batchnorm", "dropout"):
            pass  # identity in the reconstruction pass
        else:
            raise ValueError(
                f"cannot reconstruct through layer kind {cfg.kind!r}")
    return r


def deconv_visualize(model: network.Model, x: np.ndarray,
                     neuron: NeuronRef) -> np.ndarray:
    """Reconstruct, in input space, what drove one neuron's activation on
    one image (C, H, W). Requires a cached forward pass, which this runs.

    When neuron.position is None the channel's strongest activation is used.
    """
    if x.ndim != 3:
        raise ValueError(f"expected a (C, H, W) image, got {x.shape}")
    maps, caches, act_index = forward_to_layer(model, x, neuron.layer)
    if neuron.channel >= maps.shape[1]:
        raise ValueError(
            f"channel {neuron.channel} out of range for {maps.shape[1]}")
    plane = maps[0, neuron.channel]
    pos = neuron.position
    if pos is None:
        pos = np.unravel_index(int(np.argmax(plane)), plane.shape)
    seed = np.zeros_like(maps)
    seed[0, neuron.channel, pos[0], pos[1]] = plane[pos[0], pos[1]]
    return deconv_backward(model, caches, act_index, seed)[0]


def spatial_response_map(model: network.Model, images, layer: str) -> np.ndarray:
    """Elementwise mean of each filter's activation map over a dataset.
    images: iterable of preprocessed (C, H, W) inputs of equal size."""
    total = None
    count = 0
    for x in images:
        maps = layer_activations(model, x[None], layer)[0]
        total = maps.astype(np.float64) if total is None \
            else total + maps.astype(np.float64)
        count += 1
    if count == 0:
        raise ValueError("spatial_response_map needs at least one image")
    return (total / count).astype(np.float32)


# ---------------------------------------------------------------------------
# PNG grid emitters


def _to_display(img: np.ndarray) -> np.ndarray:
    """(C, H, W) -> (H, W) display plane: first channel, min-max scaled."""
    plane = img[0] if img.ndim == 3 else img
    lo, hi = float(plane.min()), float(plane.max())
    if hi > lo:
        plane = (plane - lo) / (hi - lo)
    else:
        plane = np.zeros_like(plane)
    return plane


def save_grid(tiles, path: str, columns: int = 3, cell: int = 64,
              gap: int = 2):
    """Write a grid of image tiles as one PNG (tiles resized to cell^2)."""
    tiles = list(tiles)
    if not tiles:
        raise ValueError("no tiles to save")
    rows = (len(tiles) + columns - 1) // columns
    canvas = np.full((rows * (cell + gap) - gap, columns * (cell + gap) - gap),
                     1.0, dtype=np.float32)
    for i, tile in enumerate(tiles):
        plane = _to_display(np.asarray(tile, dtype=np.float32))
        plane = resize_bilinear(plane[None], cell, cell)[0]
        rr = (i // columns) * (cell + gap)
        cc = (i % columns) * (cell + gap)
        canvas[rr:rr + cell, cc:cc + cell] = plane
    write_png(path, canvas)
    return path


def save_patch_grid(records, path: str, cell: int = 64):
    return save_grid([rec.patch for rec in records], path, columns=3, cell=cell)


def save_response_grid(maps: np.ndarray, path: str, count: int = 36,
                       cell: int = 48):
    return save_grid(list(maps[:count]), path, columns=6, cell=cell)


def write_patch_csv(records, path: str):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("image,row,col,activation,rect_r0,rect_c0,rect_r1,rect_c1\n")
        for rec in records:
            r0, c0, r1, c1 = rec.rect
            f.write(f"{rec.image_id},{rec.position[0]},{rec.position[1]},"
                    f"{rec.activation:.6f},{r0},{c0},{r1},{c1}\n")
