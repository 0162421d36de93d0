"""Dataset loading and the preprocessing pipeline shared by training and
evaluation.

Per sample the pipeline runs: aspect-ratio policy (resize to the target
size) -> representation stack -> augmentation transform (train / multi-view
only) -> per-channel mean subtraction. Channel means come from the training
split only, computed once at the nominal input size with no augmentation.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import augment, imaging


@dataclass(frozen=True)
class DatasetItem:
    path: str
    label: str
    label_index: int
    split: str


@dataclass
class Dataset:
    """Manifest-backed dataset with class names mapped to indices by sorted
    unique label order (deterministic given the manifest)."""

    classes: tuple
    items: dict = field(default_factory=dict)  # split -> list[DatasetItem]

    def split(self, name: str):
        return self.items.get(name, [])

    @property
    def num_classes(self) -> int:
        return len(self.classes)


def load_dataset(manifest_path: str) -> Dataset:
    rows = imaging.read_manifest(manifest_path)
    if not rows:
        raise ValueError(f"manifest {manifest_path} is empty")
    base = os.path.dirname(os.path.abspath(manifest_path))
    classes = tuple(sorted({r.label for r in rows}))
    index = {c: i for i, c in enumerate(classes)}
    ds = Dataset(classes=classes)
    for r in rows:
        path = r.path if os.path.isabs(r.path) else os.path.join(base, r.path)
        ds.items.setdefault(r.split, []).append(
            DatasetItem(path, r.label, index[r.label], r.split))
    return ds


class Pipeline:
    """Deterministic image preparation bound to one experiment setup."""

    def __init__(self, rep_spec: imaging.RepresentationSpec,
                 ar_policy: augment.ARPolicy, target_size: int,
                 channel_means: np.ndarray | None = None):
        self.rep_spec = rep_spec
        self.ar_policy = ar_policy
        self.target_size = int(target_size)
        self.channel_means = None if channel_means is None \
            else np.asarray(channel_means, dtype=np.float32)
        self._cache: dict = {}

    def load_raw(self, path: str) -> np.ndarray:
        cached = self._cache.get(path)
        if cached is None:
            cached = imaging.read_image(path).to_float()
            self._cache[path] = cached
        return cached

    def represent(self, path: str, size: int | None = None,
                  view_index: int | None = None) -> np.ndarray:
        """AR policy + representation stack for one image, un-normalized.

        view_index selects among crop3 outputs (None -> middle crop); the
        single-output policies ignore it.
        """
        raw = self.load_raw(path)
        target = self.target_size if size is None else int(size)
        views = augment.apply_ar_policy(raw, self.ar_policy, (target, target))
        if len(views) == 1:
            img = views[0]
        else:
            img = views[len(views) // 2 if view_index is None else view_index]
        return imaging.stack_representations(img, self.rep_spec, original=raw)

    def represent_all_crops(self, path: str, size: int | None = None):
        raw = self.load_raw(path)
        target = self.target_size if size is None else int(size)
        views = augment.apply_ar_policy(raw, self.ar_policy, (target, target))
        return [imaging.stack_representations(v, self.rep_spec, original=raw)
                for v in views]

    def compute_channel_means(self, items) -> np.ndarray:
        """Per-channel means over a training split, at the nominal size,
        without augmentation. Deterministic given item order."""
        if not items:
            raise ValueError("cannot compute channel means of an empty split")
        total = None
        count = 0
        for item in items:
            x = self.represent(item.path).astype(np.float64)
            s = x.sum(axis=(1, 2))
            total = s if total is None else total + s
            count += x.shape[1] * x.shape[2]
        return (total / count).astype(np.float32)

    def set_channel_means(self, means: np.ndarray):
        self.channel_means = np.asarray(means, dtype=np.float32)

    def finalize(self, x: np.ndarray) -> np.ndarray:
        if self.channel_means is None:
            raise ValueError("channel means not set; call compute_channel_means")
        return imaging.normalize(x, self.channel_means)

    def train_example(self, item: DatasetItem, rng: np.random.Generator,
                      transform_spec: augment.TransformSpec | None = None,
                      size: int | None = None) -> np.ndarray:
        """One augmented training input: policy (random crop for crop3) ->
        representation -> sampled transform -> mean subtraction."""
        view_index = None
        if self.ar_policy.mode == "crop3":
            view_index = int(rng.integers(3))
        x = self.represent(item.path, size=size, view_index=view_index)
        if transform_spec is not None and transform_spec.kind != "none":
            t = augment.sample_transform(transform_spec, rng)
            x = augment.apply_transform(x, t)
        return self.finalize(x)

    def eval_example(self, item: DatasetItem, size: int | None = None,
                     view: augment.ConcreteTransform | None = None) -> np.ndarray:
        x = self.represent(item.path, size=size)
        if view is not None and view.kind != "none":
            x = augment.apply_transform(x, view)
        return self.finalize(x)
