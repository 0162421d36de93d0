"""Single-view, multi-view, and multi-scale prediction plus accuracy and
confusion reporting.

Multi-view and multi-scale predictions are arithmetic means of post-softmax
probability vectors, so they stay on the probability simplex. Argmax ties
break toward the lowest class index.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import augment, network
from .data import Pipeline


@dataclass
class PredictionReport:
    paths: list
    labels: np.ndarray        # (N,) int true labels
    predictions: np.ndarray   # (N,) int argmax labels
    probabilities: np.ndarray  # (N, C)
    accuracy: float
    confusion: np.ndarray     # (C, C): [true, predicted]
    views_per_image: int


def predict(model: network.Model, image: np.ndarray) -> np.ndarray:
    """Eval-mode class probabilities for one preprocessed (C, H, W) image."""
    if image.ndim != 3:
        raise ValueError(f"expected a (C, H, W) image, got shape {image.shape}")
    return network.forward(model, image[None], mode="eval")[0]


def predict_multiview(model: network.Model, image: np.ndarray,
                      spec: augment.TransformSpec, n: int = 10,
                      image_id: str = "") -> np.ndarray:
    """Mean of the predictions on n views of the image (view 1 is the
    untransformed image; the rest are drawn from spec per make_views)."""
    views = augment.make_views(image_id, spec, n)
    probs = [predict(model, image if v.kind == "none"
                     else augment.apply_transform(image, v))
             for v in views]
    # float64 averaging keeps identity view sets bitwise equal to single-view
    return np.mean(probs, axis=0, dtype=np.float64).astype(probs[0].dtype)


def predict_multiscale(model: network.Model, pipeline: Pipeline, item,
                       sizes) -> np.ndarray:
    """Mean prediction across input sizes; requires an spp network."""
    if not model.spec.has_spp:
        raise ValueError("multi-scale prediction requires spp pooling")
    sizes = tuple(sizes)
    if not sizes:
        raise ValueError("sizes must be non-empty")
    probs = [predict(model, pipeline.eval_example(item, size=s)) for s in sizes]
    return np.mean(probs, axis=0, dtype=np.float64).astype(probs[0].dtype)


def aggregate_report(paths, labels, probabilities, num_classes: int,
                     views_per_image: int = 1) -> PredictionReport:
    """Build the report fields from per-image probability rows."""
    labels = np.asarray(labels, dtype=np.int64)
    probabilities = np.asarray(probabilities)
    if probabilities.ndim != 2 or probabilities.shape[0] != labels.shape[0]:
        raise ValueError("probabilities must be (N, C) matching labels")
    predictions = probabilities.argmax(axis=1)
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (labels, predictions), 1)
    accuracy = float(np.trace(confusion)) / len(labels)
    return PredictionReport(list(paths), labels, predictions, probabilities,
                            accuracy, confusion, views_per_image)


def evaluate(model: network.Model, items, pipeline: Pipeline,
             mode: str = "1x", views: int = 10,
             transform_spec: augment.TransformSpec | None = None,
             sizes=None) -> PredictionReport:
    """Predict every item of a labeled split and aggregate accuracy and the
    confusion matrix. mode: "1x", "10x" (multi-view), or "multiscale"."""
    items = list(items)
    if not items:
        raise ValueError("cannot evaluate an empty split")
    if mode not in ("1x", "10x", "multiscale"):
        raise ValueError(f"unknown evaluation mode {mode!r}")
    if mode == "multiscale":
        if not sizes:
            raise ValueError("multiscale evaluation needs sizes")
        if not model.spec.has_spp:
            raise ValueError("multiscale evaluation requires spp pooling")
    views_per_image = {"1x": 1, "10x": views, "multiscale": len(sizes or ())}[mode]
    paths, labels, rows = [], [], []
    tspec = transform_spec or augment.TransformSpec("none")
    for item in items:
        if mode == "multiscale":
            p = predict_multiscale(model, pipeline, item, sizes)
        elif mode == "10x":
            x = pipeline.eval_example(item)
            p = predict_multiview(model, x, tspec, n=views, image_id=item.path)
        elif pipeline.ar_policy.mode == "crop3":
            crops = [pipeline.finalize(c)
                     for c in pipeline.represent_all_crops(item.path)]
            p = np.mean([predict(model, c) for c in crops], axis=0,
                        dtype=np.float64).astype(np.float32)
        else:
            p = predict(model, pipeline.eval_example(item))
        paths.append(item.path)
        labels.append(item.label_index)
        rows.append(p)
    num_classes = model.spec.num_classes
    return aggregate_report(paths, labels, rows, num_classes, views_per_image)


def write_report(report: PredictionReport, out_dir: str, class_names=None):
    """Write per-image CSV, confusion CSV, and a summary text block."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "predictions.csv"), "w",
              encoding="utf-8", newline="\n") as f:
        f.write("path,label,pred,prob_max\n")
        for path, label, pred, probs in zip(report.paths, report.labels,
                                            report.predictions,
                                            report.probabilities):
            f.write(f"{path},{label},{pred},{probs[pred]:.6f}\n")
    with open(os.path.join(out_dir, "confusion.csv"), "w",
              encoding="utf-8", newline="\n") as f:
        for row in report.confusion:
            f.write(",".join(str(int(v)) for v in row) + "\n")
    lines = [
        f"images={len(report.paths)}",
        f"views_per_image={report.views_per_image}",
        f"accuracy={report.accuracy:.6f}",
    ]
    if class_names:
        per_class = report.confusion.diagonal() / \
            np.maximum(1, report.confusion.sum(axis=1))
        for name, acc in zip(class_names, per_class):
            lines.append(f"class_accuracy[{name}]={acc:.6f}")
    summary = "\n".join(lines) + "\n"
    with open(os.path.join(out_dir, "summary.txt"), "w",
              encoding="utf-8", newline="\n") as f:
        f.write(summary)
    return summary
