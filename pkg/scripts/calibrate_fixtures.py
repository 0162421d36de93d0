#!/usr/bin/env python3
"""One-off oracle runs that freeze the desk-scale training expectations.

Writes tests/fixtures/acceptance_baseline.json with the realized numbers:
- training sanity: depth-2/width-0.1 on the 4-class synthetic set, 3 seeds
- augmentation margin: shear vs none on an 80-image train split, 5 seeds
- multi-scale: spp net trained on sizes {48,64,96}, 3 seeds
- linear-classifier baseline on raw pixels vs the trained CNN
"""

import json
import os
import sys
import tempfile
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from docgrid import augment, imaging, inference, network, synthdoc, trainer
from docgrid.data import Pipeline, load_dataset

OUT = os.path.join(os.path.dirname(__file__), "..", "tests", "fixtures",
                   "acceptance_baseline.json")


def make_dataset(tmp):
    manifest = synthdoc.generate_dataset(100, synthdoc.CLASSES, 7, 64,
                                         os.path.join(tmp, "synth"))
    return load_dataset(manifest)


def build_model(seed, spp=None):
    spec = network.build_alexnet(64, 0.1, 2, num_classes=4, input_channels=1,
                                 spp_levels=spp)
    return network.init_params(spec, seed)


def run_training_sanity(ds):
    accs = []
    for seed in (0, 1, 2):
        cfg = trainer.TrainConfig(
            batch_size=32, total_updates=1000, base_lr=0.01, lr_step=150000,
            lr_decay=0.1, momentum=0.9, weight_decay=5e-4, seed=seed,
            transform=None, validation_interval=100)
        t0 = time.time()
        log, best = trainer.train(build_model(seed), ds, cfg)
        accs.append(best.meta["val_accuracy"])
        print(f"  sanity seed={seed} best={best.meta['val_accuracy']:.4f} "
              f"({time.time() - t0:.1f}s)")
    return accs


def run_aug_margin(ds):
    shear = augment.TransformSpec("shear", theta_range=(-10, 10), axis="both")
    results = {"shear": [], "none": []}
    for seed in range(5):
        for name, tf in (("shear", shear), ("none", None)):
            cfg = trainer.TrainConfig(
                batch_size=16, total_updates=400, base_lr=0.01,
                lr_step=150000, seed=seed, transform=tf,
                train_fraction=0.25, validation_interval=100)
            t0 = time.time()
            log, best = trainer.train(build_model(seed), ds, cfg)
            results[name].append(best.meta["val_accuracy"])
            print(f"  aug seed={seed} {name}={best.meta['val_accuracy']:.4f} "
                  f"({time.time() - t0:.1f}s)")
    return results


def run_multiscale(ds):
    sizes = (48, 64, 96)
    rows = []
    for seed in (0, 1, 2):
        cfg = trainer.TrainConfig(
            batch_size=16, total_updates=800, base_lr=0.01, lr_step=150000,
            seed=seed, transform=None, scale_sizes=sizes,
            validation_interval=100)
        model = build_model(seed, spp=(1, 2, 3))
        t0 = time.time()
        log, best = trainer.train_multiscale(model, ds, cfg)
        pipeline = Pipeline(cfg.representation, cfg.ar_policy, 64)
        pipeline.set_channel_means(np.asarray(best.meta["channel_means"]))
        test_items = ds.split("test")
        single = {}
        for s in sizes:
            correct = sum(
                int(np.argmax(inference.predict(
                    best.model, pipeline.eval_example(it, size=s)))) ==
                it.label_index
                for it in test_items)
            single[s] = correct / len(test_items)
        multi = inference.evaluate(best.model, test_items, pipeline,
                                   mode="multiscale", sizes=sizes).accuracy
        rows.append({"single": single, "multi": multi})
        print(f"  multiscale seed={seed} single={single} multi={multi:.4f} "
              f"({time.time() - t0:.1f}s)")
    return rows


def run_linear_baseline(ds):
    def pixels(items):
        xs, ys = [], []
        for it in items:
            xs.append(imaging.read_image(it.path).to_float().ravel())
            ys.append(it.label_index)
        return np.stack(xs), np.array(ys)

    xtr, ytr = pixels(ds.split("train"))
    xte, yte = pixels(ds.split("test"))
    onehot = np.eye(4)[ytr]
    aug_tr = np.hstack([xtr, np.ones((len(xtr), 1))])
    aug_te = np.hstack([xte, np.ones((len(xte), 1))])
    w, *_ = np.linalg.lstsq(aug_tr, onehot, rcond=None)
    acc = float((aug_te @ w).argmax(axis=1).__eq__(yte).mean())
    print(f"  linear baseline test accuracy={acc:.4f}")
    return acc


def run_cnn_test_accuracy(ds):
    cfg = trainer.TrainConfig(batch_size=32, total_updates=1000, base_lr=0.01,
                              lr_step=150000, seed=0, transform=None,
                              validation_interval=100)
    log, best = trainer.train(build_model(0), ds, cfg)
    pipeline = Pipeline(cfg.representation, cfg.ar_policy, 64)
    pipeline.set_channel_means(np.asarray(best.meta["channel_means"]))
    report = inference.evaluate(best.model, ds.split("test"), pipeline)
    print(f"  cnn test accuracy={report.accuracy:.4f}")
    return report.accuracy


def main():
    t0 = time.time()
    with tempfile.TemporaryDirectory() as tmp:
        ds = make_dataset(tmp)
        print("training sanity (3 seeds):")
        sanity = run_training_sanity(ds)
        print("augmentation margin (5 seeds x 2):")
        margin = run_aug_margin(ds)
        print("multi-scale (3 seeds):")
        multiscale = run_multiscale(ds)
        print("baselines:")
        linear = run_linear_baseline(ds)
        cnn = run_cnn_test_accuracy(ds)
    fixture = {
        "dataset": {"per_class": 100, "size": 64, "seed": 7},
        "training_sanity": {
            "updates": 1000, "batch_size": 32, "base_lr": 0.01,
            "seeds": [0, 1, 2], "val_accuracy": sanity,
            "median": float(np.median(sanity)),
        },
        "augmentation_margin": {
            "updates": 400, "batch_size": 16, "base_lr": 0.01,
            "train_fraction": 0.25, "seeds": [0, 1, 2, 3, 4],
            "shear": margin["shear"], "none": margin["none"],
            "median_shear": float(np.median(margin["shear"])),
            "median_none": float(np.median(margin["none"])),
        },
        "multiscale": {
            "updates": 800, "batch_size": 16, "base_lr": 0.01,
            "sizes": [48, 64, 96], "seeds": [0, 1, 2], "runs": multiscale,
        },
        "linear_vs_cnn": {"linear_test_accuracy": linear,
                          "cnn_test_accuracy": cnn},
    }
    os.makedirs(os.path.dirname(OUT), exist_ok=True)
    with open(OUT, "w") as f:
        json.dump(fixture, f, indent=2)
        f.write("\n")
    print(f"wrote {OUT} ({time.time() - t0:.0f}s total)")


if __name__ == "__main__":
    main()
