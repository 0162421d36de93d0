"""Command-line operator surface.

Commands: gen-data, train, eval, augment-preview, introspect, arch-show.
Exit codes: 0 success, 2 usage or configuration error, 3 I/O error,
4 numeric divergence during training.

`--threads` (default from DOCGRID_THREADS, else 1) caps worker parallelism;
the current pipeline always runs the strict sequential path, which is the
bit-reproducible mode that `--threads 1` guarantees.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import augment, config as cfgmod, imaging, inference, introspect, network
from . import synthdoc, trainer
from .data import Pipeline, load_dataset


def _build_arch(cfg: cfgmod.ExperimentConfig, num_classes: int) -> network.ArchSpec:
    a = cfg.arch
    return network.build_alexnet(
        a.input_size, a.width_factor, a.conv_depth,
        num_classes=num_classes,
        input_channels=cfg.representation.channel_count,
        use_lrn=a.use_lrn, use_bn=a.use_bn, use_dropout=a.use_dropout,
        spp_levels=a.spp_levels,
        conv_width_factor=a.conv_width_factor,
        fc_width_factor=a.fc_width_factor)


def _pipeline_for(cfg: cfgmod.ExperimentConfig) -> Pipeline:
    return Pipeline(cfg.representation, cfg.aspect_ratio, cfg.arch.input_size)


def cmd_gen_data(args) -> int:
    classes = synthdoc.CLASSES[: args.classes]
    if args.classes > len(synthdoc.CLASSES):
        raise ValueError(
            f"at most {len(synthdoc.CLASSES)} document classes are available")
    manifest = synthdoc.generate_dataset(args.per_class, classes, args.seed,
                                         args.size, args.out)
    print(f"manifest={manifest}")
    return 0


def _train_config(cfg: cfgmod.ExperimentConfig) -> trainer.TrainConfig:
    t = cfg.train
    return trainer.TrainConfig(
        batch_size=t.batch_size, total_updates=t.total_updates,
        base_lr=t.base_lr, lr_step=t.lr_step, lr_decay=t.lr_decay,
        momentum=t.momentum, weight_decay=t.weight_decay, seed=cfg.seed,
        transform=cfg.transform, ar_policy=cfg.aspect_ratio,
        representation=cfg.representation, scale_sizes=t.scale_sizes,
        train_fraction=t.train_fraction,
        validation_interval=t.validation_interval)


def cmd_train(args) -> int:
    cfg = cfgmod.resolve_config(args.config)
    if args.seed is not None:
        cfg = cfgmod.config_from_dict(
            {**cfgmod.config_to_dict(cfg), "seed": args.seed})
    if args.dump_config:
        sys.stdout.write(cfgmod.dump_config(cfg))
        return 0
    dataset = load_dataset(cfg.manifest)
    spec = _build_arch(cfg, dataset.num_classes)
    model = network.init_params(spec, cfg.seed)
    tconf = _train_config(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)

    def progress(record: trainer.TrainRecord):
        print(f"update={record.update} loss={record.loss:.6f} "
              f"val_accuracy={record.val_accuracy:.6f}", flush=True)

    runner = trainer.train_multiscale if tconf.scale_sizes else trainer.train
    log, best = runner(model, dataset, tconf, progress=progress)
    best.meta["config"] = cfgmod.config_to_dict(cfg)
    best.meta["classes"] = list(dataset.classes)
    ckpt_path = os.path.join(cfg.out_dir, "best.ckpt")
    network.save_checkpoint(best.model, ckpt_path, best.meta)
    log.to_csv(os.path.join(cfg.out_dir, "train.csv"))
    print(f"checkpoint={ckpt_path}")
    print(f"best_val_accuracy={best.meta['val_accuracy']:.6f}")
    return 0


def _restore_eval_setup(args):
    ckpt = network.load_checkpoint(args.checkpoint)
    if args.config:
        cfg = cfgmod.resolve_config(args.config)
    elif "config" in ckpt.meta:
        cfg = cfgmod.config_from_dict(ckpt.meta["config"])
    else:
        raise cfgmod.ConfigError(
            "checkpoint carries no embedded config; pass --config")
    pipeline = _pipeline_for(cfg)
    dataset = load_dataset(args.manifest)
    means = ckpt.meta.get("channel_means")
    if means is not None:
        pipeline.set_channel_means(np.asarray(means, dtype=np.float32))
    else:
        pipeline.set_channel_means(
            pipeline.compute_channel_means(dataset.split("train")))
    return ckpt, cfg, pipeline, dataset


def cmd_eval(args) -> int:
    ckpt, cfg, pipeline, dataset = _restore_eval_setup(args)
    mode = args.mode or cfg.eval.mode
    sizes = tuple(args.sizes) if args.sizes else cfg.eval.sizes
    if mode == "multiscale" and not ckpt.model.spec.has_spp:
        raise cfgmod.ConfigError(
            "field eval.mode: 'multiscale' requires an spp checkpoint")
    items = dataset.split(args.split)
    if not items:
        raise ValueError(f"manifest has no {args.split!r} split")
    report = inference.evaluate(
        ckpt.model, items, pipeline, mode=mode, views=args.views,
        transform_spec=cfg.transform, sizes=sizes)
    summary = inference.write_report(report, args.out, dataset.classes)
    sys.stdout.write(summary)
    return 0


def cmd_augment_preview(args) -> int:
    raw = imaging.read_image(args.image).to_float()
    params = {}
    if args.kind in ("shear", "rotation"):
        params["theta"] = args.theta
        if args.kind == "shear":
            params["axis"] = args.axis
    elif args.kind == "gaussian_blur":
        params["sigma"] = args.sigma if args.sigma is not None else 1.0
    elif args.kind == "gaussian_noise":
        params["sigma"] = args.sigma if args.sigma is not None else 0.02
    elif args.kind == "salt_pepper":
        params["rate"] = args.rate
    elif args.kind == "crop":
        params = {"fraction": args.fraction, "off_y": 0.5, "off_x": 0.5}
    elif args.kind == "elastic":
        params = {"sigma": 4.0, "alpha": 8.0}
    elif args.kind == "perspective":
        spec = augment.TransformSpec("perspective")
        t = augment.sample_transform(spec, np.random.default_rng(args.seed))
        params = t.params
    elif args.kind == "color_jitter":
        params = {"brightness": 0.1, "contrast": 1.1}
    elif args.kind == "mirror":
        params = {"apply": 1}
    t = augment.ConcreteTransform(args.kind, params, seed=args.seed)
    out = augment.apply_transform(raw, t)
    plane = out[0] if out.shape[0] == 1 else out.transpose(1, 2, 0)
    imaging.write_png(args.out, plane)
    print(f"wrote={args.out}")
    return 0


def _parse_neuron(text: str):
    try:
        layer, channel = text.split(":")
        return layer, int(channel)
    except ValueError:
        raise ValueError(
            f"neuron must look like 'conv5:12', got {text!r}") from None


def cmd_introspect(args) -> int:
    ckpt, cfg, pipeline, dataset = _restore_eval_setup(args)
    items = dataset.split(args.split)
    if not items:
        raise ValueError(f"manifest has no {args.split!r} split")
    os.makedirs(args.out, exist_ok=True)
    model = ckpt.model
    if args.neuron:
        layer, channel = _parse_neuron(args.neuron)
        neuron = introspect.NeuronRef(layer, channel)
        records = introspect.top_k_patches(model, items, pipeline, neuron,
                                           k=args.topk)
        grid = os.path.join(args.out, f"{layer}_{channel}_patches.png")
        introspect.save_patch_grid(records, grid)
        introspect.write_patch_csv(
            records, os.path.join(args.out, f"{layer}_{channel}_patches.csv"))
        print(f"patches={grid}")
        if args.deconv:
            tiles = []
            for rec in records:
                x = pipeline.finalize(pipeline.represent(rec.image_id))
                sal = introspect.deconv_visualize(
                    model, x, introspect.NeuronRef(layer, channel, rec.position))
                r0, c0, r1, c1 = rec.rect
                tiles.append(sal[:, r0:r1 + 1, c0:c1 + 1])
            path = os.path.join(args.out, f"{layer}_{channel}_deconv.png")
            introspect.save_grid(tiles, path)
            print(f"deconv={path}")
    if args.spatial_layer:
        xs = (pipeline.finalize(pipeline.represent(it.path)) for it in items)
        maps = introspect.spatial_response_map(model, xs, args.spatial_layer)
        path = os.path.join(args.out, f"{args.spatial_layer}_spatial.png")
        introspect.save_response_grid(maps, path)
        print(f"spatial={path}")
    return 0


def cmd_arch_show(args) -> int:
    spp = tuple(args.spp) if args.spp else None
    spec = network.build_alexnet(
        args.input, args.width, args.depth, num_classes=args.classes,
        input_channels=args.channels, spp_levels=spp)
    shapes = network.propagate_shapes(spec)
    total = 0
    print(f"{'layer':<12} {'kind':<10} {'geometry':<16} {'output':<18} params")
    print(f"{'input':<12} {'-':<10} {'-':<16} "
          f"{f'{args.channels}x{args.input}x{args.input}':<18} -")
    param_shapes = dict()
    for name, shape, kind in network.param_shapes(spec):
        param_shapes[name] = int(np.prod(shape))
    for cfg, shape in zip(spec.layers, shapes):
        if cfg.kind == "conv":
            geom = f"{cfg.kernel}x{cfg.kernel}/{cfg.stride} p{cfg.pad}"
        elif cfg.kind == "maxpool":
            geom = f"{cfg.window}x{cfg.window}/{cfg.stride}"
        elif cfg.kind == "spp":
            geom = "levels " + ",".join(str(l) for l in cfg.levels)
        else:
            geom = "-"
        if shape[0] == "spatial":
            out = f"{shape[1]}x{shape[2]}x{shape[3]}"
        else:
            out = str(shape[1])
        n_params = sum(v for k, v in param_shapes.items()
                       if cfg.name and k.rsplit(".", 1)[0] == cfg.name)
        total += n_params
        label = cfg.name or cfg.kind
        print(f"{label:<12} {cfg.kind:<10} {geom:<16} {out:<18} "
              f"{n_params if n_params else '-'}")
    print(f"total parameters: {total}")
    fh, fw = network.final_conv_map(spec)
    print(f"final conv map: {fh}x{fw}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="docgrid",
        description="Document-image CNN experiment toolkit")
    parser.add_argument(
        "--threads", type=int,
        default=int(os.environ.get("DOCGRID_THREADS", "1")),
        help="worker-thread cap (1 = bit-reproducible mode, the default)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic document dataset")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train from an experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    p.add_argument("--dump-config", action="store_true",
                   help="print the effective config as JSON and exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None,
                   help="override the config embedded in the checkpoint")
    p.add_argument("--mode", choices=["1x", "10x", "multiscale"], default=None)
    p.add_argument("--views", type=int, default=10)
    p.add_argument("--sizes", type=int, nargs="+", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--out", default="runs/eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("augment-preview",
                       help="apply one transform and write a PNG")
    p.add_argument("image")
    p.add_argument("--kind", required=True, choices=augment.TRANSFORM_KINDS)
    p.add_argument("--theta", type=float, default=10.0)
    p.add_argument("--axis", choices=["horizontal", "vertical"],
                   default="horizontal")
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--rate", type=float, default=0.02)
    p.add_argument("--fraction", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="preview.png")
    p.set_defaults(func=cmd_augment_preview)

    p = sub.add_parser("introspect",
                       help="strongest patches, reconstructions, response maps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--neuron", default=None, help="e.g. conv5:12")
    p.add_argument("--topk", type=int, default=9)
    p.add_argument("--deconv", action="store_true",
                   help="also write backward reconstructions of the patches")
    p.add_argument("--spatial-layer", default=None,
                   help="write mean per-filter response maps of this layer")
    p.add_argument("--split", default="test")
    p.add_argument("--out", default="runs/introspect")
    p.set_defaults(func=cmd_introspect)

    p = sub.add_parser("arch-show", help="print the layer table for a size")
    p.add_argument("--input", type=int, required=True)
    p.add_argument("--depth", type=int, default=5)
    p.add_argument("--width", type=float, default=1.0)
    p.add_argument("--classes", type=int, default=16)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--spp", type=int, nargs="+", default=None)
    p.set_defaults(func=cmd_arch_show)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except trainer.DivergedError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except (cfgmod.ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
