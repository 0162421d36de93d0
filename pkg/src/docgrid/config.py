"""Declarative experiment configuration (JSON) binding datasets, the input
representation, augmentation, aspect-ratio policy, architecture, training
schedule, and evaluation mode.

Cross-field rules are enforced at load time: variable-AR inputs and
multi-scale training or evaluation all require an spp architecture.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources

from .augment import ARPolicy, TransformSpec
from .imaging import RepresentationSpec


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the field path."""


@dataclass(frozen=True)
class ArchParams:
    input_size: int = 227
    conv_depth: int = 5
    width_factor: float = 1.0
    conv_width_factor: float | None = None
    fc_width_factor: float | None = None
    use_lrn: bool = True
    use_bn: bool = False
    use_dropout: bool = True
    spp_levels: tuple | None = None

    def __post_init__(self):
        if self.spp_levels is not None:
            object.__setattr__(self, "spp_levels", tuple(self.spp_levels))


@dataclass(frozen=True)
class TrainParams:
    batch_size: int = 32
    total_updates: int = 500_000
    base_lr: float = 0.003
    lr_step: int = 150_000
    lr_decay: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    train_fraction: float = 1.0
    validation_interval: int = 500
    scale_sizes: tuple | None = None

    def __post_init__(self):
        if self.scale_sizes is not None:
            object.__setattr__(self, "scale_sizes", tuple(self.scale_sizes))


@dataclass(frozen=True)
class EvalParams:
    mode: str = "1x"          # 1x | 10x | multiscale
    views: int = 10
    sizes: tuple | None = None

    def __post_init__(self):
        if self.mode not in ("1x", "10x", "multiscale"):
            raise ValueError(f"unknown evaluation mode {self.mode!r}")
        if self.sizes is not None:
            object.__setattr__(self, "sizes", tuple(self.sizes))


@dataclass(frozen=True)
class ExperimentConfig:
    manifest: str
    out_dir: str = "runs/experiment"
    seed: int = 0
    representation: RepresentationSpec = RepresentationSpec(("G",))
    transform: TransformSpec = TransformSpec("none")
    aspect_ratio: ARPolicy = ARPolicy("warp")
    arch: ArchParams = ArchParams()
    train: TrainParams = TrainParams()
    eval: EvalParams = EvalParams()


def _build_section(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"field {path}: expected an object, got {type(data).__name__}")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"field {path}: {e}") from e
    except ValueError as e:
        raise ConfigError(f"field {path}: {e}") from e


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    data = dict(raw.get("data", {}))
    manifest = data.get("manifest")
    if not manifest:
        raise ConfigError("field data.manifest: a dataset manifest path is required")
    cfg = ExperimentConfig(
        manifest=manifest,
        out_dir=raw.get("out_dir", "runs/experiment"),
        seed=int(raw.get("seed", 0)),
        representation=_build_section(RepresentationSpec,
                                      raw.get("representation", {"channels": ["G"]}),
                                      "representation"),
        transform=_build_section(TransformSpec,
                                 raw.get("transform", {"kind": "none"}),
                                 "transform"),
        aspect_ratio=_build_section(ARPolicy,
                                    raw.get("aspect_ratio", {"mode": "warp"}),
                                    "aspect_ratio"),
        arch=_build_section(ArchParams, raw.get("arch", {}), "arch"),
        train=_build_section(TrainParams, raw.get("train", {}), "train"),
        eval=_build_section(EvalParams, raw.get("eval", {}), "eval"),
    )
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig):
    if cfg.aspect_ratio.mode == "variable" and not cfg.arch.spp_levels:
        raise ConfigError(
            "field aspect_ratio.mode: 'variable' requires arch.spp_levels "
            "(fully connected layers need a fixed-length input)")
    if cfg.train.scale_sizes and not cfg.arch.spp_levels:
        raise ConfigError(
            "field train.scale_sizes: multi-scale training requires "
            "arch.spp_levels")
    if cfg.eval.mode == "multiscale":
        if not cfg.arch.spp_levels:
            raise ConfigError(
                "field eval.mode: 'multiscale' requires arch.spp_levels")
        if not cfg.eval.sizes:
            raise ConfigError(
                "field eval.sizes: multiscale evaluation needs a size list")
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    def tup(v):
        return list(v) if isinstance(v, tuple) else v

    return {
        "data": {"manifest": cfg.manifest},
        "out_dir": cfg.out_dir,
        "seed": cfg.seed,
        "representation": {k: tup(v) for k, v in asdict(cfg.representation).items()},
        "transform": {k: tup(v) for k, v in asdict(cfg.transform).items()},
        "aspect_ratio": {k: tup(v) for k, v in asdict(cfg.aspect_ratio).items()},
        "arch": {k: tup(v) for k, v in asdict(cfg.arch).items()},
        "train": {k: tup(v) for k, v in asdict(cfg.train).items()},
        "eval": {k: tup(v) for k, v in asdict(cfg.eval).items()},
    }


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON: {e}") from e
    return config_from_dict(raw)


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(cfg), sort_keys=True, indent=2) + "\n"


def loads_config(text: str) -> ExperimentConfig:
    return config_from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# Bundled profile configs


def profile_names():
    pkg = resources.files("docgrid").joinpath("configs")
    return sorted(p.name for p in pkg.iterdir() if p.name.endswith(".cfg"))


def load_profile(name: str) -> ExperimentConfig:
    if not name.endswith(".cfg"):
        name += ".cfg"
    pkg = resources.files("docgrid").joinpath("configs").joinpath(name)
    return loads_config(pkg.read_text(encoding="utf-8"))


def resolve_config(path_or_name: str) -> ExperimentConfig:
    """Load a config from the filesystem, falling back to bundled profiles
    by basename so `train --config synth-shear.cfg` works anywhere."""
    import os

    if os.path.exists(path_or_name):
        return load_config(path_or_name)
    try:
        return load_profile(os.path.basename(path_or_name))
    except FileNotFoundError:
        raise ConfigError(
            f"config {path_or_name!r} not found on disk or among bundled "
            f"profiles {profile_names()}") from None
