"""Run configuration: YAML file, ``section.key=value`` overrides, defaults.

Precedence is flag > file > default. Unknown keys anywhere are an error.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from .backbone import VARIANTS, ModelVariant, NetworkConfig
from .synthetic import SyntheticSceneConfig
from .training import TrainConfig

FORMAT_VERSION = "1"


@dataclass
class DataConfig:
    root: str = "data/synthetic"
    clip_length: int = 4
    stride: int = 1
    resolution: int = 64


@dataclass
class ScoringConfig:
    tau: float = 0.7
    distance_reduce: str = "mean"
    error_maps: bool = True
    checkpoint: Optional[str] = None
    scores: Optional[str] = None
    batch_size: int = 16


@dataclass
class AblateConfig:
    seeds: list = field(default_factory=lambda: [0])
    variants: list = field(default_factory=lambda: list(VARIANTS))


# widths for CPU-sized synthetic runs; configs/full.yaml restores the full widths
DESK_NETWORK = dict(channels=[16, 32, 64], bottleneck=128)
DESK_TRAIN = dict(epochs=5)

SECTIONS = {
    "data": DataConfig,
    "scene": SyntheticSceneConfig,
    "network": NetworkConfig,
    "train": TrainConfig,
    "scoring": ScoringConfig,
    "ablate": AblateConfig,
}
TOP_LEVEL = ("seed", "output", "variant")


class ConfigError(ValueError):
    pass


def default_tree() -> dict:
    tree: dict[str, Any] = {"seed": 0, "output": "runs/default", "variant": "E"}
    for name, cls in SECTIONS.items():
        tree[name] = {}
    tree["network"].update(DESK_NETWORK)
    tree["train"].update(DESK_TRAIN)
    return tree


def check_keys(tree: dict, origin: str):
    unknown = []
    for key, value in tree.items():
        if key in TOP_LEVEL:
            continue
        if key not in SECTIONS:
            unknown.append(key)
            continue
        if not isinstance(value, dict):
            raise ConfigError(f"{origin}: section {key!r} must be a mapping")
        allowed = {f.name for f in fields(SECTIONS[key])}
        unknown.extend(f"{key}.{k}" for k in value if k not in allowed)
    if unknown:
        raise ConfigError(f"{origin}: unknown config keys: {', '.join(sorted(unknown))}")


def merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = merge(out.get(k, {}), v) if isinstance(v, dict) and k in SECTIONS else v
    return out


def parse_override(item: str) -> dict:
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key=value or section.key=value")
    key, raw = item.split("=", 1)
    value = yaml.safe_load(raw)
    parts = key.strip().split(".")
    if len(parts) == 1:
        return {parts[0]: value}
    if len(parts) == 2:
        return {parts[0]: {parts[1]: value}}
    raise ConfigError(f"override key {key!r} is nested too deeply")


@dataclass
class RunConfig:
    seed: int
    output: str
    variant: ModelVariant
    variant_name: Optional[str]
    data: DataConfig
    scene: SyntheticSceneConfig
    network: NetworkConfig
    train: TrainConfig
    scoring: ScoringConfig
    ablate: AblateConfig
    tree: dict

    @property
    def out_dir(self) -> Path:
        return Path(self.output)

    def freeze(self, out_dir=None) -> Path:
        """Write the resolved config and format tag into the output directory."""
        out_dir = Path(out_dir or self.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.resolved.yaml").write_text(yaml.safe_dump(self.resolved(), sort_keys=True))
        (out_dir / "FORMAT_VERSION").write_text(FORMAT_VERSION + "\n")
        return out_dir

    def resolved(self) -> dict:
        return {
            "seed": self.seed,
            "output": self.output,
            "variant": self.variant_name or self.variant.to_dict(),
            "data": asdict(self.data),
            "scene": self.scene.to_dict(),
            "network": self.network.to_dict(),
            "train": self.train.to_dict(),
            "scoring": asdict(self.scoring),
            "ablate": asdict(self.ablate),
        }


def load_config(path=None, overrides=()) -> RunConfig:
    tree = default_tree()
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        check_keys(loaded, str(path))
        tree = merge(tree, loaded)
    for item in overrides:
        over = parse_override(item)
        check_keys(over, f"override {item!r}")
        tree = merge(tree, over)
    return build(tree)


def build(tree: dict) -> RunConfig:
    seed = int(tree["seed"])
    scene = dict(tree["scene"])
    scene.setdefault("seed", seed)
    train = dict(tree["train"])
    train.setdefault("seed", seed)
    variant = tree["variant"]
    try:
        if isinstance(variant, str):
            variant_obj, name = ModelVariant.named(variant), variant.upper()
        else:
            variant_obj, name = ModelVariant(**variant), None
        return RunConfig(
            seed=seed,
            output=str(tree["output"]),
            variant=variant_obj,
            variant_name=name,
            data=DataConfig(**tree["data"]),
            scene=SyntheticSceneConfig(**scene),
            network=NetworkConfig(**tree["network"]),
            train=TrainConfig(**train),
            scoring=ScoringConfig(**tree["scoring"]),
            ablate=AblateConfig(**tree["ablate"]),
            tree=tree,
        )
    except TypeError as e:
        raise ConfigError(str(e)) from None
