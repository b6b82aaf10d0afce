"""Experiment configuration: loading, validation, overrides, snapshots.

Configs are YAML (JSON accepted) mappings mirroring the dataclass tree
below. Validation happens before any work starts and reports the dotted
field path of the offending entry. `--set a.b.c=value` overrides are
applied on the raw mapping before construction.
"""

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

import yaml

from .augment import AugmentConfig
from .codec import CodecParams
from .inference import InferConfig
from .networks import DiscriminatorConfig, GeneratorConfig
from .phantom import PhantomConfig, RenderStyle
from .trainer import TrainConfig
from .volumes import VolumeSpec


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class ExperimentConfig:
    output_dir: str = "runs/default"
    data: dict = field(default_factory=dict)  # name -> VolumeSpec
    phantom: PhantomConfig = PhantomConfig()
    codec: CodecParams = CodecParams()
    augment: AugmentConfig = AugmentConfig()
    generator: GeneratorConfig = GeneratorConfig()
    discriminator: DiscriminatorConfig = DiscriminatorConfig()
    train: TrainConfig = TrainConfig()
    infer: InferConfig = InferConfig()
    bench_iterations: int = 500


def _coerce_tuples(value):
    if isinstance(value, list):
        return tuple(_coerce_tuples(v) for v in value)
    return value


def _build_dataclass(cls, mapping, path: str):
    if not isinstance(mapping, dict):
        raise ConfigError(path, f"expected a mapping, got {type(mapping).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(mapping) - set(fields))
    if unknown:
        raise ConfigError(path, f"unknown keys {unknown}")
    kwargs = {}
    for name, f in fields.items():
        if name not in mapping:
            continue
        sub_path = f"{path}.{name}" if path else name
        value = mapping[name]
        if isinstance(f.type, type) and dataclasses.is_dataclass(f.type):
            kwargs[name] = _build_dataclass(f.type, value, sub_path)
        else:
            kwargs[name] = _coerce_tuples(value)
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(path or cls.__name__, str(exc)) from exc


def experiment_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    raw = dict(raw)
    data_raw = raw.pop("data", {})
    cfg = _build_dataclass(ExperimentConfig, raw, "")
    if not isinstance(data_raw, dict):
        raise ConfigError("data", "expected a mapping of volume specs")
    cfg.data = {
        name: _build_dataclass(VolumeSpec, spec, f"data.{name}")
        for name, spec in data_raw.items()
    }
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    """Cross-field checks that individual dataclasses cannot see."""
    sp = cfg.generator.stride_product
    if any(s % sp for s in cfg.train.patch_size):
        raise ConfigError(
            "train.patch_size",
            f"{cfg.train.patch_size} not divisible by generator stride product {sp}",
        )
    if any(s % sp for s in cfg.infer.patch_size):
        raise ConfigError(
            "infer.patch_size",
            f"{cfg.infer.patch_size} not divisible by generator stride product {sp}",
        )
    dsp = cfg.discriminator.stride_product
    for name, patch in (("train.patch_size", cfg.train.patch_size),
                        ("infer.patch_size", cfg.infer.patch_size)):
        if any(s < dsp for s in patch):
            raise ConfigError(
                name, f"{patch} smaller than discriminator stride product {dsp}"
            )
    if cfg.discriminator.in_channels != 1:
        raise ConfigError("discriminator.in_channels", "image discriminators take 1 channel")


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply `a.b.c=value` overrides onto the raw mapping (values YAML-parsed)."""
    out = json.loads(json.dumps(raw))  # deep copy of plain data
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key.path=value")
        key, _, value = item.partition("=")
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(key, f"cannot descend into non-mapping at {part!r}")
        node[parts[-1]] = yaml.safe_load(value)
    return out


def load_experiment(path: str | None, overrides: list[str] | None = None) -> ExperimentConfig:
    raw = {}
    if path is not None:
        with open(path) as f:
            raw = yaml.safe_load(f) or {}
    if overrides:
        raw = apply_overrides(raw, overrides)
    return experiment_from_dict(raw)


def experiment_to_dict(cfg: ExperimentConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["data"] = {k: dataclasses.asdict(v) for k, v in cfg.data.items()}
    return out


def _canonical_json(obj) -> str:
    def default(o):
        if isinstance(o, tuple):
            return list(o)
        raise TypeError(type(o))

    return json.dumps(obj, sort_keys=True, default=default)


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(_canonical_json(experiment_to_dict(cfg)).encode()).hexdigest()


def code_hash() -> str:
    """Hash of the package sources, recorded with every run."""
    pkg_dir = os.path.dirname(os.path.abspath(__file__))
    digest = hashlib.sha256()
    for name in sorted(os.listdir(pkg_dir)):
        if name.endswith(".py"):
            with open(os.path.join(pkg_dir, name), "rb") as f:
                digest.update(name.encode())
                digest.update(f.read())
    return digest.hexdigest()


def write_run_snapshot(cfg: ExperimentConfig, subcommand: str) -> None:
    os.makedirs(cfg.output_dir, exist_ok=True)
    snapshot = json.loads(_canonical_json(experiment_to_dict(cfg)))  # tuples -> lists
    with open(os.path.join(cfg.output_dir, "resolved_config.yaml"), "w") as f:
        yaml.safe_dump(snapshot, f, sort_keys=True)
    info = {
        "subcommand": subcommand,
        "config_hash": config_hash(cfg),
        "code_hash": code_hash(),
    }
    with open(os.path.join(cfg.output_dir, "run_info.json"), "w") as f:
        json.dump(info, f, indent=2)
