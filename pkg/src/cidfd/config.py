"""Experiment configuration: TOML file -> schema check -> defaults -> flag overrides."""
import copy
import json
from importlib import resources
from pathlib import Path

import jsonschema
import toml

from .core import TemperatureSet, TrainConfig

DEFAULTS = {
    "out_dir": "runs/stripe_mnist",
    "dataset": {"mnist_path": "data/mnist-10k", "scale": 0.1, "data_seed": 0, "stripe_amplitude": 1.0,
                "target_dir": "", "background_dir": ""},
    "encoder": {"arch": "small_conv", "d": 64},
    "temperatures": {"tau_b": 1.0, "tau_2": 2.0, "tau_x": 1.0, "tau_xb": 1.0},
    "training": {"epochs_f": 30, "epochs_g": 60, "batch_size": 128, "lr": 0.03,
                 "sgd_momentum": 0.9, "weight_decay": 5e-4, "bank_momentum": 0.5, "seed": 0,
                 "idfd_baseline": False, "cache_bg_features": False, "augment_policy": "auto",
                 "checkpoint_every": 0},
    "eval": {"k": 0, "restarts": 10},
    "analysis": {"bins": 50, "projection": "pca", "block_size": 1024},
}


class ConfigError(ValueError):
    pass


def schema() -> dict:
    return json.loads(resources.files("cidfd").joinpath("config_schema.json").read_text())


def validate(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Resolved config: defaults, then the file (validated), then ``overrides``."""
    raw = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = toml.load(path)
        except toml.TomlDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        validate(raw)
    cfg = _merge(DEFAULTS, raw)
    cfg = _merge(cfg, overrides or {})
    validate(cfg)
    return cfg


def dump_config(cfg: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(toml.dumps(cfg))
    return path


def train_config(cfg: dict) -> TrainConfig:
    t = dict(cfg["training"])
    policy = t.pop("augment_policy")
    if policy == "auto":
        policy = "crop_pad" if cfg["encoder"]["arch"] == "small_conv" else "natural"
    return TrainConfig(d=cfg["encoder"]["d"], temps=TemperatureSet(**cfg["temperatures"]),
                       augment_policy=policy, **t)
