"""
Configuration module: documented defaults, environment variables (.env support),
a JSON config file and command-line overrides, in rising precedence
"""

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from dotenv import load_dotenv

from dfcn.builder import WindowSpec
from experiment.synth import SynthSpec
from experiment.trainer import TrainHyper
from model.config import ModelConfig, coerce
from utils.errors import ConfigError
from utils.logger import logger

DEFAULTS = {
    "seed": None,
    "out_dir": "runs",
    "data": {"timeseries_dir": None, "dfcn_dir": None},
    "synth": None,
    "window": {"length": 70, "stride": 2},
    "model": ModelConfig().to_dict(),
    "train": {"epochs": 200, "batch": 16, "lr": 1e-3, "folds": 5, "val_fraction": 0.2, "log_every": 10},
    "inspect": {"checkpoint": None, "alpha": 0.05, "label": None, "class_means": False},
    "positive_class": 1,
}

# dotted keys whose default is None, with the type they take when set
OPTIONAL_TYPES = {
    "seed": int,
    "data.timeseries_dir": str,
    "data.dfcn_dir": str,
    "inspect.checkpoint": str,
    "inspect.label": int,
}

ENV_KEYS = {
    "DCACRN_SEED": ("seed", int),
    "DCACRN_OUT_DIR": ("out_dir", str),
    "DCACRN_EPOCHS": ("train.epochs", int),
    "DCACRN_BATCH": ("train.batch", int),
    "DCACRN_LR": ("train.lr", float),
    "DCACRN_L2": ("model.l2_lambda", float),
    "DCACRN_FOLDS": ("train.folds", int),
}

# path-valued keys, never part of the fingerprint
OUTPUT_KEYS = ("out_dir",)


@dataclass
class RunConfig:
    """Effective configuration of one command"""

    seed: int
    out_dir: str
    window: WindowSpec
    model: ModelConfig
    hyper: TrainHyper
    folds: int = 5
    val_fraction: float = 0.2
    positive_class: int = 1
    timeseries_dir: str = None
    dfcn_dir: str = None
    synth: SynthSpec = None
    checkpoint: str = None
    alpha: float = 0.05
    label: int = None
    class_means: bool = False
    command: str = None
    values: dict = field(default_factory=dict, repr=False)

    def to_dict(self):
        """Config echo for manifests; the output directory is left out"""
        echo = copy.deepcopy(self.values)
        for key in OUTPUT_KEYS:
            echo.pop(key, None)
        return echo

    @property
    def fingerprint(self):
        return hashlib.md5(json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")).hexdigest()


def _get(values, dotted):
    node = values
    for part in dotted.split("."):
        node = node[part]
    return node


def _set(values, dotted, value):
    parts = dotted.split(".")
    node = values
    for index, part in enumerate(parts[:-1]):
        if not isinstance(node.get(part), dict):
            raise ConfigError("unknown key", key=".".join(parts[:index + 1]))
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError("unknown key", key=dotted)
    node[parts[-1]] = value


def _merge(base, update, prefix=""):
    """Overlay a nested dict onto the defaults, refusing keys the defaults don't have"""
    for key, value in update.items():
        dotted = f"{prefix}{key}"
        if key not in base:
            raise ConfigError("unknown key", key=dotted)
        if key == "synth":
            base[key] = value
        elif isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"expected an object, got {value!r}", key=dotted)
            _merge(base[key], value, f"{dotted}.")
        else:
            base[key] = value


def _env_layer(values, env_file):
    if env_file and Path(env_file).exists():
        load_dotenv(env_file)
        logger.info(f"Loaded environment from {env_file}")

    for name, (dotted, kind) in ENV_KEYS.items():
        raw = os.getenv(name)
        if raw is None or raw == "":
            continue
        try:
            _set(values, dotted, kind(raw))
        except ValueError:
            raise ConfigError(f"expected {kind.__name__}, got {raw!r}", key=name)


def _file_layer(values, config_file):
    path = Path(config_file)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist", key="config")
    try:
        loaded = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"not valid JSON: {e}", key="config")
    if not isinstance(loaded, dict):
        raise ConfigError("expected a JSON object at the top level", key="config")
    _merge(values, loaded)
    logger.info(f"Loaded config file {path}")


def _typed(values, dotted, default_type):
    value = _get(values, dotted)
    if value is None and dotted in OPTIONAL_TYPES:
        return None
    kind = OPTIONAL_TYPES.get(dotted, default_type)
    return coerce(value, kind.__name__, dotted)


def _require_path(path, key):
    if path is not None and not Path(path).exists():
        raise ConfigError(f"path {path} does not exist", key=key)
    return path


def load_config(config_file=None, overrides=None, env_file=".env"):
    """
    Build and validate the effective configuration

    Args:
        config_file (str): Optional JSON config file
        overrides (dict): Dotted keys from command-line flags; None values are skipped
        env_file (str): dotenv file read before the environment layer

    Returns:
        RunConfig: Validated configuration
    """
    values = copy.deepcopy(DEFAULTS)
    _env_layer(values, env_file)
    if config_file:
        _file_layer(values, config_file)
    for dotted, value in (overrides or {}).items():
        if value is not None:
            _set(values, dotted, value)

    seed = _typed(values, "seed", int)
    if seed is None:
        raise ConfigError("a seed is required (--seed, DCACRN_SEED or the config file)", key="seed")
    if seed < 0 or seed >= 2 ** 64:
        raise ConfigError(f"must be an unsigned 64-bit integer, got {seed}", key="seed")

    window = WindowSpec(length=_typed(values, "window.length", int), stride=_typed(values, "window.stride", int))
    window.validate()

    model = ModelConfig.from_dict(values["model"])
    hyper = TrainHyper(
        epochs=_typed(values, "train.epochs", int),
        batch=_typed(values, "train.batch", int),
        lr=_typed(values, "train.lr", float),
        l2_lambda=model.l2_lambda,
        seed=seed,
        log_every=_typed(values, "train.log_every", int),
    ).validate()

    folds = _typed(values, "train.folds", int)
    if folds < 2:
        raise ConfigError(f"need at least 2 folds, got {folds}", key="train.folds")
    val_fraction = _typed(values, "train.val_fraction", float)
    if not 0.0 <= val_fraction < 1.0:
        raise ConfigError(f"must lie in [0, 1), got {val_fraction}", key="train.val_fraction")

    positive_class = _typed(values, "positive_class", int)
    if not 0 <= positive_class < model.num_classes:
        raise ConfigError(f"must lie in [0, {model.num_classes}), got {positive_class}", key="positive_class")

    synth = None
    if values["synth"] is not None:
        try:
            synth_values = dict(values["synth"])
            synth_values.setdefault("seed", seed)
            synth = SynthSpec.from_dict(synth_values)
        except (TypeError, KeyError) as e:
            raise ConfigError(f"malformed synthetic spec: {e}", key="synth")

    alpha = _typed(values, "inspect.alpha", float)
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"must lie in (0, 1), got {alpha}", key="inspect.alpha")

    config = RunConfig(
        seed=seed,
        out_dir=_typed(values, "out_dir", str),
        window=window,
        model=model,
        hyper=hyper,
        folds=folds,
        val_fraction=val_fraction,
        positive_class=positive_class,
        timeseries_dir=_require_path(_typed(values, "data.timeseries_dir", str), "data.timeseries_dir"),
        dfcn_dir=_require_path(_typed(values, "data.dfcn_dir", str), "data.dfcn_dir"),
        synth=synth,
        checkpoint=_require_path(_typed(values, "inspect.checkpoint", str), "inspect.checkpoint"),
        alpha=alpha,
        label=_typed(values, "inspect.label", int),
        class_means=_typed(values, "inspect.class_means", bool),
        values=values,
    )
    logger.debug(f"Effective config: {json.dumps(config.to_dict(), sort_keys=True)}")
    return config
