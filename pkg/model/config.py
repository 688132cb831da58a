"""
Model hyperparameters and their invariants
"""

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from utils.errors import ConfigError

DK_MODES = ("keylen", "regions")


@dataclass
class ModelConfig:
    """
    Network shape and regularization settings

    Defaults reproduce the published setting: N=116, T=34, S1=2, S2=1, S3=8,
    K1=5, K2=16, 32 Con1 filters, giving U1=33 and U2=13.
    """

    n_regions: int = 116
    n_windows: int = 34
    s1: int = 2
    s2: int = 1
    s3: int = 8
    k1: int = 5
    k2: int = 16
    c1: int = 32
    lstm_hidden: int = 48
    fc1: int = 32
    fc2: int = 16
    num_classes: int = 2
    dropout_conv: float = 0.25
    dropout_lstm: float = 0.5
    l2_lambda: float = 1e-4
    dk_mode: str = "keylen"
    dca_enabled: bool = True
    dca_bias: bool = False

    @property
    def u1(self):
        """Con1 output length T - S1 + 1"""
        return self.n_windows - self.s1 + 1

    @property
    def u1_con2(self):
        """Con2 output length (equals U1 when S2 = 1)"""
        return self.u1 - self.s2 + 1

    @property
    def u2(self):
        """Con3 output length with temporal stride 2"""
        return (self.u1_con2 - self.s3) // 2 + 1

    @property
    def d_k(self):
        return self.u1 if self.dk_mode == "keylen" else self.n_regions

    def validate(self):
        for name in ("n_regions", "n_windows", "s1", "s2", "s3", "k1", "k2", "c1",
                     "lstm_hidden", "fc1", "fc2"):
            if getattr(self, name) < 1:
                raise ConfigError(f"must be >= 1, got {getattr(self, name)}", key=f"model.{name}")
        if self.n_regions < 2:
            raise ConfigError("need at least 2 regions", key="model.n_regions")
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}", key="model.num_classes")
        if self.u1 < 1:
            raise ConfigError(f"Con1 must fit: S1={self.s1} exceeds T={self.n_windows}", key="model.s1")
        if self.s2 > self.u1:
            raise ConfigError(f"Con2 must fit: S2={self.s2} exceeds U1={self.u1}", key="model.s2")
        if self.u1_con2 < self.s3:
            raise ConfigError(f"Con3 must fit: S3={self.s3} exceeds U1={self.u1_con2}", key="model.s3")
        for name in ("dropout_conv", "dropout_lstm"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"must lie in [0, 1), got {getattr(self, name)}", key=f"model.{name}")
        if self.l2_lambda < 0:
            raise ConfigError(f"must be >= 0, got {self.l2_lambda}", key="model.l2_lambda")
        if self.dk_mode not in DK_MODES:
            raise ConfigError(f"must be one of {DK_MODES}, got '{self.dk_mode}'", key="model.dk_mode")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, values, prefix="model"):
        """
        Build a validated config, rejecting unknown keys and mistyped values

        Args:
            values (dict): Flat key-value mapping of ModelConfig fields
            prefix (str): Dotted prefix used in error messages

        Returns:
            ModelConfig: Validated config
        """
        known = {f.name: f.type for f in fields(cls)}
        checked = {}
        for key, value in values.items():
            if key not in known:
                raise ConfigError("unknown key", key=f"{prefix}.{key}")
            checked[key] = coerce(value, known[key], f"{prefix}.{key}")
        return cls(**checked).validate()


def coerce(value, expected, key):
    """Check a JSON value against a field type; ints are accepted where floats are expected"""
    expected = {"int": int, "float": float, "bool": bool, "str": str}.get(expected, expected)
    if expected is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected a boolean, got {value!r}", key=key)
        return value
    if expected is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", key=key)
        return value
    if expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key=key)
        return float(value)
    if expected is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", key=key)
        return value
    return value


def load_model_config(path):
    """Read a flat JSON model config file"""
    try:
        values = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"not valid JSON: {e}", key=str(path))
    if not isinstance(values, dict):
        raise ConfigError("expected a JSON object", key=str(path))
    return ModelConfig.from_dict(values)


def save_model_config(config, path):
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
    return Path(path)
