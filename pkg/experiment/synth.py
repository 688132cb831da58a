"""
Planted-block synthetic time series with class-dependent correlation structure

A region inside a block with strength rho follows
    x_r(t) = sign_r * sqrt(|rho|) * z_block(t) + noise * e_r(t)
and a region outside every block follows x_r(t) = e_r(t), where z and e are
i.i.d. standard normal. Two members of one block therefore correlate at
    E[r] = sign * |rho| / (|rho| + noise^2)
For negative rho, alternate block members take opposite signs.
"""

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from dfcn.timeseries import RoiTimeSeries
from model.config import coerce
from utils.errors import ConfigError
from utils.logger import logger


@dataclass
class PlantedBlock:
    regions: list
    rho: float


@dataclass
class ClassSpec:
    name: str
    blocks: list = field(default_factory=list)


@dataclass
class SynthSpec:
    classes: list
    subjects_per_class: int = 20
    scans_per_subject: int = 2
    n_timepoints: int = 137
    n_regions: int = 16
    noise: float = 0.5
    seed: int = 0

    def validate(self):
        if len(self.classes) < 2:
            raise ConfigError("need at least 2 classes", key="synth.classes")
        for name in ("subjects_per_class", "scans_per_subject", "n_timepoints"):
            if getattr(self, name) < 1:
                raise ConfigError(f"must be >= 1, got {getattr(self, name)}", key=f"synth.{name}")
        if self.n_regions < 2:
            raise ConfigError(f"need at least 2 regions, got {self.n_regions}", key="synth.n_regions")
        if self.noise < 0:
            raise ConfigError(f"must be >= 0, got {self.noise}", key="synth.noise")
        for class_index, spec in enumerate(self.classes):
            for block_index, block in enumerate(spec.blocks):
                key = f"synth.classes[{class_index}].blocks[{block_index}]"
                if not -1.0 < block.rho < 1.0 or block.rho == 0.0:
                    raise ConfigError(f"rho must lie in (-1, 1) and be non-zero, got {block.rho}", key=key)
                bad = [r for r in block.regions if not 0 <= r < self.n_regions]
                if bad or len(block.regions) < 2:
                    raise ConfigError(f"block regions {block.regions} must be >= 2 indices in [0, {self.n_regions})",
                                      key=key)
        return self

    def expected_correlation(self, rho):
        return np.sign(rho) * abs(rho) / (abs(rho) + self.noise ** 2)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, values, prefix="synth"):
        """
        Build a validated spec, rejecting unknown keys at every level

        Args:
            values (dict): Mapping in the shape of to_dict()
            prefix (str): Dotted prefix used in error messages

        Returns:
            SynthSpec: Validated spec
        """
        values = dict(values)
        known = {f.name: f.type for f in fields(cls)}
        _reject_unknown(values, known, prefix)
        if "classes" not in values:
            raise ConfigError("missing key", key=f"{prefix}.classes")

        classes = []
        for class_index, c in enumerate(values.pop("classes")):
            class_key = f"{prefix}.classes[{class_index}]"
            _reject_unknown(c, {"name", "blocks"}, class_key)
            if "name" not in c:
                raise ConfigError("missing key", key=f"{class_key}.name")
            blocks = []
            for block_index, b in enumerate(c.get("blocks", [])):
                block_key = f"{class_key}.blocks[{block_index}]"
                _reject_unknown(b, {"regions", "rho"}, block_key)
                missing = [k for k in ("regions", "rho") if k not in b]
                if missing:
                    raise ConfigError("missing key", key=f"{block_key}.{missing[0]}")
                blocks.append(PlantedBlock(list(b["regions"]), coerce(b["rho"], float, f"{block_key}.rho")))
            classes.append(ClassSpec(name=coerce(c["name"], str, f"{class_key}.name"), blocks=blocks))

        checked = {key: coerce(value, known[key], f"{prefix}.{key}") for key, value in values.items()}
        return cls(classes=classes, **checked).validate()


def _reject_unknown(values, known, prefix):
    if not isinstance(values, dict):
        raise ConfigError(f"expected an object, got {values!r}", key=prefix)
    for key in values:
        if key not in known:
            raise ConfigError("unknown key", key=f"{prefix}.{key}")


def default_spec(n_regions=16, seed=0, noise=0.5):
    """Two classes with disjoint planted blocks"""
    half = n_regions // 2
    return SynthSpec(
        classes=[
            ClassSpec("control", [PlantedBlock(list(range(0, half // 2 + 2)), 0.8)]),
            ClassSpec("patient", [PlantedBlock(list(range(half, half + half // 2 + 2)), 0.8)]),
        ],
        n_regions=n_regions,
        noise=noise,
        seed=seed,
    ).validate()


def _scan(spec, class_spec, rng):
    m, n = spec.n_timepoints, spec.n_regions
    values = rng.standard_normal((m, n))
    for block in class_spec.blocks:
        latent = rng.standard_normal(m)
        scale = np.sqrt(abs(block.rho))
        for position, region in enumerate(block.regions):
            sign = -1.0 if block.rho < 0 and position % 2 else 1.0
            values[:, region] = sign * scale * latent + spec.noise * values[:, region]
    return values


def synth_generate(spec):
    """
    Generate a labeled scan collection; identical specs give identical data

    Args:
        spec (SynthSpec): Generator settings

    Returns:
        list[RoiTimeSeries]: Scans labeled by class position
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    names = tuple(f"R{i + 1:03d}" for i in range(spec.n_regions))

    series = []
    for label, class_spec in enumerate(spec.classes):
        for subject in range(spec.subjects_per_class):
            subject_id = f"{class_spec.name}_s{subject:03d}"
            for scan in range(spec.scans_per_subject):
                series.append(RoiTimeSeries(
                    subject_id=subject_id,
                    scan_id=f"{subject_id}_scan{scan}",
                    label=label,
                    values=_scan(spec, class_spec, rng),
                    region_names=names,
                ))

    logger.info(f"Generated {len(series)} synthetic scans "
                f"({len(spec.classes)} classes x {spec.subjects_per_class} subjects x {spec.scans_per_subject} scans)")
    return series
