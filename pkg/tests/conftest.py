"""
Shared fixtures: seeded generators, a tiny network config and small scan sets
"""

import json

import numpy as np
import pytest

from dfcn.builder import DfcnTensor
from engine.tensor import get_tape
from model.config import ModelConfig


@pytest.fixture(autouse=True)
def clean_tape():
    get_tape().clear()
    yield
    get_tape().clear()


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_config():
    """N=6, T=5 network: U1=4, U2=2"""
    return ModelConfig(
        n_regions=6, n_windows=5, s1=2, s2=1, s3=2, k1=2, k2=2, c1=2,
        lstm_hidden=4, fc1=4, fc2=3, num_classes=2, dropout_conv=0.0, dropout_lstm=0.0,
    ).validate()


def random_dfcn(rng, n_windows, n_regions):
    upper = np.triu(rng.uniform(-1.0, 1.0, size=(n_windows, n_regions, n_regions)), 1)
    values = upper + np.swapaxes(upper, 1, 2)
    values[:, np.arange(n_regions), np.arange(n_regions)] = 1.0
    return values


@pytest.fixture
def make_scans(rng):
    """Factory for labeled random scans, `per_subject` scans per subject"""

    def factory(n_subjects, n_windows=5, n_regions=6, per_subject=1, num_classes=2):
        scans = []
        for s in range(n_subjects):
            for k in range(per_subject):
                scans.append(DfcnTensor(
                    subject_id=f"sub{s:03d}",
                    scan_id=f"sub{s:03d}_scan{k}",
                    label=s % num_classes,
                    values=random_dfcn(rng, n_windows, n_regions),
                ))
        return scans

    return factory


TINY_MODEL = {
    "s1": 2, "s2": 1, "s3": 2, "k1": 2, "k2": 2, "c1": 2,
    "lstm_hidden": 4, "fc1": 4, "fc2": 3, "dropout_conv": 0.0, "dropout_lstm": 0.0,
}

TINY_SYNTH = {
    "classes": [
        {"name": "control", "blocks": [{"regions": [0, 1, 2], "rho": 0.8}]},
        {"name": "patient", "blocks": [{"regions": [3, 4, 5], "rho": 0.8}]},
    ],
    "subjects_per_class": 4,
    "scans_per_subject": 1,
    "n_timepoints": 30,
    "n_regions": 6,
    "noise": 0.3,
}


@pytest.fixture
def run_config_file(tmp_path):
    """JSON config for a seconds-long synthetic cross-validation run"""
    path = tmp_path / "run.json"
    path.write_text(json.dumps({
        "synth": TINY_SYNTH,
        "window": {"length": 10, "stride": 5},
        "model": TINY_MODEL,
        "train": {"epochs": 2, "batch": 4, "folds": 2, "lr": 0.01, "log_every": 1},
    }), encoding="utf-8")
    return path


@pytest.fixture
def no_env(tmp_path, monkeypatch):
    """Strip DCACRN_* variables and point the dotenv layer at a missing file"""
    for name in ("DCACRN_SEED", "DCACRN_OUT_DIR", "DCACRN_EPOCHS", "DCACRN_BATCH",
                 "DCACRN_LR", "DCACRN_L2", "DCACRN_FOLDS"):
        monkeypatch.delenv(name, raising=False)
    return str(tmp_path / "missing.env")
