"""
Subject-level k-fold partitioning
"""

from dataclasses import dataclass, field

import numpy as np

from utils.errors import ConfigError
from utils.logger import logger


@dataclass
class FoldSplit:
    """Scan identifiers of one fold's train, validation and test sets"""

    fold: int
    train: list
    val: list
    test: list


@dataclass
class SplitPlan:
    """Fold of every subject plus the per-fold scan lists"""

    fold_of: dict
    folds: list = field(default_factory=list)

    @property
    def k(self):
        return len(self.folds)

    def to_dict(self):
        return {
            "fold_of": dict(sorted(self.fold_of.items())),
            "folds": [{"fold": f.fold, "train": f.train, "val": f.val, "test": f.test} for f in self.folds],
        }


def make_subject_folds(scans, k=5, seed=0, val_fraction=0.2):
    """
    Partition subjects into k folds of near-equal size; every scan follows its subject

    Subjects are sorted, then shuffled deterministically by seed. Validation
    subjects are drawn from each fold's training subjects only.

    Args:
        scans (Iterable[tuple[str, str]]): (subject_id, scan_id) pairs
        k (int): Number of folds
        seed (int): Shuffle seed
        val_fraction (float): Share of training subjects moved to validation

    Returns:
        SplitPlan: Fold assignments and scan lists
    """
    scans_of = {}
    for subject_id, scan_id in scans:
        scans_of.setdefault(subject_id, []).append(scan_id)

    subjects = sorted(scans_of)
    if k < 2:
        raise ConfigError(f"need at least 2 folds, got {k}", key="train.folds")
    if len(subjects) < k:
        raise ConfigError(f"{len(subjects)} subjects cannot fill {k} folds", key="train.folds")
    if not 0.0 <= val_fraction < 1.0:
        raise ConfigError(f"must lie in [0, 1), got {val_fraction}", key="train.val_fraction")

    rng = np.random.default_rng(seed)
    order = [subjects[i] for i in rng.permutation(len(subjects))]
    groups = [list(part) for part in np.array_split(np.array(order, dtype=object), k)]
    fold_of = {subject: index for index, group in enumerate(groups) for subject in group}

    folds = []
    for index, test_subjects in enumerate(groups):
        train_subjects = [s for s in order if fold_of[s] != index]
        shuffled = [train_subjects[i] for i in rng.permutation(len(train_subjects))]
        n_val = int(round(len(shuffled) * val_fraction))
        if val_fraction > 0 and len(shuffled) > 1:
            n_val = max(1, n_val)
        val_subjects = set(shuffled[:n_val])

        def collect(chosen):
            return [scan for s in subjects if s in chosen for scan in scans_of[s]]

        folds.append(FoldSplit(
            fold=index,
            train=collect(set(train_subjects) - val_subjects),
            val=collect(val_subjects),
            test=collect(set(test_subjects)),
        ))

    sizes = [len(g) for g in groups]
    logger.info(f"Split {len(subjects)} subjects into {k} folds of sizes {sizes}")
    return SplitPlan(fold_of=fold_of, folds=folds)
