"""
Mini-batch Adam training of one cross-validation fold
"""

from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from engine.functional import cross_entropy_with_l2, log_softmax_np
from engine.optim import Adam
from engine.tensor import backward, no_grad
from model.network import DcaCrnModel
from utils.errors import ConfigError, DataError, NumericError
from utils.logger import logger

HISTORY_COLUMNS = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]


@dataclass
class TrainHyper:
    epochs: int = 200
    batch: int = 16
    lr: float = 1e-3
    l2_lambda: float = 1e-4
    seed: int = 0
    log_every: int = 10

    def validate(self):
        if self.epochs < 0:
            raise ConfigError(f"must be >= 0, got {self.epochs}", key="train.epochs")
        if self.batch < 1:
            raise ConfigError(f"must be >= 1, got {self.batch}", key="train.batch")
        if not self.lr > 0:
            raise ConfigError(f"must be > 0, got {self.lr}", key="train.lr")
        if self.l2_lambda < 0:
            raise ConfigError(f"must be >= 0, got {self.l2_lambda}", key="train.l2_lambda")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class FoldResult:
    """Best-checkpoint model of one fold and its learning curves"""

    fold: int
    model: DcaCrnModel
    history: list = field(default_factory=list)
    best_epoch: int = None
    seed: int = 0

    def history_frame(self):
        return pd.DataFrame([asdict(r) for r in self.history], columns=HISTORY_COLUMNS)


def fold_seeds(master_seed, fold):
    """Independent (model, shuffle) seeds per fold derived from the master seed"""
    state = np.random.SeedSequence([int(master_seed), int(fold)]).generate_state(2)
    return int(state[0]), int(state[1])


def stack_scans(dataset, scan_ids):
    """Stack connectivity and labels of the given scans"""
    missing = [s for s in scan_ids if s not in dataset]
    if missing:
        raise DataError(f"no dFCN tensor for scans {missing[:5]}{' ...' if len(missing) > 5 else ''}")
    if not scan_ids:
        return None, np.zeros(0, dtype=np.int64)
    values = np.stack([dataset[s].values for s in scan_ids])
    labels = np.array([dataset[s].label for s in scan_ids], dtype=np.int64)
    return values, labels


def eval_logits(model, values, batch_size=64):
    with no_grad():
        return np.concatenate([
            model.forward(values[start:start + batch_size], training=False).logits.data
            for start in range(0, values.shape[0], batch_size)
        ])


def score_split(model, values, labels):
    """Eval-mode mean cross-entropy and accuracy; NaN for an empty split"""
    if values is None:
        return float("nan"), float("nan")
    logits = eval_logits(model, values)
    log_probs = log_softmax_np(logits)
    loss = float(-log_probs[np.arange(labels.size), labels].mean())
    acc = float((logits.argmax(axis=1) == labels).mean())
    return loss, acc


def _is_better(acc, loss, best):
    if best is None:
        return True
    best_acc, best_loss = best
    if acc != best_acc:
        return acc > best_acc
    return loss < best_loss


def train_fold(plan, fold, dataset, config, hyper):
    """
    Train one fold and keep the parameters of its best validation epoch

    Selection favors higher validation accuracy, then lower validation loss,
    then the earlier epoch. Without validation scans the training figures
    are used instead.

    Args:
        plan (SplitPlan): Subject-level folds
        fold (int): Fold index
        dataset (dict[str, DfcnTensor]): Connectivity keyed by scan_id
        config (ModelConfig): Network shapes
        hyper (TrainHyper): Optimization settings

    Returns:
        FoldResult: Best model and per-epoch history
    """
    hyper.validate()
    split = plan.folds[fold]
    model_seed, shuffle_seed = fold_seeds(hyper.seed, fold)
    model = DcaCrnModel(config, seed=model_seed)
    result = FoldResult(fold=fold, model=model, seed=model_seed)

    train_x, train_y = stack_scans(dataset, split.train)
    val_x, val_y = stack_scans(dataset, split.val)
    if train_x is None:
        raise DataError(f"fold {fold} has no training scans")
    if val_x is None:
        logger.warning(f"Fold {fold} has no validation scans; selecting on training figures")
    if hyper.epochs == 0:
        return result

    logger.info(f"Fold {fold}: {len(split.train)} train / {len(split.val)} val / {len(split.test)} test scans, "
                f"{hyper.epochs} epochs")

    optimizer = Adam(model.params, lr=hyper.lr)
    rng = np.random.default_rng(shuffle_seed)
    best, best_snapshot = None, model.snapshot()

    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(train_y.size)
        total_loss, correct = 0.0, 0
        for start in range(0, order.size, hyper.batch):
            index = order[start:start + hyper.batch]
            optimizer.zero_grad()
            out = model.forward(train_x[index], training=True)
            loss = cross_entropy_with_l2(out.logits, train_y[index], hyper.l2_lambda, model.params["fc_out.weight"])
            if not np.isfinite(loss.data):
                raise NumericError("training loss is not finite", epoch=epoch)
            backward(loss)
            optimizer.step()
            total_loss += float(loss.data) * index.size
            correct += int((out.logits.data.argmax(axis=1) == train_y[index]).sum())

        record = EpochRecord(epoch, total_loss / order.size, correct / order.size, *score_split(model, val_x, val_y))
        result.history.append(record)

        if val_x is None:
            candidate = (record.train_acc, record.train_loss)
        else:
            candidate = (record.val_acc, record.val_loss)
        if not np.isfinite(candidate[1]):
            raise NumericError("validation loss is not finite", epoch=epoch)
        if _is_better(*candidate, best):
            best, best_snapshot = candidate, model.snapshot()
            result.best_epoch = epoch

        if hyper.log_every and (epoch % hyper.log_every == 0 or epoch == hyper.epochs):
            logger.info(f"Fold {fold} epoch {epoch}: train loss {record.train_loss:.4f} acc {record.train_acc:.3f}, "
                        f"val loss {record.val_loss:.4f} acc {record.val_acc:.3f}")

    model.restore(best_snapshot)
    logger.info(f"Fold {fold}: kept epoch {result.best_epoch}")
    return result
