"""
Cross-validated experiment orchestration: dataset loading, per-fold training,
evaluation and the result artifacts of one run
"""

import json
import os
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from database.run_store import RunStore
from dfcn.builder import build_dfcn
from dfcn.dfcn_file import SUFFIX, load_dfcn_dir, read_dfcn
from dfcn.timeseries import load_dataset, load_timeseries
from experiment.metrics import evaluate_metrics
from experiment.splits import make_subject_folds
from experiment.synth import synth_generate
from experiment.trainer import train_fold
from model.params import count_parameters, init_params
from utils.errors import ConfigError, DataError
from utils.logger import logger
from utils.outputs import confined_path, mark_partial, staged_output

MANIFEST_FILE = "manifest.json"
REGISTRY_FILE = "runs.db"
SUMMARY_METRICS = ("accuracy", "sensitivity", "specificity", "auc")


def load_timeseries_input(path):
    """A dataset directory with index.csv, or a single time-series file"""
    path = Path(path)
    return load_dataset(path) if path.is_dir() else [load_timeseries(path)]


def load_dfcn_input(path):
    path = Path(path)
    scans = load_dfcn_dir(path) if path.is_dir() else [read_dfcn(path)]
    if not scans:
        raise DataError(f"no {SUFFIX} files in {path}")
    return scans


def load_scans(config):
    """
    Connectivity tensors for every scan named by the config

    DFCN files take precedence over time series, which take precedence over
    the synthetic generator.

    Returns:
        list[DfcnTensor]: Scans in a stable order
    """
    if config.dfcn_dir:
        scans = load_dfcn_input(config.dfcn_dir)
    elif config.timeseries_dir:
        scans = [build_dfcn(ts, config.window) for ts in load_timeseries_input(config.timeseries_dir)]
    elif config.synth is not None:
        scans = [build_dfcn(ts, config.window) for ts in synth_generate(config.synth)]
    else:
        raise ConfigError("no input: set data.dfcn_dir, data.timeseries_dir or a synth section", key="data")

    seen = set()
    for scan in scans:
        if scan.scan_id in seen:
            raise DataError(f"duplicate scan id {scan.scan_id}")
        seen.add(scan.scan_id)
    shapes = {scan.values.shape for scan in scans}
    if len(shapes) > 1:
        raise DataError(f"scans disagree on (T, N, N): {sorted(shapes)}")
    return scans


def fit_model_config(model_config, scans):
    """Take T and N from the data, then re-check every shape constraint"""
    n_windows, n_regions = scans[0].values.shape[:2]
    if (n_windows, n_regions) != (model_config.n_windows, model_config.n_regions):
        logger.info(f"Using T={n_windows}, N={n_regions} from the data "
                    f"(configured T={model_config.n_windows}, N={model_config.n_regions})")
    fitted = replace(model_config, n_windows=int(n_windows), n_regions=int(n_regions)).validate()

    labels = sorted({scan.label for scan in scans})
    if labels[0] < 0 or labels[-1] >= fitted.num_classes:
        raise DataError(f"labels {labels} fall outside [0, {fitted.num_classes})")
    return fitted


def negative_class_for(positive_class):
    return 0 if positive_class != 0 else 1


def write_json(path, document):
    with staged_output(path) as staging:
        Path(staging).write_text(json.dumps(document, indent=2, sort_keys=True), encoding="utf-8")
    return Path(path)


def write_frame(path, frame):
    with staged_output(path) as staging:
        frame.to_csv(staging, index=False, float_format="%.17g")
    return Path(path)


def summarize(fold_metrics):
    """Mean and population standard deviation of each metric across folds"""
    summary = {}
    for name in SUMMARY_METRICS:
        values = [m[name] for m in fold_metrics if m.get(name) is not None]
        if values:
            summary[name] = {"mean": float(np.mean(values)), "std": float(np.std(values)), "folds": len(values)}
    return summary


class ExperimentRunner:
    """Runs every fold of one configuration and records its artifacts"""

    def __init__(self, config, command="train"):
        """
        Args:
            config (RunConfig): Validated configuration
            command (str): Subcommand recorded in the registry
        """
        self.config = config
        self.command = command
        self.out_dir = Path(config.out_dir)
        os.makedirs(self.out_dir, exist_ok=True)
        self.store = RunStore(confined_path(self.out_dir, REGISTRY_FILE))
        self.written = []

        logger.info(f"Initialized experiment runner in {self.out_dir} (seed {config.seed})")

    def close(self):
        self.store.close()

    def _predictions(self, model, scans):
        probs = model.predict_proba(np.stack([s.values for s in scans]))
        frame = pd.DataFrame({
            "scan_id": [s.scan_id for s in scans],
            "subject_id": [s.subject_id for s in scans],
            "label": [s.label for s in scans],
            "predicted": probs.argmax(axis=1),
        })
        for c in range(probs.shape[1]):
            frame[f"prob_{c}"] = probs[:, c]
        return frame

    def _run_fold(self, run_id, plan, fold, dataset, model_config):
        config = self.config
        result = train_fold(plan, fold, dataset, model_config, config.hyper)
        split = plan.folds[fold]
        test_scans = [dataset[s] for s in split.test]

        report = evaluate_metrics(result.model, test_scans, config.positive_class,
                                  negative_class_for(config.positive_class))
        metrics = report.to_dict()
        logger.info(f"Fold {fold}: test accuracy {report.accuracy:.4f} on {report.n_samples} scans")

        checkpoint = Path("checkpoints") / f"fold{fold}.dcaw"
        self.written.append(result.model.save(confined_path(self.out_dir, checkpoint),
                                              {"fold": fold, "seed": result.seed, "best_epoch": result.best_epoch,
                                               "fingerprint": config.fingerprint}))

        curves = Path(f"curves_fold{fold}.csv")
        self.written.append(write_frame(confined_path(self.out_dir, curves), result.history_frame()))
        predictions = Path(f"predictions_fold{fold}.csv")
        self.written.append(write_frame(confined_path(self.out_dir, predictions),
                                        self._predictions(result.model, test_scans)))

        roc = None
        if report.roc is not None:
            roc = Path(f"roc_fold{fold}.csv")
            self.written.append(write_frame(confined_path(self.out_dir, roc), pd.DataFrame(report.roc)))

        self.store.record_fold(run_id, fold, result.best_epoch, metrics, checkpoint)
        self.store.record_epochs(run_id, fold, result.history)

        return {
            "fold": fold,
            "seed": result.seed,
            "best_epoch": result.best_epoch,
            "n_train": len(split.train),
            "n_val": len(split.val),
            "n_test": len(split.test),
            "metrics": metrics,
            "checkpoint": checkpoint.as_posix(),
            "curves": curves.as_posix(),
            "predictions": predictions.as_posix(),
            "roc": roc.as_posix() if roc else None,
        }

    def run(self):
        """
        Train and evaluate every fold, then write the manifest

        Returns:
            dict: The manifest
        """
        config = self.config
        scans = load_scans(config)
        model_config = fit_model_config(config.model, scans)
        dataset = {scan.scan_id: scan for scan in scans}

        plan = make_subject_folds(((s.subject_id, s.scan_id) for s in scans),
                                  k=config.folds, seed=config.seed, val_fraction=config.val_fraction)
        counts = count_parameters(init_params(model_config, np.random.default_rng(0)))

        run_id = self.store.record_run(self.command, config.fingerprint, config.to_dict(), config.seed,
                                       model_config.dca_enabled, counts["total"])
        logger.info(f"Run {run_id}: {len(scans)} scans, {len(plan.fold_of)} subjects, "
                    f"{counts['total']} parameters, attention {'on' if model_config.dca_enabled else 'off'}")

        folds = [self._run_fold(run_id, plan, fold, dataset, model_config) for fold in range(plan.k)]
        summary = summarize([f["metrics"] for f in folds])

        manifest = {
            "command": self.command,
            "config": config.to_dict(),
            "fingerprint": config.fingerprint,
            "model_config": model_config.to_dict(),
            "parameter_count": dict(counts),
            "total_parameters": counts["total"],
            "n_scans": len(scans),
            "n_subjects": len(plan.fold_of),
            "split": plan.to_dict(),
            "folds": folds,
            "summary": summary,
        }
        write_json(confined_path(self.out_dir, MANIFEST_FILE), manifest)

        accuracy = summary.get("accuracy", {})
        self.store.finish_run(run_id, accuracy.get("mean"), accuracy.get("std"))
        logger.info(f"Run {run_id} complete: accuracy {accuracy.get('mean', float('nan')):.4f} "
                    f"+/- {accuracy.get('std', float('nan')):.4f}")
        return manifest


def run_experiment(config, command="train"):
    """Run all folds of config and return the manifest"""
    runner = ExperimentRunner(config, command)
    try:
        return runner.run()
    except BaseException:
        # earlier folds finished, the run did not
        mark_partial(runner.written)
        raise
    finally:
        runner.close()
