"""
Main entry point for the DCA-CRN toolkit
"""

import argparse
import sys
import traceback
from pathlib import Path

import numpy as np
import pandas as pd

from config import load_config
from dfcn.builder import build_dfcn
from dfcn.dfcn_file import SUFFIX, write_dfcn
from dfcn.timeseries import write_dataset
from experiment.inspection import export_class_means, extract_attention, extract_features, most_confident_scans
from experiment.metrics import evaluate_metrics
from experiment.runner import (
    fit_model_config, load_scans, load_timeseries_input, negative_class_for, run_experiment, write_frame, write_json,
)
from experiment.stats import connection_discriminability, feature_ttest, region_discriminability
from experiment.synth import default_spec, synth_generate
from model.network import DcaCrnModel
from utils.errors import ConfigError, DcaCrnError, DimensionError, UsageError
from utils.logger import attach_run_log, detach_run_log, logger
from utils.outputs import confined_path, output_lock

COMMANDS = {
    "build-dfcn": "Build DFCN files from region time series",
    "synth": "Write a planted-block synthetic dataset",
    "train": "Cross-validate the classifier and write manifests and checkpoints",
    "eval": "Score a checkpoint on labeled scans",
    "attn": "Export attention heatmaps from a checkpoint",
    "ttest": "Rank learned features, regions and connections by group t-tests",
}

# flag dest -> dotted config key
FLAG_KEYS = {
    "out": "out_dir",
    "seed": "seed",
    "epochs": "train.epochs",
    "batch": "train.batch",
    "lr": "train.lr",
    "l2": "model.l2_lambda",
    "folds": "train.folds",
    "dk_mode": "model.dk_mode",
    "dca_enabled": "model.dca_enabled",
    "s1": "model.s1",
    "s2": "model.s2",
    "s3": "model.s3",
    "k1": "model.k1",
    "k2": "model.k2",
    "c1": "model.c1",
    "lstm_hidden": "model.lstm_hidden",
    "window_length": "window.length",
    "window_stride": "window.stride",
    "positive_class": "positive_class",
    "checkpoint": "inspect.checkpoint",
    "alpha": "inspect.alpha",
    "label": "inspect.label",
    "class_means": "inspect.class_means",
}

TOP_REGIONS = 10


def _add_common_arguments(parser):
    parser.add_argument("--config", type=str, help="Path to a JSON configuration file")
    parser.add_argument("--out", type=str, help="Output directory")
    parser.add_argument("--seed", type=int, help="Master seed (unsigned 64-bit)")
    parser.add_argument("--input", type=str, help="Time-series file/dataset directory or DFCN file/directory")
    parser.add_argument("--checkpoint", type=str, help="Checkpoint to evaluate or inspect")

    train = parser.add_argument_group("training")
    train.add_argument("--epochs", type=int)
    train.add_argument("--batch", type=int)
    train.add_argument("--lr", type=float)
    train.add_argument("--l2", type=float, help="L2 penalty on the output layer weights")
    train.add_argument("--folds", type=int, help="Number of cross-validation folds")

    model = parser.add_argument_group("model")
    model.add_argument("--no-dca", dest="dca_enabled", action="store_const", const=False,
                       help="Drop the attention layer")
    model.add_argument("--dk-mode", choices=["keylen", "regions"], help="Attention scaling length")
    for name in ("s1", "s2", "s3", "k1", "k2", "c1"):
        model.add_argument(f"--{name}", type=int)
    model.add_argument("--lstm-hidden", type=int)
    model.add_argument("--window-length", type=int)
    model.add_argument("--window-stride", type=int)

    inspect = parser.add_argument_group("inspection")
    inspect.add_argument("--positive-class", type=int, help="Patient class for SEN, AUC and t-test groups")
    inspect.add_argument("--class-means", action="store_const", const=True,
                         help="Also export per-class mean attention")
    inspect.add_argument("--alpha", type=float, help="Significance level")
    inspect.add_argument("--label", type=int, help="Restrict attention export to one class")


def build_parser():
    parser = argparse.ArgumentParser(description="DCA-CRN dynamic functional connectivity classifier")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, help_text in COMMANDS.items():
        _add_common_arguments(subparsers.add_parser(name, help=help_text))
    return parser


def _input_key(command, path):
    path = Path(path)
    if command == "build-dfcn":
        return "data.timeseries_dir"
    if path.suffix == SUFFIX or (path.is_dir() and any(path.glob(f"*{SUFFIX}"))):
        return "data.dfcn_dir"
    return "data.timeseries_dir"


def parse_and_validate(argv=None, config_file=None, env_file=".env"):
    """
    Parse flags and build the effective configuration

    Args:
        argv (list[str]): Command line without the program name
        config_file (str): Config file used when --config is absent
        env_file (str): dotenv file for the environment layer

    Returns:
        RunConfig: Validated configuration with its command set
    """
    args = build_parser().parse_args(argv)
    overrides = {key: getattr(args, dest) for dest, key in FLAG_KEYS.items()}
    if args.input:
        overrides[_input_key(args.command, args.input)] = args.input

    config = load_config(args.config or config_file, overrides, env_file)
    config.command = args.command
    return config


def _require_checkpoint(config):
    if not config.checkpoint:
        raise ConfigError("this command needs --checkpoint", key="inspect.checkpoint")
    return DcaCrnModel.load(config.checkpoint, seed=config.seed)


def _scans_for(model, config):
    scans = load_scans(config)
    expected = (model.config.n_windows, model.config.n_regions, model.config.n_regions)
    if scans[0].values.shape != expected:
        raise DimensionError(f"scans have (T, N, N) = {scans[0].values.shape}, checkpoint expects {expected}")
    fit_model_config(model.config, scans)
    return scans


def cmd_build_dfcn(config):
    if config.timeseries_dir:
        series = load_timeseries_input(config.timeseries_dir)
    elif config.synth is not None:
        series = synth_generate(config.synth)
    else:
        raise ConfigError("build-dfcn needs --input or a synth section", key="data.timeseries_dir")

    for ts in series:
        tensor = build_dfcn(ts, config.window)
        write_dfcn(tensor, confined_path(config.out_dir, "dfcn", f"{tensor.scan_id}{SUFFIX}"))
    logger.info(f"Wrote {len(series)} DFCN files to {confined_path(config.out_dir, 'dfcn')}")
    return 0


def cmd_synth(config):
    spec = config.synth or default_spec(seed=config.seed)
    write_dataset(synth_generate(spec), confined_path(config.out_dir, "synth"))
    write_json(confined_path(config.out_dir, "synth", "spec.json"), spec.to_dict())
    return 0


def cmd_train(config):
    run_experiment(config, "train")
    return 0


def cmd_eval(config):
    model = _require_checkpoint(config)
    scans = _scans_for(model, config)
    report = evaluate_metrics(model, scans, config.positive_class, negative_class_for(config.positive_class))
    write_json(confined_path(config.out_dir, "eval_metrics.json"),
               {"checkpoint": Path(config.checkpoint).name, "metrics": report.to_dict()})
    if report.roc is not None:
        write_frame(confined_path(config.out_dir, "eval_roc.csv"), pd.DataFrame(report.roc))
    logger.info(f"Accuracy {report.accuracy:.4f} on {report.n_samples} scans")
    return 0


def cmd_attn(config):
    model = _require_checkpoint(config)
    if not model.config.dca_enabled:
        raise UsageError("checkpoint was trained with --no-dca; it has no attention scores")
    scans = _scans_for(model, config)
    if config.label is not None:
        scans = [s for s in scans if s.label == config.label]
        if not scans:
            raise UsageError(f"no scans with label {config.label}")

    for scan, _ in most_confident_scans(model, scans).values():
        extract_attention(model, scan, confined_path(config.out_dir, "attention", scan.scan_id))

    if config.class_means:
        export_class_means(model, scans, confined_path(config.out_dir, "attention"))
    return 0


def cmd_ttest(config):
    model = _require_checkpoint(config)
    scans = _scans_for(model, config)
    positive = config.positive_class
    negative = negative_class_for(positive)
    group_a = [s for s in scans if s.label == positive]
    group_b = [s for s in scans if s.label == negative]

    features_a = extract_features(model, group_a)
    features_b = extract_features(model, group_b)
    report = feature_ttest(features_a["head"], features_b["head"])
    write_frame(confined_path(config.out_dir, "ttest_features.csv"), report.to_frame())

    regions = region_discriminability(features_a["con1"], features_b["con1"], scans[0].region_names, config.alpha)
    write_frame(confined_path(config.out_dir, "ttest_regions.csv"), regions)

    top = regions.loc[regions["significant_channels"] > 0, "region_index"].head(TOP_REGIONS).tolist()
    connections = connection_discriminability(np.stack([s.values for s in group_a]),
                                              np.stack([s.values for s in group_b]), top, config.alpha)
    write_frame(confined_path(config.out_dir, "ttest_connections.csv"), connections)
    logger.info(f"{int((report.p < config.alpha).sum())} of {report.p.size} learned features "
                f"separate class {positive} from class {negative} at p < {config.alpha}")
    return 0


HANDLERS = {
    "build-dfcn": cmd_build_dfcn,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "attn": cmd_attn,
    "ttest": cmd_ttest,
}


def dispatch(command, config):
    """
    Run one subcommand while holding the output directory lock

    Returns:
        int: Exit code
    """
    with output_lock(config.out_dir):
        handler = attach_run_log(config.out_dir)
        try:
            logger.info(f"Running {command} (seed {config.seed}, fingerprint {config.fingerprint})")
            return HANDLERS[command](config)
        finally:
            detach_run_log(handler)


def main(argv=None, env_file=".env"):
    """Main entry point"""
    try:
        config = parse_and_validate(argv, env_file=env_file)
        return dispatch(config.command, config)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    except DcaCrnError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.error(f"Unexpected error: {str(e)}")
        logger.error(traceback.format_exc())
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
