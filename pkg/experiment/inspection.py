"""
Post-training inspection: attention export, representative scans, learned features
"""

from pathlib import Path

import numpy as np

from engine.tensor import no_grad
from model.attention_export import export_attention
from model.layers import AttentionScores
from utils.errors import UsageError
from utils.logger import logger


def _require_attention(model):
    if not model.config.dca_enabled:
        raise UsageError("the model was trained without the attention layer; there are no scores to extract")


def attention_scores(model, scans, batch_size=32):
    """Eval-mode attention scores for each scan, in input order"""
    _require_attention(model)
    scores = []
    with no_grad():
        for start in range(0, len(scans), batch_size):
            chunk = scans[start:start + batch_size]
            result = model.forward(np.stack([s.values for s in chunk]), training=False)
            for scan, score in zip(chunk, result.scores):
                score.scan_id = scan.scan_id
                scores.append(score)
    return scores


def extract_attention(model, scan, out_dir):
    """
    Export the per-channel score matrices of one scan

    Args:
        model (DcaCrnModel): Trained network with attention enabled
        scan (DfcnTensor): Scan to inspect
        out_dir (str): Destination directory

    Returns:
        list[Path]: One CSV per channel
    """
    scores = attention_scores(model, [scan])[0]
    return export_attention(scores, out_dir, scan.region_names)


def most_confident_scans(model, scans):
    """
    Per class, the correctly classified scan with the highest predicted probability

    A class with no correctly classified scan falls back to its scan with the
    highest probability for the true label, so every class present gets one.

    Returns:
        dict[int, tuple[DfcnTensor, float]]: Class label to (scan, probability)
    """
    if not scans:
        raise UsageError("no scans to inspect")
    probs = model.predict_proba(np.stack([s.values for s in scans]))
    predicted = probs.argmax(axis=1)

    correct, fallback = {}, {}
    for index, scan in enumerate(scans):
        confidence = float(probs[index, scan.label])
        pool = correct if predicted[index] == scan.label else fallback
        if scan.label not in pool or confidence > pool[scan.label][1]:
            pool[scan.label] = (scan, confidence)

    for label in sorted(set(fallback) - set(correct)):
        scan, confidence = fallback[label]
        logger.warning(f"No correctly classified scan for class {label}; "
                       f"using {scan.scan_id} (p={confidence:.4f})")
        correct[label] = fallback[label]
    return dict(sorted(correct.items()))


def class_mean_attention(model, scans):
    """
    Channel-wise mean attention per class; rows of a mean of stochastic matrices still sum to 1

    Returns:
        dict[int, AttentionScores]: Class label to mean scores
    """
    scores = attention_scores(model, scans)
    by_class = {}
    for scan, score in zip(scans, scores):
        by_class.setdefault(scan.label, []).append(score.values)
    return {
        label: AttentionScores(values=np.mean(stack, axis=0), scan_id=f"class {label} mean")
        for label, stack in sorted(by_class.items())
    }


def export_class_means(model, scans, out_dir):
    written = {}
    region_names = scans[0].region_names if scans else None
    for label, scores in class_mean_attention(model, scans).items():
        written[label] = export_attention(scores, Path(out_dir) / f"class_{label}", region_names)
    return written


def extract_features(model, scans, batch_size=32):
    """
    Eval-mode learned features

    Returns:
        dict: "head" [S, H] post-ReLU final LSTM state, "con1" [S, C1, N, U1] activations
    """
    heads, con1 = [], []
    with no_grad():
        for start in range(0, len(scans), batch_size):
            chunk = scans[start:start + batch_size]
            result = model.forward(np.stack([s.values for s in chunk]), training=False, capture=True)
            heads.append(result.features["head"])
            con1.append(result.features["con1"])
    if not heads:
        raise UsageError("no scans to extract features from")
    return {"head": np.concatenate(heads), "con1": np.concatenate(con1)}
