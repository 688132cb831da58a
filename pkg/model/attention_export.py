"""
Attention score export: one text matrix and one SVG heatmap per channel
"""

import os
import re
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from model.layers import AttentionScores
from utils.errors import DataError
from utils.logger import logger
from utils.outputs import staged_output

FILE_PATTERN = re.compile(r"attn_ch(\d+)\.csv$")


def channel_stem(channel):
    """File stem for a 0-based channel index; names count channels from 1"""
    return f"attn_ch{channel + 1}"


def _write_heatmap(matrix, path, title, region_names=None):
    # colors are scaled per row so weak rows stay readable
    row_max = matrix.max(axis=1, keepdims=True)
    scaled = np.divide(matrix, row_max, out=np.zeros_like(matrix), where=row_max > 0)

    size = max(4.0, min(16.0, matrix.shape[0] * 0.12))
    fig, ax = plt.subplots(figsize=(size, size))
    image = ax.imshow(scaled, cmap="viridis", vmin=0.0, vmax=1.0, interpolation="nearest")
    ax.set_title(title)
    ax.set_xlabel("region j")
    ax.set_ylabel("region i")
    if region_names and len(region_names) <= 40:
        ticks = np.arange(len(region_names))
        ax.set_xticks(ticks, labels=region_names, rotation=90, fontsize=6)
        ax.set_yticks(ticks, labels=region_names, fontsize=6)
    fig.colorbar(image, ax=ax, fraction=0.046, pad=0.04, label="score / row max")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def export_attention(scores, out_dir, region_names=None):
    """
    Write attn_ch{λ}.csv and attn_ch{λ}.svg for every channel

    Args:
        scores (AttentionScores): [C, N, N] scores
        out_dir (str): Destination directory
        region_names (tuple): Optional tick labels

    Returns:
        list[Path]: Written CSV paths
    """
    out_dir = Path(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for channel in range(scores.channels):
        stem = channel_stem(channel)
        matrix = scores.values[channel]

        with staged_output(out_dir / f"{stem}.csv") as staging:
            np.savetxt(staging, matrix, delimiter=",", fmt="%.17g")
        with staged_output(out_dir / f"{stem}.svg") as staging:
            _write_heatmap(matrix, staging, f"{scores.scan_id} channel {channel + 1}".strip(), region_names)

        written.append(out_dir / f"{stem}.csv")

    logger.info(f"Exported {scores.channels} attention channels to {out_dir}")
    return written


def load_attention(directory, scan_id=""):
    """
    Read back every attn_ch*.csv in a directory

    Returns:
        AttentionScores: Channels ordered by their file index
    """
    found = []
    for path in Path(directory).iterdir():
        match = FILE_PATTERN.match(path.name)
        if match:
            found.append((int(match.group(1)), path))
    if not found:
        raise DataError(f"no attention matrices in {directory}")

    matrices = [np.loadtxt(path, delimiter=",", ndmin=2) for _, path in sorted(found)]
    return AttentionScores(values=np.stack(matrices), scan_id=scan_id)
