"""
Sliding-window dynamic functional connectivity
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from utils.errors import ConfigError, DataError
from utils.logger import logger


@dataclass(frozen=True)
class WindowSpec:
    """Window length L and stride s, both in time points; T is derived per series"""

    length: int = 70
    stride: int = 2

    def validate(self, n_timepoints=None):
        if self.length < 2:
            raise ConfigError(f"window length must be >= 2, got {self.length}", key="window.length")
        if self.stride < 1:
            raise ConfigError(f"window stride must be >= 1, got {self.stride}", key="window.stride")
        if n_timepoints is not None and self.length > n_timepoints:
            raise ConfigError(f"window length {self.length} exceeds series length {n_timepoints}",
                              key="window.length")

    def count(self, n_timepoints):
        """T = floor((M - L) / s) + 1"""
        self.validate(n_timepoints)
        return (n_timepoints - self.length) // self.stride + 1


@dataclass
class DfcnTensor:
    """T stacked N x N correlation matrices of one scan"""

    subject_id: str
    scan_id: str
    label: int
    values: np.ndarray
    region_names: tuple = field(default_factory=tuple)
    degenerate_regions: tuple = field(default_factory=tuple)

    @property
    def n_windows(self):
        return self.values.shape[0]

    @property
    def n_regions(self):
        return self.values.shape[1]

    @property
    def degenerate(self):
        return bool(self.degenerate_regions)


def segment_windows(ts, spec):
    """
    Views of the series, window t covering rows [t*s, t*s + L)

    Args:
        ts (RoiTimeSeries): Source series
        spec (WindowSpec): Window geometry

    Returns:
        np.ndarray: Read-only view [T, L, N]
    """
    spec.validate(ts.n_timepoints)
    # sliding_window_view appends the window axis last: [M-L+1, N, L]
    views = sliding_window_view(ts.values, spec.length, axis=0)[::spec.stride]
    return np.swapaxes(views, 1, 2)


def zero_variance_regions(window):
    """Indices of columns that are exactly constant inside the window"""
    return np.flatnonzero(np.ptp(window, axis=0) == 0)


def pearson_matrix(window):
    """
    Pearson correlation between all region pairs of one window

    Population (1/L) moments; the upper triangle is computed and mirrored so the
    result is exactly symmetric. Constant columns get all-zero rows and columns,
    including the diagonal.

    Args:
        window (np.ndarray): [L, N]

    Returns:
        np.ndarray: [N, N]
    """
    window = np.asarray(window, dtype=np.float64)
    length, n = window.shape
    if length < 2:
        raise DataError(f"need at least 2 time points per window, got {length}")

    degenerate = zero_variance_regions(window)
    centered = window - window.mean(axis=0)
    cov = centered.T @ centered / length
    std = np.sqrt(np.diag(cov)).copy()
    std[degenerate] = 1.0

    corr = cov / np.outer(std, std)
    corr = np.clip(corr, -1.0, 1.0)
    upper = np.triu(corr, 1)
    corr = upper + upper.T
    np.fill_diagonal(corr, 1.0)

    if degenerate.size:
        corr[degenerate, :] = 0.0
        corr[:, degenerate] = 0.0
    return corr


def build_dfcn(ts, spec):
    """
    Stack pearson_matrix over all T windows in order

    Args:
        ts (RoiTimeSeries): Source series
        spec (WindowSpec): Window geometry

    Returns:
        DfcnTensor: [T, N, N] tensor with the degeneracy flag set when any window
            had a zero-variance region
    """
    windows = segment_windows(ts, spec)
    values = np.stack([pearson_matrix(w) for w in windows])

    flagged = set()
    for w in windows:
        flagged.update(int(i) for i in zero_variance_regions(w))
    if flagged:
        logger.warning(f"Scan {ts.scan_id}: zero-variance regions {sorted(flagged)} set to 0 correlation")

    logger.info(f"Built dFCN for {ts.scan_id}: T={values.shape[0]}, N={values.shape[1]}")
    return DfcnTensor(
        subject_id=ts.subject_id,
        scan_id=ts.scan_id,
        label=ts.label,
        values=values,
        region_names=ts.region_names,
        degenerate_regions=tuple(sorted(flagged)),
    )
