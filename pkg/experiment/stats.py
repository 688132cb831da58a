"""
Two-sample pooled-variance t-tests on learned features, regions and connections
"""

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import betainc

from utils.errors import DataError
from utils.logger import logger


@dataclass
class TTestReport:
    """Per-feature t statistics, two-sided p-values and ranks (1 = smallest p)"""

    t: np.ndarray
    p: np.ndarray
    rank: np.ndarray
    degenerate: np.ndarray
    n_a: int
    n_b: int

    @property
    def df(self):
        return self.n_a + self.n_b - 2

    def to_frame(self):
        return pd.DataFrame({
            "feature_index": np.arange(self.t.size),
            "t": self.t,
            "p": self.p,
            "rank": self.rank,
        })


def t_two_sided_p(t, df):
    """Two-sided Student-t tail probability via the regularized incomplete beta function"""
    t = np.asarray(t, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = df / (df + t * t)
    p = betainc(df / 2.0, 0.5, np.where(np.isinf(t), 0.0, x))
    return np.clip(p, 0.0, 1.0)


def rank_by_p(p):
    order = np.argsort(p, kind="stable")
    rank = np.empty(p.size, dtype=np.int64)
    rank[order] = np.arange(1, p.size + 1)
    return rank


def feature_ttest(features_a, features_b):
    """
    Student's two-sample t-test (pooled variance, df = nA + nB - 2) per feature

    Zero pooled variance gives t = 0, p = 1 when the means agree, otherwise
    t = +/-inf, p = 0 with the feature flagged degenerate.

    Args:
        features_a (array-like): [nA, F] or [nA]
        features_b (array-like): [nB, F] or [nB]

    Returns:
        TTestReport: Statistics per feature
    """
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    a = a.reshape(a.shape[0], -1) if a.ndim != 1 else a[:, None]
    b = b.reshape(b.shape[0], -1) if b.ndim != 1 else b[:, None]
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise DataError(f"each group needs at least 2 samples, got {a.shape[0]} and {b.shape[0]}")
    if a.shape[1] != b.shape[1]:
        raise DataError(f"feature counts differ: {a.shape[1]} vs {b.shape[1]}")

    n_a, n_b = a.shape[0], b.shape[0]
    df = n_a + n_b - 2
    diff = a.mean(axis=0) - b.mean(axis=0)
    pooled = ((n_a - 1) * a.var(axis=0, ddof=1) + (n_b - 1) * b.var(axis=0, ddof=1)) / df
    se = np.sqrt(pooled * (1.0 / n_a + 1.0 / n_b))

    zero_var = se == 0
    same_mean = diff == 0
    t = np.zeros_like(diff)
    t[~zero_var] = diff[~zero_var] / se[~zero_var]
    degenerate = zero_var & ~same_mean
    t[degenerate] = np.copysign(np.inf, diff[degenerate])

    p = t_two_sided_p(t, df)
    p[zero_var & same_mean] = 1.0
    p[degenerate] = 0.0

    if degenerate.any():
        logger.warning(f"{int(degenerate.sum())} features have zero pooled variance with distinct means")

    return TTestReport(t=t, p=p, rank=rank_by_p(p), degenerate=degenerate, n_a=n_a, n_b=n_b)


def region_discriminability(con1_a, con1_b, region_names=None, alpha=0.05):
    """
    Rank regions by how many Con1 channels separate the groups

    The time-averaged Con1 feature of every (channel, region) is t-tested;
    regions are ranked by the number of channels with p < alpha, ties by the
    smallest p.

    Args:
        con1_a (np.ndarray): [nA, C1, N, U1]
        con1_b (np.ndarray): [nB, C1, N, U1]
        region_names (tuple): Optional names
        alpha (float): Significance level

    Returns:
        pd.DataFrame: region_index, region_name, significant_channels, min_p, rank
    """
    mean_a = np.asarray(con1_a).mean(axis=-1)
    mean_b = np.asarray(con1_b).mean(axis=-1)
    channels, regions = mean_a.shape[1:]
    report = feature_ttest(mean_a.reshape(mean_a.shape[0], -1), mean_b.reshape(mean_b.shape[0], -1))
    p = report.p.reshape(channels, regions)

    frame = pd.DataFrame({
        "region_index": np.arange(regions),
        "region_name": list(region_names) if region_names else [f"R{i + 1:03d}" for i in range(regions)],
        "significant_channels": (p < alpha).sum(axis=0),
        "min_p": p.min(axis=0),
    })
    frame = frame.sort_values(["significant_channels", "min_p", "region_index"],
                              ascending=[False, True, True], kind="stable")
    frame["rank"] = np.arange(1, regions + 1)
    return frame.reset_index(drop=True)


def connection_discriminability(dfcn_a, dfcn_b, regions, alpha=0.05):
    """
    t-test the time-averaged connectivity among selected regions

    Args:
        dfcn_a (np.ndarray): [nA, T, N, N]
        dfcn_b (np.ndarray): [nB, T, N, N]
        regions (list[int]): Region indices to test pairwise
        alpha (float): Significance level

    Returns:
        pd.DataFrame: region_i, region_j, t, p, significant sorted by p
    """
    regions = list(regions)
    mean_a = np.asarray(dfcn_a).mean(axis=1)
    mean_b = np.asarray(dfcn_b).mean(axis=1)
    pairs = [(i, j) for pos, i in enumerate(regions) for j in regions[pos + 1:]]
    if not pairs:
        return pd.DataFrame(columns=["region_i", "region_j", "t", "p", "significant"])

    rows, cols = np.array(pairs).T
    report = feature_ttest(mean_a[:, rows, cols], mean_b[:, rows, cols])
    frame = pd.DataFrame({
        "region_i": rows,
        "region_j": cols,
        "t": report.t,
        "p": report.p,
        "significant": report.p < alpha,
    })
    return frame.sort_values(["p", "region_i", "region_j"], kind="stable").reset_index(drop=True)
