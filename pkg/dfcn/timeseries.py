"""
Region-averaged BOLD time series: ingestion and dataset directories

Time-series files are UTF-8, comma-delimited, one header row of region names,
one row per time point. A dataset directory holds those files plus index.csv
with columns file, subject_id, scan_id, label.
"""

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd

from utils.errors import DataError
from utils.logger import logger

INDEX_FILE = "index.csv"
INDEX_COLUMNS = ["file", "subject_id", "scan_id", "label"]


class ScanLabel(NamedTuple):
    subject_id: str
    scan_id: str
    label: int


@dataclass
class RoiTimeSeries:
    """One scan: M time points x N regions with subject/scan/label identity"""

    subject_id: str
    scan_id: str
    label: int
    values: np.ndarray
    region_names: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"scan {self.scan_id}: expected a 2-D array, got shape {self.values.shape}")
        if self.n_regions < 2:
            raise DataError(f"scan {self.scan_id}: need at least 2 regions, got {self.n_regions}")
        if not np.isfinite(self.values).all():
            raise DataError(f"scan {self.scan_id}: values contain NaN or infinity")
        if not self.region_names:
            self.region_names = tuple(f"R{i + 1:03d}" for i in range(self.n_regions))
        self.region_names = tuple(self.region_names)

    @property
    def n_timepoints(self):
        return self.values.shape[0]

    @property
    def n_regions(self):
        return self.values.shape[1]


def load_timeseries(path, label_map=None, default_label=0):
    """
    Load one time-series file

    Args:
        path (str): Path to the delimited file
        label_map (Mapping[str, ScanLabel]): Identity keyed by file name; when the file
            is absent, subject and scan ids fall back to the file stem
        default_label (int): Label used for files missing from label_map

    Returns:
        RoiTimeSeries: Validated series
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"time-series file not found: {path}")

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.ParserError as e:
        raise DataError(f"{path}: ragged rows: {e}")
    except (pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"{path}: unreadable: {e}")

    if frame.shape[1] < 2:
        raise DataError(f"{path}: need at least 2 region columns, got {frame.shape[1]}")
    if frame.shape[0] == 0:
        raise DataError(f"{path}: no time points after the header row")

    missing = frame.isna().to_numpy()
    if missing.any():
        row, col = np.argwhere(missing)[0]
        raise DataError(f"{path}: ragged row at line {row + 2}: only {col} of {frame.shape[1]} columns present")

    numeric = frame.apply(lambda column: pd.to_numeric(column.str.strip(), errors="coerce"))
    values = numeric.to_numpy(dtype=np.float64)
    bad = ~np.isfinite(values)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise DataError(f"{path}: non-numeric or non-finite cell '{frame.iat[row, col]}' "
                        f"at line {row + 2}, column {col + 1} ({frame.columns[col]})")

    if label_map is not None and path.name in label_map:
        identity = label_map[path.name]
    else:
        identity = ScanLabel(path.stem, path.stem, default_label)

    series = RoiTimeSeries(
        subject_id=str(identity.subject_id),
        scan_id=str(identity.scan_id),
        label=int(identity.label),
        values=values,
        region_names=tuple(str(c) for c in frame.columns),
    )
    logger.info(f"Loaded {path.name}: M={series.n_timepoints}, N={series.n_regions}")
    return series


def write_timeseries(series, path):
    """Write a series in the delimited text format"""
    frame = pd.DataFrame(series.values, columns=list(series.region_names))
    frame.to_csv(path, index=False, encoding="utf-8")
    return Path(path)


def read_index(directory):
    """
    Read a dataset index

    Returns:
        dict: file name -> ScanLabel
    """
    index_path = Path(directory) / INDEX_FILE
    if not index_path.is_file():
        raise DataError(f"dataset index not found: {index_path}")
    frame = pd.read_csv(index_path, dtype=str, keep_default_na=False)
    absent = [c for c in INDEX_COLUMNS if c not in frame.columns]
    if absent:
        raise DataError(f"{index_path}: missing columns {absent}")

    label_map = {}
    for row_number, row in enumerate(frame.itertuples(index=False), start=2):
        try:
            label = int(row.label)
        except ValueError:
            raise DataError(f"{index_path}: line {row_number}: label '{row.label}' is not an integer")
        label_map[row.file] = ScanLabel(row.subject_id, row.scan_id, label)
    return label_map


def load_dataset(directory):
    """
    Load every scan listed in a dataset directory's index

    Returns:
        list[RoiTimeSeries]: Scans in index order
    """
    directory = Path(directory)
    label_map = read_index(directory)
    series = [load_timeseries(directory / name, label_map) for name in label_map]
    logger.info(f"Loaded {len(series)} scans from {directory}")
    return series


def write_dataset(series_list, directory):
    """
    Write scans and their index into a dataset directory

    Returns:
        Path: The index file
    """
    directory = Path(directory)
    os.makedirs(directory, exist_ok=True)
    rows = []
    for series in series_list:
        name = f"{series.scan_id}.csv"
        write_timeseries(series, directory / name)
        rows.append({"file": name, "subject_id": series.subject_id,
                     "scan_id": series.scan_id, "label": series.label})
    index_path = directory / INDEX_FILE
    pd.DataFrame(rows, columns=INDEX_COLUMNS).to_csv(index_path, index=False)
    logger.info(f"Wrote {len(rows)} scans to {directory}")
    return index_path
