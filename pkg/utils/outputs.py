"""
Output-directory helpers: staged writes, run lock, path confinement
"""

import os
from contextlib import contextmanager
from pathlib import Path

from utils.errors import ConfigError, UsageError
from utils.logger import logger

PARTIAL_SUFFIX = ".partial"
LOCK_NAME = ".lock"


def confined_path(out_dir, *parts):
    """
    Resolve a path under the output directory, refusing anything that escapes it

    Args:
        out_dir (str): Output directory
        *parts (str): Relative path components

    Returns:
        Path: Absolute path inside out_dir
    """
    root = Path(out_dir).resolve()
    path = root.joinpath(*parts).resolve()
    if path != root and root not in path.parents:
        raise UsageError(f"Refusing to write outside the output directory: {path}")
    return path


@contextmanager
def staged_output(path):
    """
    Write to <path>.partial and rename on success; failures leave the .partial file

    Yields:
        Path: Staging path to write to
    """
    path = Path(path)
    os.makedirs(path.parent, exist_ok=True)
    staging = path.with_name(path.name + PARTIAL_SUFFIX)
    try:
        yield staging
    except BaseException:
        if staging.exists():
            logger.warning(f"Leaving incomplete output at {staging}")
        raise
    os.replace(staging, path)


@contextmanager
def output_lock(out_dir):
    """
    Hold an exclusive lock file in the output directory

    Args:
        out_dir (str): Output directory
    """
    os.makedirs(out_dir, exist_ok=True)
    lock_path = Path(out_dir) / LOCK_NAME
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"output directory is locked by another run ({lock_path})", key="out_dir")

    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield lock_path
    finally:
        try:
            os.remove(lock_path)
        except FileNotFoundError:
            pass


def mark_partial(paths):
    """
    Rename finished outputs of a failed run to <path>.partial

    Returns:
        list[Path]: The renamed paths
    """
    renamed = []
    for path in map(Path, paths):
        if path.exists():
            staging = path.with_name(path.name + PARTIAL_SUFFIX)
            os.replace(path, staging)
            renamed.append(staging)
    if renamed:
        logger.warning(f"Marked {len(renamed)} outputs of the failed run as {PARTIAL_SUFFIX}")
    return renamed
