"""
Logging configuration for the DCA-CRN toolkit

The shared logger writes to the console only. Commands add a rotating file
under <out>/logs for their duration, so nothing is written outside --out.
"""

import logging
import os
from logging.handlers import RotatingFileHandler
from pathlib import Path

LOGGER_NAME = "DCACRN"
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
RUN_LOG_FILE = "dcacrn.log"


def setup_logger(log_level=logging.INFO):
    """
    Build the console logger shared by every module

    Args:
        log_level (int): Logging level (default: INFO)

    Returns:
        logging.Logger: Configured logger
    """
    console_handler = logging.StreamHandler()
    console_handler.setFormatter(logging.Formatter(LOG_FORMAT))

    shared = logging.getLogger(LOGGER_NAME)
    shared.setLevel(log_level)
    if shared.handlers:
        shared.handlers.clear()
    shared.addHandler(console_handler)
    return shared


def attach_run_log(out_dir, log_file=RUN_LOG_FILE, max_size_mb=5, backup_count=5):
    """
    Route the shared logger into <out_dir>/logs for the duration of a command

    Args:
        out_dir (str): Run output directory
        max_size_mb (int): Size at which the run log rotates
        backup_count (int): Rotated files kept

    Returns:
        logging.Handler: The attached handler, to be passed to detach_run_log
    """
    log_dir = Path(out_dir) / "logs"
    os.makedirs(log_dir, exist_ok=True)
    handler = RotatingFileHandler(log_dir / log_file, maxBytes=max_size_mb * 1024 * 1024,
                                  backupCount=backup_count)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(handler)
    logger.info(f"Run log at {log_dir / log_file} (rotates at {max_size_mb}MB, keeps {backup_count})")
    return handler


def detach_run_log(handler):
    """Remove and close a handler added by attach_run_log"""
    logger.removeHandler(handler)
    handler.close()


logger = setup_logger()
