"""Pseudofermion GP Sampler Logging Configuration.

This module sets up logging for the command-line entry point.

Features:
- Maps the CLI verbosity to a logging level.
- Writes to stderr and to a daily log file under the configured directory.

License:
MIT License (c) 2025 Shingo OKAWA
"""

import logging
import sys
from datetime import datetime
from logging import FileHandler, Formatter, StreamHandler
from pathlib import Path
from gp_pseudofermion.cli import Cli


# Defines logging format.
FORMAT = "%(asctime)s,%(msecs)d - %(name)s - %(levelname)s - %(message)s"
# Defines logging date format.
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
# Maps verbosity names to logging levels.
LEVELS = {
    "debug": logging.DEBUG,
    "info": logging.INFO,
    "warn": logging.WARN,
    "error": logging.ERROR,
    "critical": logging.CRITICAL,
}


def log_file(log_directory: Path) -> Path:
    """Returns today's log file under `log_directory`."""
    return log_directory / f"{datetime.now().strftime('%Y-%m-%d')}.log"


def configure(cli: Cli) -> None:
    """Installs a stderr handler and a daily file handler at the CLI verbosity.

    Args:
        cli (Cli): The parsed command line holding verbosity and log directory.

    Returns:
        None
    """
    cli.gp_log_directory.mkdir(parents=True, exist_ok=True)
    level = LEVELS.get(cli.gp_verbosity, logging.INFO)
    formatter = Formatter(FORMAT, datefmt=DATE_FORMAT)
    file_handler = FileHandler(filename=log_file(cli.gp_log_directory), encoding="utf-8", mode="a")
    stream_handler = StreamHandler(sys.stderr)
    for handler in (file_handler, stream_handler):
        handler.setFormatter(formatter)
        handler.setLevel(level)
    logging.basicConfig(handlers=(stream_handler, file_handler), level=level)
