"""Pseudofermion GP Hyperparameter Sampler.

This package samples Gaussian-process kernel hyperparameters without evaluating
log-determinants: the determinant factor of the marginal likelihood is traded for an
auxiliary Gaussian field, so every step needs only matrix-free kernel products and
iterative linear solves.

License:
MIT License (c) 2025 Shingo OKAWA
"""

import logging
import sys
from traceback import format_exc
from pydantic import ValidationError
from pydantic_settings import SettingsError
from gp_pseudofermion.cli import Diagnose, get_command, get_settings as Cli
from gp_pseudofermion.config import configure
from gp_pseudofermion.errors import ConfigError, DatasetError
from gp_pseudofermion.experiments import run_experiment, stored_config
from gp_pseudofermion.settings import load_config


# The logger instance for this module.
LOGGER = logging.getLogger(__name__)


def exit_code(error: BaseException) -> int:
    """Maps an exception to the process exit code.

    Returns:
        int: 1 for configuration errors, 3 for I/O and data errors, 2 for any other failure.
    """
    if isinstance(error, (ConfigError, ValidationError, SettingsError)):
        return 1
    if isinstance(error, (OSError, DatasetError)):
        return 3
    return 2


def run() -> None:
    """Parses the command line, configures logging, and runs the chosen experiment."""
    cli = Cli()
    configure(cli)
    name, command = get_command(cli)
    if isinstance(command, Diagnose):
        config = stored_config(command.output)
    else:
        config = load_config(command.config, command.overrides, command.output)
    directory = run_experiment(config, name)
    LOGGER.info(f"{name} finished; artifacts in {directory}")


def main() -> None:
    """Runs the command line and exits with 0 on success or the mapped error code.

    Returns:
        None
    """
    try:
        run()
    except Exception as error:
        print(format_exc(), file=sys.stderr)
        sys.exit(exit_code(error))
    sys.exit(0)
