"""Pseudofermion GP Sampler Command Line.

This module defines the command line: global logging options followed by one of the
subcommands `verify`, `scale`, `sample`, `predict`, `diagnose`.

Features:
- Global options may also be set through `GP_VERBOSITY` and `GP_LOG_DIRECTORY`
  environment variables or a `.env` file.
- Experiment subcommands take a configuration file, an output directory, and repeated
  `--set section.key=value` overrides.

License:
MIT License (c) 2025 Shingo OKAWA
"""

from functools import lru_cache
from pathlib import Path
from typing import Literal, Optional, Union
from pydantic import AliasChoices, BaseModel, Field
from pydantic_settings import BaseSettings, CliSubCommand, SettingsConfigDict, get_subcommand


class ExperimentCommand(BaseModel):
    """Options shared by the experiment subcommands.

    Attributes:
        config (Optional[Path]): A TOML or JSON configuration file.
        output (Optional[Path]): The artifact directory, overriding the configured one.
        overrides (dict[str, str]): Dotted `section.key` overrides applied over the file.
    """

    config: Optional[Path] = Field(
        default=None,
        description="A TOML or JSON experiment configuration file.",
        validation_alias=AliasChoices("c", "config"),
    )
    output: Optional[Path] = Field(
        default=None,
        description="The artifact directory; overrides `output` in the configuration.",
        validation_alias=AliasChoices("o", "output"),
    )
    overrides: dict[str, str] = Field(
        default_factory=dict,
        description="Configuration overrides such as sampler.dt=0.4; may be repeated.",
        validation_alias=AliasChoices("s", "set"),
    )


class Verify(ExperimentCommand):
    """Checks every sampler against the quadrature reference on the ten-point problem."""


class Scale(ExperimentCommand):
    """Measures seconds per outer step across dataset sizes or Chebyshev orders."""


class Sample(ExperimentCommand):
    """Samples hyperparameters on synthetic or CSV data."""


class Predict(ExperimentCommand):
    """Samples hyperparameters, then predicts mean and std on a grid."""


class Diagnose(BaseModel):
    """Recomputes the diagnostics summary from the traces of an existing run."""

    output: Path = Field(
        description="The artifact directory of an earlier run.",
        validation_alias=AliasChoices("o", "output"),
    )


Command = Union[Verify, Scale, Sample, Predict, Diagnose]


class Cli(BaseSettings):
    """The command line of the sampler.

    Attributes:
        gp_verbosity (Literal["debug", "info", "warn", "error", "critical"]): Logging verbosity level.
        gp_log_directory (Path): Directory where log files will be stored.
    """

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        cli_parse_args=True,
        cli_prog_name="gp-pseudofermion",
        cli_exit_on_error=False,
    )
    gp_verbosity: Literal["debug", "info", "warn", "error", "critical"] = Field(
        default="warn",
        description="The verbosity level for logging.",
        validation_alias=AliasChoices("v", "gp_verbosity"),
    )
    gp_log_directory: Path = Field(
        default=Path(".gp_pseudofermion"),
        description="The directory where log files will be stored.",
        validation_alias=AliasChoices("l", "gp_log_directory"),
    )
    verify: CliSubCommand[Verify]
    scale: CliSubCommand[Scale]
    sample: CliSubCommand[Sample]
    predict: CliSubCommand[Predict]
    diagnose: CliSubCommand[Diagnose]


def get_command(cli: Cli) -> tuple[str, Command]:
    """Returns the name and options of the subcommand given on the command line."""
    command = get_subcommand(cli, cli_exit_on_error=False)
    return type(command).__name__.lower(), command


@lru_cache
def get_settings() -> Cli:
    """Returns a cached instance of the `Cli` class.

    This function ensures that the command line is parsed only once and reused across
    multiple calls.

    Returns:
        Cli: A singleton instance of the `Cli` class.
    """
    return Cli()  # pyright: ignore[reportCallIssue]
