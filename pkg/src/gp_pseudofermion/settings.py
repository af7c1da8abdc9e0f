"""Pseudofermion GP Sampler Experiment Configuration.

This module defines the experiment configuration tree and the builders that turn it into
runtime objects. Configuration files are TOML (one table per section) or JSON; dotted
`key=value` overrides from the command line take precedence over file values. Defaults
reproduce the reference settings: 15 poles, solver tolerance 1e-6, identity mass matrix,
theta_0 = 0.01, IAT window constant 5 and Anderson depth 10.

Features:
- `ExperimentConfig`, a pydantic-settings model whose only source is explicit input.
- `load_config` reading TOML or JSON through pydantic-settings file sources.
- `build_template`, `build_target`, `build_hmc_config`, `build_sampler`.

License:
MIT License (c) 2025 Shingo OKAWA
"""

from pathlib import Path
from typing import Literal, Mapping, Optional
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from pydantic_settings import (
    BaseSettings,
    JsonConfigSettingsSource,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    TomlConfigSettingsSource,
)
from gp_pseudofermion.anderson import AndersonConfig
from gp_pseudofermion.diagnostics import IATConfig
from gp_pseudofermion.errors import ConfigError
from gp_pseudofermion.integrators import HMCConfig, MassMatrix
from gp_pseudofermion.kernel_model import DEFAULT_TILE_SIZE, Dataset, HyperParams
from gp_pseudofermion.matfree_linalg import SolveConfig
from gp_pseudofermion.samplers import BurnIn, SamplerSpec
from gp_pseudofermion.target import DEFAULT_DENSE_LIMIT, FlatPrior, GaussianPrior, TargetModel
from gp_pseudofermion.utils import apply_overrides


# Name of the configuration snapshot inside an artifact directory.
SNAPSHOT = "config.json"


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SamplerSection(Section):
    """The theta update and its integrator."""

    kind: Literal["rwm", "hmc-leapfrog", "hmc-implicit"] = Field(
        default="hmc-leapfrog",
        description="The theta update: random-walk Metropolis or HMC with either integrator.",
    )
    dt: float = Field(
        default=0.4,
        ge=0.0,
        description="The step size (RWM proposal scale, or HMC integration step).",
    )
    n_int: int = Field(
        default=3,
        ge=1,
        description="Integration steps per HMC trajectory.",
    )
    initial_value: float = Field(
        default=0.01,
        description="The starting value of every hyperparameter.",
    )
    mass_diagonal: Optional[list[float]] = Field(
        default=None,
        description="A diagonal mass matrix; the identity when omitted.",
    )


class TargetSection(Section):
    """The extended density and its prior."""

    kind: Literal["pseudofermion", "determinant"] = Field(
        default="pseudofermion",
        description="Sample the pseudofermion density or the dense determinant reference.",
    )
    prior: Literal["flat", "gaussian"] = Field(
        default="flat",
        description="The prior over theta.",
    )
    prior_scale: float = Field(
        default=1.0,
        gt=0.0,
        description="The standard deviation of the Gaussian prior.",
    )
    dense_limit: int = Field(
        default=DEFAULT_DENSE_LIMIT,
        ge=1,
        description="Largest N admitted by the determinant target.",
    )
    tile_size: int = Field(
        default=DEFAULT_TILE_SIZE,
        ge=1,
        description="Rows per streamed kernel block.",
    )


class ChainsSection(Section):
    """The chain batch."""

    batch: int = Field(default=4, ge=1, description="The number of independent chains B.")
    steps: int = Field(default=200, ge=0, description="Outer steps T per chain after burn-in.")
    seed: int = Field(default=0, ge=0, description="The base seed; chain c uses seed + c.")
    workers: int = Field(default=1, ge=1, description="Worker processes running chains.")
    burn_in_steps: int = Field(default=0, ge=0, description="Outer steps of the burn-in phase.")
    burn_in_dt: Optional[float] = Field(
        default=None,
        ge=0.0,
        description="The step size during burn-in; the main step size when omitted.",
    )


class KernelSection(Section):
    """The kernel template: Chebyshev order, fixed scales and which scales are sampled."""

    n_cheb: int = Field(default=2, ge=1, description="Chebyshev coefficients per axis.")
    sigma_sq: float = Field(default=0.1, gt=1e-6, description="The noise variance sigma^2.")
    two_ell_sq: float = Field(default=1.0, gt=1e-3, description="The value of 2 ell^2.")
    freeze_sigma: bool = Field(default=True, description="Keep sigma fixed instead of sampling it.")
    freeze_ell: bool = Field(default=True, description="Keep ell fixed instead of sampling it.")


class PrecondSection(Section):
    """Preconditioning of CG solves and of the implicit-midpoint linear block."""

    kind: Literal["none", "rescale", "nystrom"] = Field(
        default="rescale",
        description="The preconditioner policy.",
    )
    rank: int = Field(default=0, ge=0, description="The Nystrom rank; used with kind = nystrom.")
    refresh: int = Field(default=2, ge=1, description="Outer steps between Nystrom refreshes.")
    rescale: bool = Field(
        default=False,
        description="Rescale the Nystrom preconditioner by its power-method radius.",
    )
    power_iters: int = Field(default=10, ge=1, description="Power-method iterations.")


class PoleSection(Section):
    """The pole expansion used by the Gibbs update."""

    n_p: int = Field(default=15, ge=1, description="The number of poles.")
    shared_krylov: bool = Field(
        default=False,
        description="Solve all pole systems from one shared Krylov space.",
    )
    bound_iterations: int = Field(default=10, ge=1, description="Power iterations for the spectral bound.")
    bound_inflation: float = Field(default=1.1, ge=1.0, description="Safety factor on the upper bound.")


class SolverSection(Section):
    """Linear solver limits."""

    tol: float = Field(default=1e-6, gt=0.0, description="Relative residual tolerance.")
    max_iter: int = Field(default=1000, ge=1, description="Iteration budget per solve.")


class DataSection(Section):
    """Where the data comes from."""

    source: Literal["synthetic", "csv"] = Field(default="synthetic", description="The data source.")
    path: Optional[Path] = Field(default=None, description="The CSV file for source = csv.")
    strict: bool = Field(default=False, description="Fail on malformed CSV rows instead of dropping them.")
    dim: int = Field(default=1, ge=1, description="Input dimension of synthetic data.")
    n_points: int = Field(default=1000, ge=1, description="Size of synthetic data.")
    eta: float = Field(default=0.1, ge=0.0, description="Noise standard deviation of synthetic data.")
    seed: int = Field(default=0, ge=0, description="Seed of the synthetic generator.")
    subsample: Optional[int] = Field(default=None, ge=1, description="Keep this many random points.")
    subsample_seed: int = Field(default=0, ge=0, description="Seed of the subsample.")

    @model_validator(mode="after")
    def _needs_path(self) -> "DataSection":
        if self.source == "csv" and self.path is None:
            raise ValueError("data.path is required when data.source = csv")
        return self


class ScaleSection(Section):
    """The scaling experiment."""

    mode: Literal["points", "cheb"] = Field(default="points", description="Vary N or N_cheb.")
    points: list[int] = Field(
        default_factory=lambda: [500, 1000, 2000, 4000],
        description="Dataset sizes for mode = points.",
    )
    cheb: list[int] = Field(default_factory=lambda: [2, 4, 6], description="Orders for mode = cheb.")
    sigma_sq: float = Field(default=0.1, gt=1e-6, description="Noise variance of the narrowed kernel.")
    reference_points: float = Field(
        default=1e4,
        gt=0.0,
        description="The N at which 2 ell^2 = 1; the kernel narrows as (N / this)^(-2/d).",
    )


class PredictSection(Section):
    """The prediction experiment."""

    resolution: int = Field(default=50, ge=2, description="Grid points per axis.")
    thin: int = Field(default=1, ge=1, description="Keep every thin-th sample.")
    std_clip: Optional[tuple[float, float]] = Field(
        default=None,
        description="Clip the reported std to [low, high]; the raw column is always kept.",
    )


class VerifySection(Section):
    """The verification experiment against the quadrature reference."""

    samplers: list[Literal["rwm", "hmc-leapfrog", "hmc-implicit"]] = Field(
        default_factory=lambda: ["rwm", "hmc-leapfrog", "hmc-implicit"],
        description="Samplers to compare.",
    )
    dt: dict[str, float] = Field(
        default_factory=lambda: {"rwm": 0.25, "hmc-leapfrog": 0.4, "hmc-implicit": 0.15},
        description="Step size per sampler.",
    )
    n_points: int = Field(default=10, ge=1, description="Equispaced points with y = 1.")
    lower: float = Field(default=-3.0, description="Lower bound of the quadrature box.")
    upper: float = Field(default=3.0, description="Upper bound of the quadrature box.")
    resolution: int = Field(default=100, ge=2, description="Quadrature points per axis.")
    checkpoints: int = Field(default=20, ge=1, description="Points of the error series.")


class ExperimentConfig(BaseSettings):
    """The complete configuration of one experiment run.

    Values come only from explicit input (files and overrides); environment variables
    are ignored so that the snapshot reproduces a run exactly.
    """

    model_config = SettingsConfigDict(extra="forbid")

    sampler: SamplerSection = Field(default_factory=SamplerSection)
    target: TargetSection = Field(default_factory=TargetSection)
    chains: ChainsSection = Field(default_factory=ChainsSection)
    kernel: KernelSection = Field(default_factory=KernelSection)
    precond: PrecondSection = Field(default_factory=PrecondSection)
    pole: PoleSection = Field(default_factory=PoleSection)
    solver: SolverSection = Field(default_factory=SolverSection)
    anderson: AndersonConfig = Field(default_factory=AndersonConfig)
    iat: IATConfig = Field(default_factory=IATConfig)
    data: DataSection = Field(default_factory=DataSection)
    scale: ScaleSection = Field(default_factory=ScaleSection)
    predict: PredictSection = Field(default_factory=PredictSection)
    verify: VerifySection = Field(default_factory=VerifySection)
    output: Path = Field(default=Path("runs/latest"), description="The artifact directory.")

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        return (init_settings,)

    @model_validator(mode="after")
    def _consistent(self) -> "ExperimentConfig":
        if self.precond.kind == "nystrom" and self.precond.rank == 0:
            raise ValueError("precond.kind = nystrom needs precond.rank > 0")
        if self.pole.shared_krylov and self.precond.rank:
            raise ValueError("pole.shared_krylov cannot be combined with a Nystrom rank")
        return self


def read_config_file(path: Path) -> dict:
    """Reads a TOML or JSON configuration file into a nested mapping."""
    if not path.is_file():
        raise FileNotFoundError(f"configuration file not found: {path}")
    if path.suffix == ".toml":
        return TomlConfigSettingsSource(ExperimentConfig, toml_file=path)()
    if path.suffix == ".json":
        return JsonConfigSettingsSource(ExperimentConfig, json_file=path)()
    raise ConfigError(f"unsupported configuration format {path.suffix!r}; use .toml or .json")


def load_config(
    path: Optional[Path] = None,
    overrides: Optional[Mapping[str, str]] = None,
    output: Optional[Path] = None,
) -> ExperimentConfig:
    """Builds the experiment configuration from a file, dotted overrides, and an output path.

    Args:
        path (Optional[Path]): A TOML or JSON file; defaults only when None.
        overrides (Optional[Mapping[str, str]]): `section.key` to value text (JSON or raw string).
        output (Optional[Path]): Replaces the configured artifact directory.

    Returns:
        ExperimentConfig: The validated configuration.

    Raises:
        pydantic.ValidationError: If a value is out of range or a key is unknown.
    """
    tree = read_config_file(path) if path is not None else {}
    tree = apply_overrides(tree, overrides or {})
    if output is not None:
        tree["output"] = str(output)
    return ExperimentConfig(**tree)


def snapshot(config: ExperimentConfig) -> str:
    """The JSON text that `load_config` reads back into an equal configuration."""
    return config.model_dump_json(indent=2)


def build_template(config: ExperimentConfig, dim: int, n_cheb: Optional[int] = None) -> HyperParams:
    """The kernel template with zero Chebyshev coefficients and the configured scales."""
    order = n_cheb or config.kernel.n_cheb
    return HyperParams.from_scales(
        np.zeros((order,) * dim),
        config.kernel.sigma_sq,
        config.kernel.two_ell_sq,
        infer_sigma=not config.kernel.freeze_sigma,
        infer_ell=not config.kernel.freeze_ell,
    )


def build_target(
    config: ExperimentConfig,
    dataset: Dataset,
    template: Optional[HyperParams] = None,
    kind: Optional[str] = None,
) -> TargetModel:
    """The target model for `dataset` under the configured solver and preconditioner."""
    prior = GaussianPrior(config.target.prior_scale) if config.target.prior == "gaussian" else FlatPrior()
    return TargetModel(
        kind=kind or config.target.kind,
        dataset=dataset,
        template=template or build_template(config, dataset.dim),
        solve_config=SolveConfig(tol=config.solver.tol, max_iter=config.solver.max_iter),
        prior=prior,
        n_poles=config.pole.n_p,
        shared_krylov=config.pole.shared_krylov,
        precond_rank=config.precond.rank if config.precond.kind == "nystrom" else 0,
        tile_size=config.target.tile_size,
        dense_limit=config.target.dense_limit,
        bound_iterations=config.pole.bound_iterations,
        bound_inflation=config.pole.bound_inflation,
    )


def build_hmc_config(config: ExperimentConfig, kind: Optional[str] = None, dt: Optional[float] = None) -> HMCConfig:
    kind = kind or config.sampler.kind
    mass = None
    if config.sampler.mass_diagonal is not None:
        values = np.asarray(config.sampler.mass_diagonal, dtype=float)
        mass = MassMatrix(values.shape[0], "diagonal", values)
    return HMCConfig(
        dt=config.sampler.dt if dt is None else dt,
        n_int=config.sampler.n_int,
        integrator="implicit_midpoint" if kind == "hmc-implicit" else "leapfrog",
        mass=mass,
        preconditioner=config.precond.kind,
        rescale=config.precond.rescale,
        power_iters=config.precond.power_iters,
        anderson=config.anderson,
    )


def build_sampler(config: ExperimentConfig, kind: Optional[str] = None, dt: Optional[float] = None) -> SamplerSpec:
    """The sampler spec; `kind` and `dt` replace the configured ones when given."""
    kind = kind or config.sampler.kind
    return SamplerSpec(
        kind=kind,
        hmc=build_hmc_config(config, kind, dt),
        refresh=config.precond.refresh,
        initial_value=config.sampler.initial_value,
        burn_in=BurnIn(config.chains.burn_in_steps, config.chains.burn_in_dt),
    )
