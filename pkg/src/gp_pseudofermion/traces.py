"""Trace and Result Files.

This module writes chain records and experiment tables as CSV and reads them back.
Every float is written in its shortest round-trip form, so a file read back reproduces
the values bit for bit, and identical runs produce identical files.

A run directory holds:

- `traces.csv`: one row per chain and step, the initial point included (step 0 has
  no accept flag), with the hyperparameter components as `theta_0` ... `theta_{n-1}`;
- `burn_in.csv`: the burn-in phase in the same layout;
- `timings.csv`: the wall time of every step, kept apart so that traces stay
  reproducible;
- `chains.csv`: seed and failure status of every chain and phase.

License:
MIT License (c) 2025 Shingo OKAWA
"""

from pathlib import Path
from typing import Sequence
import numpy as np
import pandas as pd
from gp_pseudofermion.diagnostics import ChainTrace
from gp_pseudofermion.errors import DatasetError
from gp_pseudofermion.samplers import ChainRun


TRACES = "traces.csv"
BURN_IN = "burn_in.csv"
TIMINGS = "timings.csv"
CHAINS = "chains.csv"


def _float_format(value: float) -> str:
    return repr(float(value))


def write_table(path: Path, frame: pd.DataFrame) -> Path:
    """Writes a table with round-trip float formatting."""
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=_float_format, encoding="utf-8", lineterminator="\n")
    return path


def read_table(path: Path, **kwargs) -> pd.DataFrame:
    """Reads a table written by `write_table`, parsing floats exactly."""
    if not path.is_file():
        raise FileNotFoundError(f"result file not found: {path}")
    return pd.read_csv(path, float_precision="round_trip", encoding="utf-8", **kwargs)


def trace_frame(traces: Sequence[ChainTrace]) -> pd.DataFrame:
    """Flattens chain traces into one row per chain and step."""
    frames = []
    for trace in traces:
        steps = trace.thetas.shape[0]
        columns: dict = {
            "chain": np.full(steps, trace.chain_id),
            "step": np.arange(steps),
            "accepted": pd.array([pd.NA, *trace.accepted.astype(int)], dtype="Int64"),
            "delta_h": np.concatenate([[np.nan], trace.delta_h]),
            "solver_iterations": pd.array([pd.NA, *trace.solver_iterations], dtype="Int64"),
        }
        for k in range(trace.thetas.shape[1]):
            columns[f"theta_{k}"] = trace.thetas[:, k]
        frames.append(pd.DataFrame(columns))
    return pd.concat(frames, ignore_index=True)


def timing_frame(run: ChainRun) -> pd.DataFrame:
    frames = []
    for phase, traces in (("burn_in", run.burn_in), ("main", run.traces)):
        for trace in traces:
            frames.append(
                pd.DataFrame(
                    {
                        "phase": phase,
                        "chain": trace.chain_id,
                        "step": np.arange(1, trace.n_steps + 1),
                        "seconds": trace.wall_times,
                    }
                )
            )
    return pd.concat(frames, ignore_index=True)


def chain_frame(run: ChainRun) -> pd.DataFrame:
    rows = [
        {
            "phase": phase,
            "chain": trace.chain_id,
            "seed": trace.seed,
            "failed": int(trace.failed),
            "error": trace.error or "",
        }
        for phase, traces in (("burn_in", run.burn_in), ("main", run.traces))
        for trace in traces
    ]
    return pd.DataFrame(rows)


def write_run(directory: Path, run: ChainRun) -> list[Path]:
    """Writes the four run files into `directory`."""
    return [
        write_table(directory / TRACES, trace_frame(run.traces)),
        write_table(directory / BURN_IN, trace_frame(run.burn_in)),
        write_table(directory / TIMINGS, timing_frame(run)),
        write_table(directory / CHAINS, chain_frame(run)),
    ]


def _traces_from(frame: pd.DataFrame, chains: pd.DataFrame, timings: pd.DataFrame) -> list[ChainTrace]:
    theta_columns = sorted(
        (column for column in frame.columns if column.startswith("theta_")),
        key=lambda column: int(column.split("_")[1]),
    )
    traces = []
    for chain, rows in frame.groupby("chain", sort=True):
        rows = rows.sort_values("step")
        steps = rows.iloc[1:]
        meta = chains[chains["chain"] == chain]
        seconds = timings[timings["chain"] == chain].sort_values("step")["seconds"].to_numpy()
        if seconds.shape[0] != steps.shape[0]:
            seconds = np.zeros(steps.shape[0])
        error = meta["error"].iloc[0] if not meta.empty else None
        traces.append(
            ChainTrace(
                chain_id=int(chain),
                seed=int(meta["seed"].iloc[0]) if not meta.empty else 0,
                thetas=rows[theta_columns].to_numpy(dtype=float),
                accepted=steps["accepted"].to_numpy(dtype=int).astype(bool),
                delta_h=steps["delta_h"].to_numpy(dtype=float),
                wall_times=seconds,
                solver_iterations=steps["solver_iterations"].to_numpy(dtype=int),
                failed=bool(meta["failed"].iloc[0]) if not meta.empty else False,
                error=error if isinstance(error, str) and error else None,
            )
        )
    return traces


def read_run(directory: Path) -> ChainRun:
    """Reads the chain records of a run directory written by `write_run`.

    Raises:
        FileNotFoundError: If `traces.csv` is missing.
        DatasetError: If the trace file is malformed.
    """
    integers = {"accepted": "Int64", "solver_iterations": "Int64"}
    chains = read_table(directory / CHAINS, keep_default_na=False)
    timings = read_table(directory / TIMINGS)
    phases = []
    for name, phase in ((TRACES, "main"), (BURN_IN, "burn_in")):
        try:
            frame = read_table(directory / name, dtype=integers)
            phases.append(
                _traces_from(
                    frame,
                    chains[chains["phase"] == phase],
                    timings[timings["phase"] == phase],
                )
            )
        except (KeyError, ValueError) as error:
            raise DatasetError(f"{directory / name}: malformed trace file: {error}") from error
    return ChainRun(traces=phases[0], burn_in=phases[1])
