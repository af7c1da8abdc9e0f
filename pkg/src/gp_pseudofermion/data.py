"""Dataset Ingestion and Preprocessing.

This module reads observation tables, maps them into the reference box [-1, 1]^d with a
recorded affine transform, and generates synthetic data y = prod_j cos(x^j) + eta * noise.

CSV files carry a header row with one column per coordinate (`x1` ... `xd`) and one `y`
column, UTF-8 encoded with `.` as decimal separator.

Features:
- `load_csv` reporting malformed rows by file line number, strict or lenient.
- `write_csv` with shortest round-trip float formatting.
- `normalize` and the invertible `AffineTransform`.
- `synth_dataset` and `subsample`.

License:
MIT License (c) 2025 Shingo OKAWA
"""

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional
import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from gp_pseudofermion.errors import DatasetError
from gp_pseudofermion.kernel_model import Dataset


# The logger instance for this module.
LOGGER = logging.getLogger(__name__)
# Coordinate columns are named x1, x2, ...
COORDINATE = re.compile(r"^x([1-9][0-9]*)$")
# Header line plus one-based numbering.
_LINE_OFFSET = 2


@dataclass(frozen=True, eq=False)
class RawDataset:
    """Points and observations in their original units."""

    points: np.ndarray
    observations: np.ndarray

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def _to_float(cell: object) -> float:
    try:
        return float(cell)  # type: ignore[arg-type]
    except (TypeError, ValueError):
        return float("nan")


def _coordinate_columns(columns: list[str], path: Path) -> list[str]:
    indexed = sorted((int(match.group(1)), name) for name in columns if (match := COORDINATE.match(name)))
    if not indexed:
        raise DatasetError(f"{path}: header has no coordinate columns x1..xd")
    expected = list(range(1, len(indexed) + 1))
    if [index for index, _ in indexed] != expected:
        raise DatasetError(f"{path}: coordinate columns must be x1..x{len(indexed)} without gaps")
    if "y" not in columns:
        raise DatasetError(f"{path}: header has no observation column y")
    return [name for _, name in indexed]


def load_csv(path: Path, strict: bool = False) -> RawDataset:
    """Reads a CSV table of coordinates and observations.

    Args:
        path (Path): The file to read.
        strict (bool): Raise on malformed rows instead of dropping them with a warning.

    Returns:
        RawDataset: The parsed rows.

    Raises:
        DatasetError: If the file is empty, columns are missing, or (in strict mode) a
            row holds a missing or non-numeric cell.
    """
    try:
        frame = pd.read_csv(path, dtype=str, encoding="utf-8", skipinitialspace=True)
    except pd.errors.EmptyDataError as error:
        raise DatasetError(f"{path}: file is empty") from error
    except pd.errors.ParserError as error:
        raise DatasetError(f"{path}: {error}") from error
    frame.columns = [str(column).strip() for column in frame.columns]
    columns = _coordinate_columns(list(frame.columns), path) + ["y"]
    values = frame[columns].map(_to_float)
    malformed = values.isna().any(axis=1) | ~np.isfinite(values.to_numpy(dtype=float)).all(axis=1)
    if malformed.any():
        lines = (np.flatnonzero(malformed.to_numpy()) + _LINE_OFFSET).tolist()
        message = f"{path}: malformed rows at lines {lines}"
        if strict:
            raise DatasetError(message)
        LOGGER.warning(f"{message}; dropped {len(lines)} rows")
        values = values[~malformed]
    if values.empty:
        raise DatasetError(f"{path}: no data rows")
    LOGGER.info(f"{path}: read {len(values)} rows of {len(columns) - 1} coordinates")
    table = values.to_numpy(dtype=float)
    return RawDataset(points=table[:, :-1], observations=table[:, -1])


def write_csv(path: Path, dataset: "RawDataset | Dataset") -> Path:
    """Writes `dataset` in the format `load_csv` reads, floats in round-trip precision."""
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = {f"x{j + 1}": dataset.points[:, j] for j in range(dataset.points.shape[1])}
    columns["y"] = dataset.observations
    frame = pd.DataFrame(columns)
    frame.to_csv(path, index=False, float_format=lambda value: repr(float(value)), encoding="utf-8")
    return path


class AffineTransform(BaseModel):
    """The map x -> (x - center) / half_width per axis, and the removed mean of y."""

    center: list[float] = Field(description="The midpoint of each coordinate range.")
    half_width: list[float] = Field(description="Half the range of each coordinate.")
    y_mean: float = Field(default=0.0, description="The mean subtracted from the observations.")

    def forward(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=float) - np.asarray(self.center)) / np.asarray(self.half_width)

    def inverse(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) * np.asarray(self.half_width) + np.asarray(self.center)

    def restore(self, values: np.ndarray) -> np.ndarray:
        """Adds the removed mean back to predicted observations."""
        return np.asarray(values, dtype=float) + self.y_mean

    @property
    def is_identity(self) -> bool:
        return (
            all(c == 0.0 for c in self.center)
            and all(h == 1.0 for h in self.half_width)
            and self.y_mean == 0.0
        )


def normalize(raw: RawDataset) -> tuple[Dataset, AffineTransform]:
    """Maps coordinates into [-1, 1]^d and de-means the observations.

    Axes already inside [-1, 1] are left unchanged; every other axis is mapped by its
    midpoint and half range.

    Raises:
        DatasetError: If the dataset is empty or an axis to rescale has zero range.
    """
    if raw.n_points == 0:
        raise DatasetError("cannot normalize an empty dataset")
    low, high = raw.points.min(axis=0), raw.points.max(axis=0)
    center, half_width = [], []
    for axis in range(raw.dim):
        if low[axis] >= -1.0 and high[axis] <= 1.0:
            center.append(0.0)
            half_width.append(1.0)
            continue
        if high[axis] == low[axis]:
            raise DatasetError(f"coordinate x{axis + 1} has zero range")
        center.append(0.5 * float(low[axis] + high[axis]))
        half_width.append(0.5 * float(high[axis] - low[axis]))
    y_mean = float(np.mean(raw.observations))
    transform = AffineTransform(center=center, half_width=half_width, y_mean=y_mean)
    points = np.clip(transform.forward(raw.points), -1.0, 1.0)
    return Dataset(points, raw.observations - y_mean), transform


def synth_dataset(dim: int, n_points: int, eta: float = 0.1, seed: int = 0) -> Dataset:
    """Draws N uniform points in [-1, 1]^d with y = prod_j cos(x^j) + eta * N(0, 1)."""
    rng = np.random.default_rng(seed)
    points = rng.uniform(-1.0, 1.0, size=(n_points, dim))
    observations = np.prod(np.cos(points), axis=1) + eta * rng.standard_normal(n_points)
    return Dataset(points, observations)


def subsample(raw: RawDataset, size: Optional[int], seed: int = 0) -> RawDataset:
    """Keeps `size` rows chosen uniformly without replacement; all rows when `size` is None."""
    if size is None or size >= raw.n_points:
        return raw
    keep = np.sort(np.random.default_rng(seed).choice(raw.n_points, size=size, replace=False))
    return RawDataset(raw.points[keep], raw.observations[keep])
