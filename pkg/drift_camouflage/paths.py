import csv
import logging
from typing import TextIO

import numpy as np

from .models import Ensemble, EnsembleSpec, PathSample, SeededRng, TimeGrid

logger = logging.getLogger(__name__)


def make_grid(dt: float, n_steps: int) -> TimeGrid:
    if not dt > 0:
        raise ValueError(f"Grid 'dt' must be positive, got {dt}")
    if int(n_steps) != n_steps or n_steps < 1:
        raise ValueError(f"Grid 'n_steps' must be a positive integer, got {n_steps}")
    return TimeGrid(dt=float(dt), n_steps=int(n_steps))


def grid_for_horizon(dt: float, horizon: float) -> TimeGrid:
    """Grid with step dt covering [0, horizon]; horizon is rounded to whole steps."""
    if not horizon > 0:
        raise ValueError(f"Horizon must be positive, got {horizon}")
    if not dt > 0:
        raise ValueError(f"Grid 'dt' must be positive, got {dt}")
    return make_grid(dt, max(1, int(round(horizon / dt))))


def brownian_increments(grid: TimeGrid, rng: SeededRng) -> np.ndarray:
    return rng.generator().normal(0.0, np.sqrt(grid.dt), size=grid.n_steps)


def sample_brownian(grid: TimeGrid, rng: SeededRng) -> PathSample:
    values = np.concatenate(([0.0], np.cumsum(brownian_increments(grid, rng))))
    return PathSample(grid, values)


def sample_brownian_ensemble(grid: TimeGrid, seed: int, n_paths: int, source: str = "brownian") -> Ensemble:
    """n_paths Brownian paths, path i drawn from stream (seed, i)."""
    rows = [sample_brownian(grid, SeededRng(seed, i)).values for i in range(n_paths)]
    return Ensemble(EnsembleSpec(n_paths, grid, source), np.vstack(rows))


def _check_same_grid(a: PathSample, b: PathSample) -> None:
    if a.grid != b.grid:
        raise ValueError(f"Paths live on different grids: {a.grid} vs {b.grid}")


def ito_sum_left(integrand: PathSample, integrator: PathSample) -> PathSample:
    # left endpoint: the integrand at t_j multiplies the increment over [t_j, t_{j+1}]
    _check_same_grid(integrand, integrator)
    steps = integrand.values[:-1] * np.diff(integrator.values)
    return PathSample(integrand.grid, np.concatenate(([0.0], np.cumsum(steps))))


def riemann_left(integrand: PathSample) -> PathSample:
    steps = integrand.values[:-1] * integrand.grid.dt
    return PathSample(integrand.grid, np.concatenate(([0.0], np.cumsum(steps))))


def quadratic_variation(path: PathSample) -> float:
    return float(np.sum(np.diff(path.values) ** 2))


def write_path_csv(path: PathSample, fh: TextIO) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["t", "value"])
    for t, v in zip(path.grid.times, path.values):
        writer.writerow([repr(float(t)), repr(float(v))])


def read_path_csv(fh: TextIO) -> PathSample:
    reader = csv.reader(fh)
    header = next(reader, None)
    if header != ["t", "value"]:
        raise ValueError(f"Expected header 't,value', got {header}")
    times, values = [], []
    for row in reader:
        if not row:
            continue
        times.append(float(row[0]))
        values.append(float(row[1]))
    if len(times) < 2:
        raise ValueError("A path CSV needs at least two rows")
    grid = make_grid(times[1] - times[0], len(times) - 1)
    return PathSample(grid, np.array(values))
