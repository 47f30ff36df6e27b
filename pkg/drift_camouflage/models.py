from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    n_steps: int

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1, dtype=float) * self.dt

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt


@dataclass(frozen=True, eq=False)
class PathSample:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or values.shape[0] != self.grid.n_steps + 1:
            raise ValueError(
                f"PathSample needs {self.grid.n_steps + 1} values, got shape {values.shape}"
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.shape[0]

    def increments(self) -> np.ndarray:
        return np.diff(self.values)


@dataclass(frozen=True)
class SeededRng:
    """One reproducible random stream: (seed, stream_id) fixes every draw.

    `purpose` separates independent draws that belong to the same path (the
    Brownian increments and the hidden sign, for instance), so fixing one of
    them never shifts the other.
    """
    seed: int
    stream_id: int = 0

    def generator(self, purpose: int = 0) -> np.random.Generator:
        seq = np.random.SeedSequence([int(self.seed) & 0xFFFFFFFFFFFFFFFF, int(self.stream_id), int(purpose)])
        return np.random.Generator(np.random.PCG64(seq))


@dataclass(frozen=True)
class EnsembleSpec:
    n_paths: int
    grid: TimeGrid
    source: str = "unknown"


@dataclass(frozen=True, eq=False)
class Ensemble:
    spec: EnsembleSpec
    # rows are paths, columns grid points
    values: np.ndarray
    # optional per-path side information (e.g. the hidden sign), keyed by name
    extras: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        expected = (self.spec.n_paths, self.spec.grid.n_steps + 1)
        if values.shape != expected:
            raise ValueError(f"Ensemble values must have shape {expected}, got {values.shape}")
        if self.spec.n_paths < 2:
            raise ValueError("Ensemble needs at least 2 paths")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def grid(self) -> TimeGrid:
        return self.spec.grid

    @property
    def n_paths(self) -> int:
        return self.spec.n_paths

    def terminal(self) -> np.ndarray:
        return self.values[:, -1]

    def path(self, i: int) -> PathSample:
        return PathSample(self.grid, self.values[i])

    @classmethod
    def from_paths(cls, paths, source: str = "unknown", extras: Optional[dict] = None) -> "Ensemble":
        paths = list(paths)
        if not paths:
            raise ValueError("Ensemble needs at least one path")
        grid = paths[0].grid
        for p in paths:
            if p.grid != grid:
                raise ValueError("All paths of an ensemble must share one grid")
        return cls(EnsembleSpec(len(paths), grid, source), np.vstack([p.values for p in paths]), dict(extras or {}))
