import logging

import numpy as np

from .filtering import HiddenDriftPath
from .models import PathSample

logger = logging.getLogger(__name__)


class SignConvention:
    """Left-continuous sign: +1 for x > 0, -1 for x <= 0 (negative zero included)."""

    @staticmethod
    def apply(values):
        return np.where(np.asarray(values, dtype=float) > 0.0, 1.0, -1.0)


def sign_values(values: np.ndarray) -> np.ndarray:
    return SignConvention.apply(values)


def levy_values(values: np.ndarray) -> np.ndarray:
    """Levy transform along the last axis; works for one path or a stack of paths."""
    values = np.asarray(values, dtype=float)
    steps = sign_values(values[..., :-1]) * np.diff(values, axis=-1)
    zeros = np.zeros(values.shape[:-1] + (1,))
    return np.concatenate((zeros, np.cumsum(steps, axis=-1)), axis=-1)


def local_time_values(values: np.ndarray) -> np.ndarray:
    """Tanaka residual |X| - int sign(X) dX along the last axis."""
    values = np.asarray(values, dtype=float)
    return np.abs(values) - levy_values(values)


def _check_starts_at_zero(X: PathSample) -> None:
    if X.values[0] != 0.0:
        raise ValueError(f"Levy transform needs a path started at 0, got X[0]={X.values[0]}")


def sign_integrand(X: PathSample) -> PathSample:
    return PathSample(X.grid, sign_values(X.values))


def levy_transform(X: PathSample) -> PathSample:
    _check_starts_at_zero(X)
    return PathSample(X.grid, levy_values(X.values))


def local_time_estimate(X: PathSample) -> PathSample:
    _check_starts_at_zero(X)
    return PathSample(X.grid, local_time_values(X.values))


def levy_of_hidden(path: HiddenDriftPath) -> PathSample:
    """M = int sign(Y) dY for Y = eps*S; the integrand needs no knowledge of eps."""
    return levy_transform(path.Y)


def local_time_decrements(L: PathSample, threshold: float) -> int:
    """Number of steps where L drops by more than threshold (exact local time never drops)."""
    return int(np.sum(np.diff(L.values) < -threshold))
