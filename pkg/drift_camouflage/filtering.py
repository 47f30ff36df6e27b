"""Hidden-drift scenario: a Brownian motion whose drift is tailored so that
Y = eps * S is a Brownian motion for an observer who only sees Y.

Closed forms, their Euler cross-checks and the exact Bayes-weight filter all
live here. Everything is vectorised over numpy arrays; scalar inputs give
scalar outputs.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import expit

from .models import Ensemble, EnsembleSpec, PathSample, SeededRng, TimeGrid
from .paths import _check_same_grid, riemann_left, sample_brownian

logger = logging.getLogger(__name__)

# Euler solutions are kept inside the open unit interval by this margin.
EULER_MARGIN = 1e-15


def _check_mu(mu: float) -> None:
    if not mu > 0:
        raise ValueError(f"Drift level 'mu' must be positive, got {mu}")


def _check_sign(epsilon: int) -> None:
    if epsilon not in (-1, 1):
        raise ValueError(f"Sign 'epsilon' must be -1 or +1, got {epsilon}")


def _open_clip(x, lo: float, hi: float):
    return np.clip(x, np.nextafter(lo, hi), np.nextafter(hi, lo))


def _exponent(t, b, mu: float):
    return 2.0 * mu * np.asarray(b, dtype=float) + 2.0 * mu * mu * np.asarray(t, dtype=float)


@dataclass(frozen=True)
class DriftScenario:
    mu: float
    # None: drawn fair per path
    epsilon: Optional[int] = None

    def __post_init__(self) -> None:
        _check_mu(self.mu)
        if self.epsilon is not None:
            _check_sign(self.epsilon)

    def resolve_epsilon(self, rng: SeededRng) -> int:
        if self.epsilon is not None:
            return self.epsilon
        return 1 if rng.generator(purpose=1).random() < 0.5 else -1


@dataclass(frozen=True, eq=False)
class HiddenDriftPath:
    scenario: DriftScenario
    epsilon: int
    B: PathSample
    mu_t: PathSample
    S: PathSample
    Y: PathSample
    g: PathSample
    mu_plus: PathSample
    mu_minus: PathSample

    @property
    def grid(self) -> TimeGrid:
        return self.B.grid


@dataclass(frozen=True, eq=False)
class BayesWeights:
    # log Z+ - log Z-; p = logistic(log_odds)
    log_odds: PathSample
    p: PathSample


@dataclass(frozen=True, eq=False)
class EulerResult:
    path: PathSample
    clamp_events: int


def closed_form_g(t, b, epsilon: int, mu: float):
    _check_mu(mu)
    _check_sign(epsilon)
    z = _exponent(t, b, mu)
    g = expit(z) if epsilon == 1 else expit(-z)
    return _open_clip(g, 0.0, 1.0)


def drift_mu(t, b, mu: float):
    _check_mu(mu)
    return _open_clip(2.0 * mu * closed_form_g(t, b, -1, mu), 0.0, 2.0 * mu)


def half_distance(t, b, mu: float):
    """|g - 1/2| written as (1/2)|tanh(mu^2 t + mu b)|, valid for both signs."""
    _check_mu(mu)
    return 0.5 * np.abs(np.tanh(mu * mu * np.asarray(t, dtype=float) + mu * np.asarray(b, dtype=float)))


def mu_plus_minus(g, mu: float) -> Tuple:
    _check_mu(mu)
    g_arr = np.asarray(g, dtype=float)
    if not np.all((g_arr > 0.0) & (g_arr < 1.0)):
        raise ValueError("Filter value 'g' must lie strictly inside (0, 1)")
    return 2.0 * mu * (1.0 - g), 2.0 * mu * g


def simulate_hidden_path(scenario: DriftScenario, grid: TimeGrid, rng: SeededRng) -> HiddenDriftPath:
    return hidden_path_from_brownian(scenario, scenario.resolve_epsilon(rng), sample_brownian(grid, rng))


def hidden_path_from_brownian(scenario: DriftScenario, epsilon: int, B: PathSample) -> HiddenDriftPath:
    _check_sign(epsilon)
    mu = scenario.mu
    grid = B.grid
    times = grid.times
    mu_t = PathSample(grid, drift_mu(times, B.values, mu))
    S = PathSample(grid, riemann_left(mu_t).values + B.values)
    Y = PathSample(grid, epsilon * S.values)
    g_values = closed_form_g(times, B.values, epsilon, mu)
    plus, minus = mu_plus_minus(g_values, mu)
    return HiddenDriftPath(
        scenario=scenario,
        epsilon=epsilon,
        B=B,
        mu_t=mu_t,
        S=S,
        Y=Y,
        g=PathSample(grid, g_values),
        mu_plus=PathSample(grid, plus),
        mu_minus=PathSample(grid, minus),
    )


def simulate_hidden_ensemble(scenario: DriftScenario, grid: TimeGrid, seed: int, n_paths: int) -> List[HiddenDriftPath]:
    return [simulate_hidden_path(scenario, grid, SeededRng(seed, i)) for i in range(n_paths)]


def observation_ensemble(paths: List[HiddenDriftPath], source: str = "hidden:Y") -> Ensemble:
    grid = paths[0].grid
    values = np.vstack([p.Y.values for p in paths])
    eps = np.array([p.epsilon for p in paths], dtype=float)
    return Ensemble(EnsembleSpec(len(paths), grid, source), values, {"epsilon": eps})


def ensemble_hidden_paths(scenario: DriftScenario, grid: TimeGrid, seed: int, n_paths: int) -> Tuple[Ensemble, List[HiddenDriftPath]]:
    paths = simulate_hidden_ensemble(scenario, grid, seed, n_paths)
    return observation_ensemble(paths), paths


def _euler(start: float, increments: np.ndarray, dt: float, drift, diffusion, lo: float, hi: float) -> Tuple[np.ndarray, int]:
    out = np.empty(increments.shape[0] + 1)
    out[0] = start
    clamps = 0
    x = start
    for k, dw in enumerate(increments):
        x = x + drift(x) * dt + diffusion(x) * dw
        if x < lo or x > hi:
            clamps += 1
            x = min(max(x, lo), hi)
        out[k + 1] = x
    return out, clamps


def euler_filter_sde(B: PathSample, epsilon: int, mu: float) -> EulerResult:
    """Euler-Maruyama for dg = 2mu^2[eps g(1-g) + g(1-g)(1-2g)]dt + 2mu eps g(1-g) dB, g_0 = 1/2."""
    _check_mu(mu)
    _check_sign(epsilon)

    def drift(g: float) -> float:
        q = g * (1.0 - g)
        return 2.0 * mu * mu * (epsilon * q + q * (1.0 - 2.0 * g))

    def diffusion(g: float) -> float:
        return 2.0 * mu * epsilon * g * (1.0 - g)

    values, clamps = _euler(0.5, np.diff(B.values), B.grid.dt, drift, diffusion, EULER_MARGIN, 1.0 - EULER_MARGIN)
    if clamps:
        logger.warning("Filter Euler scheme clamped %d times (dt=%g, mu=%g)", clamps, B.grid.dt, mu)
    return EulerResult(PathSample(B.grid, values), clamps)


def euler_drift_sde(B: PathSample, mu: float) -> EulerResult:
    """Euler-Maruyama for dm = -m^2(2mu - m)dt - m(2mu - m)dB, m_0 = mu."""
    _check_mu(mu)
    top = 2.0 * mu

    def drift(m: float) -> float:
        return -m * m * (top - m)

    def diffusion(m: float) -> float:
        return -m * (top - m)

    values, clamps = _euler(mu, np.diff(B.values), B.grid.dt, drift, diffusion, EULER_MARGIN * top, (1.0 - EULER_MARGIN) * top)
    if clamps:
        logger.warning("Drift Euler scheme clamped %d times (dt=%g, mu=%g)", clamps, B.grid.dt, mu)
    return EulerResult(PathSample(B.grid, values), clamps)


def observation_filter(Y: PathSample, mu: float) -> EulerResult:
    """Euler scheme of dg = 2mu g(1-g) dY, g_0 = 1/2; it reads the observations only."""
    _check_mu(mu)

    def drift(g: float) -> float:
        return 0.0

    def diffusion(g: float) -> float:
        return 2.0 * mu * g * (1.0 - g)

    values, clamps = _euler(0.5, np.diff(Y.values), Y.grid.dt, drift, diffusion, EULER_MARGIN, 1.0 - EULER_MARGIN)
    if clamps:
        logger.warning("Observation filter clamped %d times (dt=%g, mu=%g)", clamps, Y.grid.dt, mu)
    return EulerResult(PathSample(Y.grid, values), clamps)


def bayes_filter(Y: PathSample, mu_plus: PathSample, mu_minus: PathSample) -> BayesWeights:
    """Posterior P[eps = 1 | Y up to t] from the ratio of the two likelihood weights.

    Never looks at eps itself: only Y and the two candidate drifts enter.
    """
    _check_same_grid(Y, mu_plus)
    _check_same_grid(Y, mu_minus)
    plus = mu_plus.values[:-1]
    minus = mu_minus.values[:-1]
    steps = (plus + minus) * np.diff(Y.values) - 0.5 * (plus * plus - minus * minus) * Y.grid.dt
    log_odds = np.concatenate(([0.0], np.cumsum(steps)))
    p = expit(log_odds)
    return BayesWeights(PathSample(Y.grid, log_odds), PathSample(Y.grid, p))


def filter_error(path: HiddenDriftPath) -> float:
    """max_k |Bayes posterior - closed-form g| on one hidden path."""
    weights = bayes_filter(path.Y, path.mu_plus, path.mu_minus)
    return float(np.max(np.abs(weights.p.values - path.g.values)))


def strong_error(approx: PathSample, exact: np.ndarray) -> float:
    return float(abs(approx.values[-1] - exact[-1]))


def coarsen(path: PathSample, factor: int) -> PathSample:
    """Keep every factor-th grid point; the coarse path shares the fine increments."""
    if factor < 1 or path.grid.n_steps % factor:
        raise ValueError(f"Coarsening factor {factor} must divide {path.grid.n_steps}")
    grid = TimeGrid(path.grid.dt * factor, path.grid.n_steps // factor)
    return PathSample(grid, path.values[::factor])
