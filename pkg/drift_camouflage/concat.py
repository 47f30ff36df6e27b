"""Restart scheme: run the hidden-drift construction in short segments, each
stopped as soon as the observed sign integral moves by delta (or delta time
passes), and glue the segments into one global path whose drift stays within
O(delta) of the constant mu.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy import stats

from .filtering import drift_mu, half_distance
from .levy import sign_values
from .models import PathSample, SeededRng, TimeGrid

logger = logging.getLogger(__name__)

# Bound checks tolerate this much floating-point noise.
ROUNDING_SLACK = 1e-12

STOP_LEVEL = "level"
STOP_TIME = "time"


class SegmentBudgetError(RuntimeError):
    pass


@dataclass(frozen=True)
class ConcatConfig:
    mu: float
    delta: float
    grid: TimeGrid
    seed: int
    stream_id: int = 0
    max_segments: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.mu > 0:
            raise ValueError(f"Drift level 'mu' must be positive, got {self.mu}")
        if not self.delta > 0:
            raise ValueError(f"Stopping parameter 'delta' must be positive, got {self.delta}")

    @property
    def cap_steps(self) -> int:
        return cap_steps(self.delta, self.grid.dt)

    @property
    def nominal_bound(self) -> float:
        return drift_bound_constant(self.mu, self.delta)


def cap_steps(delta: float, dt: float) -> int:
    """Grid steps in the time cap: the largest k with k*dt <= delta (at least one)."""
    return max(1, int(math.floor(delta / dt + 1e-9)))


def drift_bound_constant(mu: float, delta: float) -> float:
    return delta * (3.0 * mu ** 3 + 2.0 * mu ** 2)


def filter_bound_constant(mu: float, delta: float) -> float:
    return delta * (2.0 * mu + 3.0 * mu ** 2) / 2.0


@dataclass(frozen=True, eq=False)
class SegmentRecord:
    index: int
    start_time: float
    gamma: float
    stop_steps: int
    stop_reason: str
    W: PathSample
    mu_tilde: PathSample
    S_tilde: PathSample
    H: PathSample
    N: PathSample
    delta_hat: float
    overshoot: float
    # largest |S_tilde| right after a sign change, up to the stop
    crossing_slack: float

    @property
    def times(self) -> np.ndarray:
        return self.W.grid.times


@dataclass(frozen=True, eq=False)
class ConcatPath:
    B: PathSample
    S: PathSample
    mu: PathSample
    H: PathSample
    M: PathSample
    taus: np.ndarray
    segment_index: np.ndarray
    segments: List[SegmentRecord] = field(default_factory=list)
    # global grid index where each segment starts
    starts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def grid(self) -> TimeGrid:
        return self.S.grid


def run_segment(index: int, increments: np.ndarray, mu: float, delta: float, dt: float, start_time: float = 0.0) -> SegmentRecord:
    k_cap = cap_steps(delta, dt)
    increments = np.asarray(increments, dtype=float)
    if increments.shape[0] < k_cap:
        raise ValueError(f"Segment {index} needs {k_cap} increments to cover delta={delta}, got {increments.shape[0]}")
    inc = increments[:k_cap]
    times = np.arange(k_cap + 1, dtype=float) * dt
    W = np.concatenate(([0.0], np.cumsum(inc)))
    mu_tilde = drift_mu(times, W, mu)
    S_tilde = np.concatenate(([0.0], np.cumsum(mu_tilde[:-1] * dt))) + W
    H = sign_values(S_tilde)
    N_tilde = np.concatenate(([0.0], np.cumsum(H[:-1] * np.diff(S_tilde))))

    hits = np.nonzero(np.abs(N_tilde[1:]) >= delta)[0]
    if hits.size:
        stop, reason = int(hits[0]) + 1, STOP_LEVEL
    else:
        stop, reason = k_cap, STOP_TIME
    gamma = stop * dt

    sl = slice(0, stop + 1)
    N = N_tilde[sl]
    sup_n = float(np.max(np.abs(N)))
    crossings = np.nonzero(H[1:stop + 1] != H[:stop])[0] + 1
    slack = float(np.max(np.abs(S_tilde[crossings]))) if crossings.size else 0.0

    grid = TimeGrid(dt, stop)
    record = SegmentRecord(
        index=index,
        start_time=start_time,
        gamma=gamma,
        stop_steps=stop,
        stop_reason=reason,
        W=PathSample(grid, W[sl]),
        mu_tilde=PathSample(grid, mu_tilde[sl]),
        S_tilde=PathSample(grid, S_tilde[sl]),
        H=PathSample(grid, H[sl]),
        N=PathSample(grid, N),
        delta_hat=max(sup_n, gamma),
        overshoot=max(0.0, sup_n - delta),
        crossing_slack=slack,
    )
    logger.debug("Segment %d: gamma=%g reason=%s delta_hat=%g", index, gamma, reason, record.delta_hat)
    return record


def _segment_budget(config: ConcatConfig, gammas: Sequence[float]) -> int:
    if config.max_segments is not None:
        return config.max_segments
    if len(gammas) < 32:
        return config.grid.n_steps + 1
    horizon = config.grid.horizon + config.delta
    return 32 + int(math.ceil(10.0 * horizon / float(np.mean(gammas))))


def build_concatenation(config: ConcatConfig, rng: Optional[SeededRng] = None) -> ConcatPath:
    rng = rng or SeededRng(config.seed, config.stream_id)
    grid = config.grid
    n = grid.n_steps
    k_cap = config.cap_steps
    increments = rng.generator().normal(0.0, math.sqrt(grid.dt), size=n + k_cap)

    segments: List[SegmentRecord] = []
    starts: List[int] = []
    cursor = 0
    while cursor < n:
        if len(segments) >= _segment_budget(config, [s.gamma for s in segments]):
            raise SegmentBudgetError(f"Segment budget exceeded after {len(segments)} segments (horizon {grid.horizon})")
        record = run_segment(len(segments) + 1, increments[cursor:cursor + k_cap], config.mu, config.delta, grid.dt, cursor * grid.dt)
        segments.append(record)
        starts.append(cursor)
        cursor += record.stop_steps

    total = cursor + 1
    S = np.empty(total)
    M = np.empty(total)
    mu = np.empty(total)
    H = np.empty(total)
    seg_idx = np.empty(total, dtype=int)
    S[0] = M[0] = 0.0
    for record, start in zip(segments, starts):
        stop = record.stop_steps
        S[start:start + stop + 1] = S[start] + record.S_tilde.values
        M[start:start + stop + 1] = M[start] + record.N.values
        mu[start:start + stop] = record.mu_tilde.values[:stop]
        H[start:start + stop] = record.H.values[:stop]
        seg_idx[start:start + stop] = record.index
    # terminal point closes the last segment
    last = segments[-1]
    mu[-1] = last.mu_tilde.values[-1]
    H[-1] = last.H.values[-1]
    seg_idx[-1] = last.index

    B = np.concatenate(([0.0], np.cumsum(increments[:n])))
    taus = np.concatenate(([0.0], np.cumsum([s.gamma for s in segments])))
    logger.debug("Built concatenation with %d segments over horizon %g (mu=%g, delta=%g)", len(segments), grid.horizon, config.mu, config.delta)
    return ConcatPath(
        B=PathSample(grid, B),
        S=PathSample(grid, S[:n + 1]),
        mu=PathSample(grid, mu[:n + 1]),
        H=PathSample(grid, H[:n + 1]),
        M=PathSample(grid, M[:n + 1]),
        taus=taus,
        segment_index=seg_idx[:n + 1],
        segments=segments,
        starts=np.array(starts, dtype=int),
    )


@dataclass
class SegmentBoundReport:
    segment: int
    delta_hat: float
    crossing_slack: float
    max_abs_s: float
    s_bound: float
    max_g_deviation: float
    g_bound: float
    nominal_g_bound: float
    # violations of the bare bounds (no crossing slack)
    literal_s_violations: int
    literal_g_violations: int
    s_violations: int
    g_violations: int

    @property
    def passed(self) -> bool:
        return self.s_violations == 0 and self.g_violations == 0


def check_lemma41(segment: SegmentRecord, config: ConcatConfig) -> SegmentBoundReport:
    """|S~| <= 2*delta_hat and |g - 1/2| <= delta_hat(2mu + 3mu^2)/2 up to the stop.

    On the grid the sign integral can only lose the value of S~ right after a
    sign change, so both bounds carry that one-step term; the bare bounds are
    counted separately.
    """
    mu = config.mu
    dh = segment.delta_hat
    slack = segment.crossing_slack
    abs_s = np.abs(segment.S_tilde.values)
    g_dev = half_distance(segment.times, segment.W.values, mu)

    literal_s = 2.0 * dh
    literal_g = filter_bound_constant(mu, dh)
    s_bound = literal_s + slack
    g_bound = literal_g + mu * slack / 2.0

    return SegmentBoundReport(
        segment=segment.index,
        delta_hat=dh,
        crossing_slack=slack,
        max_abs_s=float(np.max(abs_s)),
        s_bound=s_bound,
        max_g_deviation=float(np.max(g_dev)),
        g_bound=g_bound,
        nominal_g_bound=filter_bound_constant(mu, config.delta),
        literal_s_violations=int(np.sum(abs_s > literal_s + ROUNDING_SLACK)),
        literal_g_violations=int(np.sum(g_dev > literal_g + ROUNDING_SLACK)),
        s_violations=int(np.sum(abs_s > s_bound + ROUNDING_SLACK)),
        g_violations=int(np.sum(g_dev > g_bound + ROUNDING_SLACK)),
    )


@dataclass
class DriftBoundReport:
    max_deviation: float
    nominal_bound: float
    realized_bound: float
    delta_hat_max: float
    violations: int
    segments: int
    within_nominal_bound: bool

    @property
    def passed(self) -> bool:
        return self.violations == 0


def segment_drift_bound(segment: SegmentRecord, mu: float) -> float:
    return drift_bound_constant(mu, segment.delta_hat) + mu * mu * segment.crossing_slack


def check_drift_bound(path: ConcatPath, config: ConcatConfig) -> DriftBoundReport:
    mu = config.mu
    violations = 0
    realized = 0.0
    for record in path.segments:
        bound = segment_drift_bound(record, mu)
        realized = max(realized, bound)
        deviation = float(np.max(np.abs(record.mu_tilde.values - mu)))
        if deviation > bound + ROUNDING_SLACK:
            violations += 1
            logger.warning("Segment %d drift deviation %g exceeds %g", record.index, deviation, bound)
    max_dev = float(np.max(np.abs(path.mu.values - mu)))
    report = DriftBoundReport(
        max_deviation=max_dev,
        nominal_bound=config.nominal_bound,
        realized_bound=realized,
        delta_hat_max=max(s.delta_hat for s in path.segments),
        violations=violations,
        segments=len(path.segments),
        within_nominal_bound=max_dev <= config.nominal_bound,
    )
    logger.debug("Drift bound: max deviation %g, nominal bound %g, realized bound %g", max_dev, report.nominal_bound, realized)
    return report


def _horizon_portion(path: ConcatPath, position: int) -> np.ndarray:
    start = int(path.starts[position])
    record = path.segments[position]
    length = min(record.stop_steps, path.grid.n_steps - start)
    return record.N.values[:length + 1]


def tail_truncation_stability(path: ConcatPath, L: int) -> float:
    """max_t |M_t - M^(L)_t| where M^(L) keeps the first L segments and freezes later times."""
    if L < 0:
        raise ValueError(f"Segment count 'L' must be non-negative, got {L}")
    if L >= len(path.segments):
        return 0.0
    start = int(path.starts[L])
    tail = path.M.values[start:]
    return float(np.max(np.abs(tail - tail[0])))


def tail_truncation_bound(path: ConcatPath, L: int) -> float:
    """Sum of sup|N^l| over the dropped segments; monotone in L and dominates the stability value."""
    if L < 0:
        raise ValueError(f"Segment count 'L' must be non-negative, got {L}")
    total = 0.0
    for position in range(L, len(path.segments)):
        total += float(np.max(np.abs(_horizon_portion(path, position))))
    return total


def segment_durations(config: ConcatConfig, count: int, rng: Optional[SeededRng] = None) -> np.ndarray:
    """Durations gamma_1..gamma_count of consecutive segments driven by one Brownian stream."""
    rng = rng or SeededRng(config.seed, config.stream_id)
    gen = rng.generator()
    k_cap = config.cap_steps
    sd = math.sqrt(config.grid.dt)
    gammas = np.empty(count)
    buffer = gen.normal(0.0, sd, size=k_cap)
    for i in range(count):
        record = run_segment(i + 1, buffer, config.mu, config.delta, config.grid.dt)
        gammas[i] = record.gamma
        # unused increments carry over to the next segment
        used = record.stop_steps
        buffer = np.concatenate((buffer[used:], gen.normal(0.0, sd, size=used)))
    return gammas


@dataclass
class RenewalReport:
    n_segments: int
    mean_gamma: float
    ks_statistic: float
    p_value: float
    alpha: float
    tau_rate_half: float
    tau_rate_full: float

    @property
    def relative_change(self) -> float:
        return abs(self.tau_rate_full - self.tau_rate_half) / self.tau_rate_full

    @property
    def passed(self) -> bool:
        return self.p_value > self.alpha and self.relative_change < 0.05


def segment_renewal(gammas: Sequence[float], alpha: float = 0.01) -> RenewalReport:
    gammas = np.asarray(gammas, dtype=float)
    if gammas.shape[0] < 4:
        raise ValueError("Renewal check needs at least 4 segment durations")
    half = gammas.shape[0] // 2
    ks = stats.ks_2samp(gammas[:half], gammas[half:])
    taus = np.cumsum(gammas)
    return RenewalReport(
        n_segments=int(gammas.shape[0]),
        mean_gamma=float(np.mean(gammas)),
        ks_statistic=float(ks.statistic),
        p_value=float(ks.pvalue),
        alpha=alpha,
        tau_rate_half=float(taus[half - 1] / half),
        tau_rate_full=float(taus[-1] / gammas.shape[0]),
    )
