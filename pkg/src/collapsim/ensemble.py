"""Monte Carlo orchestration over seeds and (mass, omega) sweeps.

Trajectory runs are embarrassingly parallel: every run's random stream is
derived from (master_seed, point_index, run_index) alone, results are
assembled in run order, and neither the worker count nor the batch layout
can change a single bit of the output.

For throughput the runs of one parameter point are propagated in fixed-size
batches as a 2-D array (rows = trajectories); the per-row arithmetic is the
same split-step scheme as `propagator.evolve`, with the two half kinetic
steps of adjacent steps merged between records.
"""

from __future__ import annotations

import hashlib
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    HBAR,
    Grid,
    PhysicalParams,
    superposition_state,
    voronoi_edges,
)
from .propagator import Trajectory, stability_bounds

ENV_WORKERS = "COLLAPSE_THREADS"

#: fewest finished runs for which onset/width percentiles are reported
MIN_RUNS_FOR_PERCENTILES = 20


class EnsembleFailure(RuntimeError):
    """Raised when too many runs of an ensemble blow up (>= 1%)."""


# --------------------------------------------------------------------------
# trajectory-level extractors


def dominance_time(traj: Trajectory, threshold: float) -> Optional[float]:
    """First recorded time at which one component holds >= threshold of the
    norm; None if that never happens within the trajectory."""
    if traj.component_weights is None or traj.component_weights.shape[1] < 2:
        raise ValueError("trajectory does not track >= 2 components")
    if not (0.5 < threshold <= 1.0):
        raise ValueError(f"threshold must be in (0.5, 1] (got {threshold})")
    w = traj.component_weights
    frac = w.max(axis=1) / w.sum(axis=1)
    hits = np.nonzero(frac >= threshold)[0]
    if hits.size == 0:
        return None
    return float(traj.times[hits[0]])


def dominant_component(traj: Trajectory, threshold: float) -> Optional[int]:
    """Index (in the order the centers were given) of the winning component."""
    if traj.component_weights is None:
        raise ValueError("trajectory does not track components")
    t = dominance_time(traj, threshold)
    if t is None:
        return None
    idx = int(np.nonzero(traj.times == t)[0][0])
    return int(np.argmax(traj.component_weights[idx]))


def half_time_from_series(times: np.ndarray, series: np.ndarray) -> float:
    """First crossing of the midpoint between the initial value and the
    final plateau (plateau = mean of the last 5% of samples).

    Raises ValueError when the series has not flattened (run too short) or
    never crosses the midpoint.
    """
    times = np.asarray(times, dtype=float)
    series = np.asarray(series, dtype=float)
    n = series.size
    if n < 20:
        raise ValueError(f"need >= 20 records to locate a plateau (got {n})")
    tail = max(1, n // 20)
    plateau = float(series[-tail:].mean())
    previous = float(series[-2 * tail : -tail].mean())
    drop = float(series[0]) - plateau
    if drop <= 0.0:
        raise ValueError("series does not decay; no plateau to cross")
    if abs(previous - plateau) > 0.1 * drop:
        raise ValueError(
            "no plateau detected: the series is still moving at the end "
            "(run too short)"
        )
    midpoint = 0.5 * (series[0] + plateau)
    below = np.nonzero(series <= midpoint)[0]
    if below.size == 0:
        raise ValueError("series never crosses its midpoint (run too short)")
    return float(times[below[0]])


def half_time(traj: Trajectory) -> float:
    """Half-time of the <x^2> decay of a trajectory."""
    return half_time_from_series(traj.times, traj.mean_x2)


# --------------------------------------------------------------------------
# statistics helpers


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    residual: float


def scaling_fit(points: Sequence[tuple[float, float]]) -> FitResult:
    """Ordinary least squares in log-log space over (parameter, measurement)."""
    pts = [(float(p), float(m)) for p, m in points]
    if len(pts) < 3:
        raise ValueError(f"need >= 3 points for a scaling fit (got {len(pts)})")
    if any(p <= 0 or m <= 0 for p, m in pts):
        raise ValueError("scaling_fit requires strictly positive values")
    x = np.log([p for p, _ in pts])
    y = np.log([m for _, m in pts])
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return FitResult(float(slope), float(intercept), resid)


def histogram(times: Sequence[float], n_bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit-area histogram over [min, max]; returns (density, bin_edges)."""
    t = np.asarray(list(times), dtype=float)
    if t.size == 0:
        raise ValueError("histogram needs at least one value")
    if n_bins < 1:
        raise ValueError(f"n_bins must be >= 1 (got {n_bins})")
    lo, hi = float(t.min()), float(t.max())
    if lo == hi:
        half = 0.5 * abs(lo) if lo != 0.0 else 0.5
        lo, hi = lo - half, lo + half
    density, edges = np.histogram(t, bins=n_bins, range=(lo, hi), density=True)
    return density, edges


def wilson_interval(successes: int, n: int, z: float = 1.959963984540054):
    """Wilson 95% score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("wilson_interval needs n > 0")
    p = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    return center - half, center + half


def two_sample_proportion_test(k1: int, n1: int, k2: int, n2: int) -> float:
    """Two-sided p-value for equality of two binomial proportions (pooled z)."""
    if n1 <= 0 or n2 <= 0:
        raise ValueError("both samples must be non-empty")
    p1, p2 = k1 / n1, k2 / n2
    pooled = (k1 + k2) / (n1 + n2)
    var = pooled * (1 - pooled) * (1 / n1 + 1 / n2)
    if var == 0.0:
        return 1.0
    z = (p1 - p2) / math.sqrt(var)
    return math.erfc(abs(z) / math.sqrt(2.0))


# --------------------------------------------------------------------------
# sweep specification and result containers


@dataclass(frozen=True)
class SweepSpec:
    """Ensemble of stochastic collapse runs over (total_mass, omega) points.

    The initial state (grid + components), the noise parameters and the
    dominance threshold are shared by all points; dt / horizon / recording
    are chosen per point from the stability bounds and the expected race
    statistics unless given explicitly.
    """

    points: tuple
    runs_per_point: int
    master_seed: int
    grid: Grid
    components: tuple
    noise_sigma: float
    noise_tau: float
    dominance_threshold: float = 0.95
    dt: Optional[float] = None
    t_max: Optional[float] = None
    record_stride: Optional[int] = None
    dt_safety: float = 1.0
    batch_size: int = 128
    hbar: float = HBAR

    def __post_init__(self) -> None:
        if len(self.points) == 0:
            raise ValueError("need at least one (total_mass, omega) point")
        for nm, om in self.points:
            if nm <= 0 or om <= 0:
                raise ValueError(f"bad sweep point ({nm}, {om})")
        if self.runs_per_point < 1:
            raise ValueError("runs_per_point must be >= 1")
        if not (0.5 < self.dominance_threshold < 1.0):
            raise ValueError("dominance_threshold must be in (0.5, 1)")
        if len(self.components) < 2:
            raise ValueError("need >= 2 superposition components")
        if self.noise_sigma < 0 or self.noise_tau <= 0:
            raise ValueError("noise_sigma must be >= 0 and noise_tau > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def centers(self) -> tuple:
        return tuple(c.center for c in self.components)

    @property
    def component_span(self) -> float:
        c = self.centers
        return max(c) - min(c)


def default_noise_tau(
    spec_separation: float, params: PhysicalParams, divisor: float = 50.0
) -> float:
    """Documented default correlation time: tau_red(separation) / divisor.

    Note: with this default the dominance race is diffusive (many refresh
    intervals per crossing) and every percentile of the dominance-time
    distribution scales as (M omega^2)^-2.  Resolving a 1/(M omega^2) onset
    requires a correlation time of order tau_red itself.
    """
    tau_red = params.hbar / (
        params.total_mass * params.omega**2 * spec_separation**2
    )
    return tau_red / divisor


@dataclass(frozen=True)
class RunRecord:
    point_index: int
    total_mass: float
    omega: float
    run_index: int
    seed: int
    dominance_time: Optional[float]
    winner: Optional[int]
    half_time: Optional[float]
    blowup: bool


@dataclass(frozen=True)
class PointStats:
    point_index: int
    total_mass: float
    omega: float
    n_runs: int
    n_dominated: int
    n_blowup: int
    onset_time: Optional[float]
    width_time: Optional[float]
    frequencies: tuple
    wilson_low: tuple
    wilson_high: tuple


@dataclass
class EnsembleResult:
    spec: SweepSpec
    records: list
    points: list
    onset_fit: Optional[FitResult]
    width_fit: Optional[FitResult]

    def records_for_point(self, point_index: int) -> list:
        return [r for r in self.records if r.point_index == point_index]

    def dominance_times(self, point_index: Optional[int] = None) -> np.ndarray:
        rows = self.records if point_index is None else self.records_for_point(point_index)
        return np.array(
            [r.dominance_time for r in rows if r.dominance_time is not None]
        )


def derive_run_seed(master_seed: int, point_index: int, run_index: int) -> int:
    """Stable 63-bit seed from (master seed, point, run); reproducible and
    independent of execution order."""
    digest = hashlib.sha256(
        f"{master_seed}:{point_index}:{run_index}".encode()
    ).digest()
    return int.from_bytes(digest[:8], "little") >> 1


# --------------------------------------------------------------------------
# per-point plan (dt, horizon, recording) and the batched engine


@dataclass(frozen=True)
class _PointPlan:
    total_mass: float
    omega: float
    dt: float
    stride: int
    n_records: int
    n_intervals: int


def _log_ratio_threshold(threshold: float) -> float:
    return math.log(threshold / (1.0 - threshold))


def _plan_point(spec: SweepSpec, total_mass: float, omega: float) -> _PointPlan:
    params = PhysicalParams(total_mass, omega, spec.hbar)
    bounds = stability_bounds(spec.grid, params)
    # race scale: per-interval std of the log weight ratio of the widest pair
    lam = params.damping_rate_density
    span = spec.component_span
    gamma = 2.0 * span * lam * spec.noise_sigma * spec.noise_tau
    big_lambda = _log_ratio_threshold(spec.dominance_threshold)
    m_ratio = big_lambda / gamma if gamma > 0 else math.inf
    onset_guess = (
        spec.noise_tau * min(m_ratio / 2.0, 1.0) if gamma > 0 else math.inf
    )
    record_target = min(spec.noise_tau, onset_guess) / 24.0
    if spec.dt is not None:
        dt = spec.dt
    else:
        dt = spec.dt_safety * min(bounds.dt_max, spec.noise_tau / 8.0, record_target)
    if dt > bounds.dt_max:
        raise ValueError(
            f"dt = {dt:.3e} violates the stability bound {bounds.dt_max:.3e} "
            f"at point ({total_mass:.3e}, {omega:.3e})"
        )
    if spec.t_max is not None:
        t_max = spec.t_max
    else:
        if not math.isfinite(m_ratio):
            raise ValueError("cannot choose t_max automatically for zero noise")
        t_max = spec.noise_tau * (20.0 + 8.0 * m_ratio**2)
    if spec.record_stride is not None:
        stride = spec.record_stride
    else:
        stride = max(1, int(round(record_target / dt))) if math.isfinite(
            record_target
        ) else 1
    n_records = max(1, math.ceil(t_max / (stride * dt)))
    n_intervals = int((n_records * stride * dt) / spec.noise_tau) + 2
    return _PointPlan(total_mass, omega, dt, stride, n_records, n_intervals)


def _run_batch(args: tuple) -> list:
    """Evolve runs [run_lo, run_hi) of one sweep point; returns RunRecords.

    Row arithmetic matches the scalar split-step propagator: Strang steps
    with the inner half kinetic factors merged between records, per-record
    renormalization, and xi sampled at the start time of each step.
    """
    spec, point_index, run_lo, run_hi = args
    total_mass, omega = spec.points[point_index]
    plan = _plan_point(spec, total_mass, omega)
    grid = spec.grid
    n = grid.n_points
    dx = grid.dx
    x = grid.positions
    n_rows = run_hi - run_lo

    psi0 = superposition_state(grid, spec.components)
    amp = np.tile(psi0.amplitudes, (n_rows, 1))

    seeds = [
        derive_run_seed(spec.master_seed, point_index, r)
        for r in range(run_lo, run_hi)
    ]
    xi_matrix = np.empty((n_rows, plan.n_intervals))
    for row, seed in enumerate(seeds):
        xi_matrix[row] = np.random.default_rng(seed).normal(
            0.0, spec.noise_sigma, plan.n_intervals
        )

    k = grid.wavenumbers
    half_k = np.exp(-1j * spec.hbar * k * k * plan.dt / (4.0 * total_mass))
    full_k = np.exp(-1j * spec.hbar * k * k * plan.dt / (2.0 * total_mass))
    damp_rate = 0.5 * total_mass * omega**2 / spec.hbar

    centers = spec.centers
    order = np.argsort(centers)
    edges = voronoi_edges(centers)
    cell_starts = np.concatenate(([0], np.searchsorted(x, edges)))

    n_rec = plan.n_records
    times = np.arange(n_rec + 1) * (plan.stride * plan.dt)
    x2_series = np.full((n_rows, n_rec + 1), np.nan)
    dom_rec = np.full(n_rows, -1, dtype=int)
    winners = np.full(n_rows, -1, dtype=int)
    blowups = np.zeros(n_rows, dtype=bool)

    def weights_of(a: np.ndarray) -> np.ndarray:
        density = (np.abs(a) ** 2) * dx
        w_sorted = np.add.reduceat(density, cell_starts, axis=1)
        w = np.empty_like(w_sorted)
        w[:, order] = w_sorted
        return w

    alive = np.arange(n_rows)
    w0 = weights_of(amp)
    x2_series[:, 0] = (np.abs(amp) ** 2 * dx * (x * x)[None, :]).sum(axis=1)
    frac0 = w0.max(axis=1) / w0.sum(axis=1)
    already = frac0 >= spec.dominance_threshold
    if np.any(already):
        dom_rec[already] = 0
        winners[already] = np.argmax(w0[already], axis=1)
        keep = ~already
        alive, amp, xi_matrix = alive[keep], amp[keep], xi_matrix[keep]

    xi_cur = np.full(alive.size, np.nan)
    vfac = np.empty((alive.size, n))
    for rec in range(1, n_rec + 1):
        if alive.size == 0:
            break
        base_step = (rec - 1) * plan.stride
        amp = np.fft.ifft(half_k * np.fft.fft(amp, axis=1), axis=1)
        for s in range(plan.stride):
            t_step = (base_step + s) * plan.dt
            j = min(int(t_step // spec.noise_tau), plan.n_intervals - 1)
            col = xi_matrix[:, j]
            if not np.array_equal(col, xi_cur):
                xi_cur = col
                vfac = np.exp(-damp_rate * (x[None, :] - col[:, None]) ** 2 * plan.dt)
            amp *= vfac
            if s < plan.stride - 1:
                amp = np.fft.ifft(full_k * np.fft.fft(amp, axis=1), axis=1)
        amp = np.fft.ifft(half_k * np.fft.fft(amp, axis=1), axis=1)

        w = weights_of(amp)
        norms = w.sum(axis=1)
        bad = ~np.isfinite(norms) | (norms == 0.0)
        if np.any(bad):
            blowups[alive[bad]] = True
        amp[~bad] /= np.sqrt(norms[~bad])[:, None]
        w[~bad] /= norms[~bad][:, None]
        x2 = (np.abs(amp) ** 2 * dx * (x * x)[None, :]).sum(axis=1)
        x2_series[alive, rec] = x2

        frac = w.max(axis=1)
        done = (frac >= spec.dominance_threshold) & ~bad
        if np.any(done):
            dom_rec[alive[done]] = rec
            winners[alive[done]] = np.argmax(w[done], axis=1)
        keep = ~(done | bad)
        if not np.all(keep):
            alive = alive[keep]
            amp = amp[keep]
            xi_matrix = xi_matrix[keep]
            xi_cur = xi_cur[keep]
            vfac = vfac[keep]

    records = []
    for row in range(n_rows):
        if blowups[row]:
            records.append(
                RunRecord(point_index, total_mass, omega, run_lo + row, seeds[row],
                          None, None, None, True)
            )
            continue
        rec = dom_rec[row]
        t_dom = float(times[rec]) if rec >= 0 else None
        winner = int(winners[row]) if rec >= 0 else None
        series = x2_series[row]
        valid = ~np.isnan(series)
        try:
            ht = half_time_from_series(times[valid], series[valid])
        except ValueError:
            ht = None
        records.append(
            RunRecord(point_index, total_mass, omega, run_lo + row, seeds[row],
                      t_dom, winner, ht, False)
        )
    return records


def resolve_worker_count(max_workers: Optional[int] = None) -> int:
    if max_workers is not None:
        return max(1, int(max_workers))
    env = os.environ.get(ENV_WORKERS)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_ensemble(spec: SweepSpec, max_workers: Optional[int] = None) -> EnsembleResult:
    """Run the full sweep; deterministic in (spec, master_seed) regardless
    of worker count, batch layout or completion order."""
    tasks = []
    for point_index in range(len(spec.points)):
        for lo in range(0, spec.runs_per_point, spec.batch_size):
            hi = min(lo + spec.batch_size, spec.runs_per_point)
            tasks.append((spec, point_index, lo, hi))

    workers = resolve_worker_count(max_workers)
    if workers == 1 or len(tasks) == 1:
        batches = [_run_batch(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(_run_batch, tasks, chunksize=1))
    records = [record for batch in batches for record in batch]

    n_blow = sum(r.blowup for r in records)
    if n_blow >= 0.01 * len(records) and n_blow > 0:
        raise EnsembleFailure(
            f"{n_blow} of {len(records)} runs blew up (>= 1%); "
            "ensemble statistics would be unreliable"
        )

    n_components = len(spec.components)
    points = []
    for point_index, (nm, om) in enumerate(spec.points):
        rows = [r for r in records if r.point_index == point_index]
        finished = [r for r in rows if r.dominance_time is not None]
        times = np.array([r.dominance_time for r in finished])
        if times.size >= MIN_RUNS_FOR_PERCENTILES:
            onset = float(np.percentile(times, 5))
            width = float(np.percentile(times, 90) - np.percentile(times, 10))
        else:
            onset = width = None
        counts = [0] * n_components
        for r in finished:
            counts[r.winner] += 1
        if finished:
            freqs = tuple(c / len(finished) for c in counts)
            lows, highs = zip(*(wilson_interval(c, len(finished)) for c in counts))
        else:
            freqs = tuple(float("nan") for _ in counts)
            lows = highs = freqs
        points.append(
            PointStats(point_index, nm, om, len(rows), len(finished),
                       sum(r.blowup for r in rows), onset, width,
                       freqs, tuple(lows), tuple(highs))
        )

    def fit_over_points(attr: str) -> Optional[FitResult]:
        pairs = [
            (p.total_mass * p.omega**2, getattr(p, attr))
            for p in points
            if getattr(p, attr) is not None
        ]
        if len(pairs) < 3:
            return None
        return scaling_fit(pairs)

    return EnsembleResult(
        spec=spec,
        records=records,
        points=points,
        onset_fit=fit_over_points("onset_time"),
        width_fit=fit_over_points("width_time"),
    )


# --------------------------------------------------------------------------
# outcome statistics


@dataclass(frozen=True)
class BornReport:
    n_completed: int
    frequencies: tuple
    wilson_low: tuple
    wilson_high: tuple
    expected: tuple
    within_interval: tuple


def born_statistics(
    result: EnsembleResult, weights: Sequence[complex]
) -> BornReport:
    """Winner frequencies with Wilson 95% intervals, compared against the
    squared moduli of the given initial weights (pooled over all points)."""
    n_components = len(result.spec.components)
    if len(weights) != n_components:
        raise ValueError(
            f"got {len(weights)} weights for {n_components} components"
        )
    finished = [r for r in result.records if r.winner is not None]
    if not finished:
        raise ValueError("no completed runs; cannot compute outcome statistics")
    wsq = np.abs(np.asarray(weights, dtype=complex)) ** 2
    expected = tuple(wsq / wsq.sum())
    counts = [0] * n_components
    for r in finished:
        counts[r.winner] += 1
    n = len(finished)
    freqs = tuple(c / n for c in counts)
    lows, highs = zip(*(wilson_interval(c, n) for c in counts))
    within = tuple(lo <= e <= hi for lo, hi, e in zip(lows, highs, expected))
    return BornReport(n, freqs, tuple(lows), tuple(highs), expected, within)
