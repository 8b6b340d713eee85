"""Time evolution under a non-Hermitian quadratic generator.

The state obeys

    i hbar d psi / dt = [ p^2 / (2 M)  -  (i/2) M omega^2 (x - xi(t))^2 ] psi

with M the total mass and xi(t) a stochastic damping center.  The imaginary
potential suppresses amplitude away from xi(t); the evolution is therefore
norm-decreasing and the propagator renormalizes after every step, logging
the raw (pre-normalization) norm for diagnostics.

Two schemes are provided:

* ``split_step_spectral`` - Strang splitting: half kinetic step applied in
  Fourier space as exp(-i hbar k^2 dt / 4M), a full pointwise damping step
  exp(-(M omega^2 / 2 hbar)(x - xi)^2 dt), then another half kinetic step.
* ``crank_nicolson`` - implicit midpoint rule on the same generator with a
  periodic second-order finite-difference Laplacian.

An independent cross-check, ``gaussian_oracle``, propagates the Gaussian
ansatz exp(-A x^2 / 2 + B x + C) through the exact parameter ODEs

    dA/dt = -(i hbar / M) A^2 + M omega^2 / hbar
    dB/dt = -(i hbar / M) A B
    dC/dt = (i hbar / 2M) (B^2 - A)

(for xi = 0), integrated with DOP853 on a nondimensionalized form.  The
quadratic generator maps Gaussians to Gaussians, so the oracle is exact up
to ODE tolerance and never touches a grid or an FFT.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.sparse import identity as sparse_identity
from scipy.sparse import diags_array
from scipy.sparse.linalg import splu

from .core import (
    BOUNDARY_ZONE_CELLS,
    GRAVITATIONAL_CONSTANT,
    ComponentSpec,
    Grid,
    PhysicalParams,
    WaveFunction,
    component_weights,
)

SCHEMES = ("split_step_spectral", "crank_nicolson")

NOISE_KINDS = ("zero", "piecewise_constant_gaussian")


class BlowUpError(RuntimeError):
    """Raised when the numerical state stops being usable (NaN/inf/underflow)."""


@dataclass(frozen=True)
class NoiseProcess:
    """Stochastic damping center xi(t).

    ``zero`` gives xi(t) = 0 identically.  ``piecewise_constant_gaussian``
    holds xi constant on [n tau_xi, (n+1) tau_xi) with values drawn i.i.d.
    from N(0, sigma_xi^2); the whole sequence is reproducible from `seed`
    and does not depend on the integration step.
    """

    kind: str = "zero"
    sigma_xi: float = 0.0
    tau_xi: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"noise kind must be one of {NOISE_KINDS}, got {self.kind!r}")
        if self.kind == "piecewise_constant_gaussian":
            if self.sigma_xi < 0:
                raise ValueError(f"sigma_xi must be >= 0 (got {self.sigma_xi})")
            if self.tau_xi <= 0:
                raise ValueError(f"tau_xi must be > 0 (got {self.tau_xi})")

    def values(self, count: int) -> np.ndarray:
        """First `count` interval values (prefix-stable in `count`)."""
        if self.kind == "zero":
            return np.zeros(count)
        rng = np.random.default_rng(self.seed)
        return rng.normal(0.0, self.sigma_xi, size=count)

    def value_at(self, t: float) -> float:
        """xi at time t >= 0."""
        if self.kind == "zero":
            return 0.0
        index = int(t // self.tau_xi)
        return float(self.values(index + 1)[-1])


@dataclass(frozen=True)
class EffectiveHamiltonian:
    """Kinetic term p^2/2M plus the imaginary potential -(i/2) M w^2 (x-xi)^2.

    With omega = 0 the generator is Hermitian and the evolution unitary.
    ``include_kinetic=False`` switches the kinetic term off entirely (the
    infinite-mass surrogate used to test the pure damping law).
    """

    params: PhysicalParams
    noise: NoiseProcess = NoiseProcess()
    include_kinetic: bool = True


@dataclass(frozen=True)
class PropagatorConfig:
    dt: float
    n_steps: int
    scheme: str = "split_step_spectral"
    record_stride: int = 1
    renormalize: bool = True

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError(f"dt must be > 0 (got {self.dt})")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1 (got {self.n_steps})")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.record_stride < 1:
            raise ValueError(f"record_stride must be >= 1 (got {self.record_stride})")


class StabilityBounds(NamedTuple):
    dt_potential: float
    dt_kinetic: float

    @property
    def dt_max(self) -> float:
        return min(self.dt_potential, self.dt_kinetic)


def stability_bounds(
    grid: Grid, params: PhysicalParams, include_kinetic: bool = True
) -> StabilityBounds:
    """Largest admissible step for each term.

    Potential: dt * max|V_im| / hbar <= 0.1 with max|V_im| evaluated at the
    grid edge (xi = 0).  Kinetic: dt * hbar k_max^2 / (2 M) <= 0.5 rad.
    """
    x_edge = max(abs(grid.x_min), abs(grid.x_max))
    if params.omega > 0:
        v_max = 0.5 * params.total_mass * params.omega**2 * x_edge**2
        dt_pot = 0.1 * params.hbar / v_max
    else:
        dt_pot = math.inf
    if include_kinetic:
        dt_kin = params.total_mass / (params.hbar * grid.k_max**2)
    else:
        dt_kin = math.inf
    return StabilityBounds(dt_pot, dt_kin)


def validate_stability(
    grid: Grid, params: PhysicalParams, dt: float, include_kinetic: bool = True
) -> None:
    bounds = stability_bounds(grid, params, include_kinetic)
    if dt > bounds.dt_potential:
        raise ValueError(
            f"dt = {dt:.6e} exceeds the imaginary-potential stability bound "
            f"{bounds.dt_potential:.6e} s (0.1 hbar / max|V_im| at the grid edge)"
        )
    if dt > bounds.dt_kinetic:
        raise ValueError(
            f"dt = {dt:.6e} exceeds the kinetic phase bound "
            f"{bounds.dt_kinetic:.6e} s (0.5 rad at k_max)"
        )


@dataclass
class Trajectory:
    """Recorded observables of one evolution run.

    ``raw_norm[i]`` is the pre-normalization norm accumulated over the i-th
    record interval (1.0 at the initial record).  When ``renormalize`` was
    off it is instead the actual norm at the record time.  Rows of
    ``component_weights`` sum to the state norm at that record.
    """

    times: np.ndarray
    mean_x: np.ndarray
    mean_x2: np.ndarray
    raw_norm: np.ndarray
    xi_trace: np.ndarray
    component_weights: Optional[np.ndarray] = None
    centers: Optional[tuple] = None
    boundary_mass_max: Optional[float] = None
    stopped_early: bool = False

    def __len__(self) -> int:
        return len(self.times)


def _kinetic_half_factor(grid: Grid, params: PhysicalParams, dt: float) -> np.ndarray:
    k = grid.wavenumbers
    return np.exp(-1j * params.hbar * k * k * dt / (4.0 * params.total_mass))


def _damping_factor(
    grid: Grid, params: PhysicalParams, dt: float, xi: float
) -> np.ndarray:
    if params.omega == 0.0:
        return np.ones(grid.n_points)
    x = grid.positions
    rate = 0.5 * params.total_mass * params.omega**2 / params.hbar
    return np.exp(-rate * (x - xi) ** 2 * dt)


class _SplitStepEngine:
    """Strang splitting with cached exponential factors (one trajectory)."""

    def __init__(self, grid: Grid, h_eff: EffectiveHamiltonian, dt: float):
        self.grid = grid
        self.h_eff = h_eff
        self.dt = dt
        if h_eff.include_kinetic:
            self._half_kinetic = _kinetic_half_factor(grid, h_eff.params, dt)
        else:
            self._half_kinetic = None
        self._xi_cached: Optional[float] = None
        self._vfac: Optional[np.ndarray] = None

    def _potential(self, xi: float) -> np.ndarray:
        if self._xi_cached != xi:
            self._vfac = _damping_factor(self.grid, self.h_eff.params, self.dt, xi)
            self._xi_cached = xi
        return self._vfac

    def apply(self, amp: np.ndarray, xi: float) -> np.ndarray:
        if self._half_kinetic is not None:
            amp = np.fft.ifft(self._half_kinetic * np.fft.fft(amp))
        amp = amp * self._potential(xi)
        if self._half_kinetic is not None:
            amp = np.fft.ifft(self._half_kinetic * np.fft.fft(amp))
        return amp


class _CrankNicolsonEngine:
    """Implicit midpoint step on the same generator, periodic FD Laplacian."""

    def __init__(self, grid: Grid, h_eff: EffectiveHamiltonian, dt: float):
        self.grid = grid
        self.h_eff = h_eff
        self.dt = dt
        self._xi_cached: Optional[float] = None
        self._solver = None
        self._forward = None

    def _build(self, xi: float) -> None:
        grid, params = self.grid, self.h_eff.params
        n = grid.n_points
        if self.h_eff.include_kinetic:
            coeff = -params.hbar**2 / (2.0 * params.total_mass * grid.dx**2)
            main = np.full(n, -2.0 * coeff, dtype=np.complex128)
            off = np.full(n - 1, coeff, dtype=np.complex128)
            kinetic = diags_array(
                [main, off, off, np.array([coeff]), np.array([coeff])],
                offsets=[0, 1, -1, n - 1, -(n - 1)],
                format="csc",
            )
        else:
            kinetic = 0.0 * sparse_identity(n, format="csc", dtype=np.complex128)
        if params.omega > 0:
            v = -0.5j * params.total_mass * params.omega**2 * (
                grid.positions - xi
            ) ** 2
        else:
            v = np.zeros(n)
        h_matrix = kinetic + diags_array([v.astype(np.complex128)], offsets=[0],
                                         format="csc")
        eye = sparse_identity(n, format="csc", dtype=np.complex128)
        z = 0.5j * self.dt / params.hbar
        self._solver = splu((eye + z * h_matrix).tocsc())
        self._forward = (eye - z * h_matrix).tocsr()
        self._xi_cached = xi

    def apply(self, amp: np.ndarray, xi: float) -> np.ndarray:
        if self._xi_cached != xi:
            self._build(xi)
        return self._solver.solve(self._forward @ amp)


def _make_engine(grid: Grid, h_eff: EffectiveHamiltonian, dt: float, scheme: str):
    if scheme == "split_step_spectral":
        return _SplitStepEngine(grid, h_eff, dt)
    return _CrankNicolsonEngine(grid, h_eff, dt)


def step(
    psi: WaveFunction,
    h_eff: EffectiveHamiltonian,
    t: float,
    dt: float,
    scheme: str = "split_step_spectral",
) -> tuple[WaveFunction, float]:
    """Advance one step from time t; returns the renormalized state and the
    pre-normalization norm."""
    validate_stability(psi.grid, h_eff.params, dt, h_eff.include_kinetic)
    engine = _make_engine(psi.grid, h_eff, dt, scheme)
    amp = engine.apply(psi.amplitudes, h_eff.noise.value_at(t))
    raw = float(np.sum(np.abs(amp) ** 2) * psi.grid.dx)
    if not np.isfinite(raw) or raw == 0.0:
        raise BlowUpError(f"state blew up in a single step from t = {t}: norm = {raw}")
    return WaveFunction(psi.grid, amp / math.sqrt(raw)), raw


def evolve(
    psi0: WaveFunction,
    h_eff: EffectiveHamiltonian,
    config: PropagatorConfig,
    centers: Optional[Sequence[float]] = None,
    stop_threshold: Optional[float] = None,
) -> Trajectory:
    """Propagate a normalized state, recording every `record_stride` steps.

    If `centers` is given, probability weights over their Voronoi cells are
    recorded as well, and a `stop_threshold` in (0.5, 1] stops the run at
    the first record where one cell holds at least that fraction.

    The returned trajectory is fully determined by the inputs (the noise
    sequence comes from the noise seed alone).
    """
    grid = psi0.grid
    params = h_eff.params
    validate_stability(grid, params, config.dt, h_eff.include_kinetic)
    if stop_threshold is not None:
        if centers is None:
            raise ValueError("stop_threshold requires centers")
        if not (0.5 < stop_threshold <= 1.0):
            raise ValueError(f"stop_threshold must be in (0.5, 1] (got {stop_threshold})")
    if not np.all(np.isfinite(psi0.amplitudes)):
        raise BlowUpError("initial state contains non-finite amplitudes")

    noise = h_eff.noise
    if noise.kind == "zero":
        xi_values = np.zeros(1)
        xi_index_of = lambda t: 0  # noqa: E731
    else:
        total_time = config.n_steps * config.dt
        count = int(total_time / noise.tau_xi) + 2
        xi_values = noise.values(count)
        xi_index_of = lambda t: min(int(t // noise.tau_xi), count - 1)  # noqa: E731

    engine = _make_engine(grid, h_eff, config.dt, config.scheme)
    amp = psi0.amplitudes.copy()
    dx = grid.dx
    x = grid.positions
    edge = BOUNDARY_ZONE_CELLS

    times, mean_x, mean_x2, raw_norms, xi_trace = [], [], [], [], []
    weights_rows = [] if centers is not None else None
    boundary_max = 0.0
    raw_accum = 1.0
    stopped = False

    def record(step_index: int, raw_value: float) -> bool:
        nonlocal boundary_max
        density = np.abs(amp) ** 2 * dx
        norm = float(density.sum())
        if not np.isfinite(norm) or norm == 0.0:
            raise BlowUpError(f"state blew up by step {step_index}: norm = {norm}")
        t = step_index * config.dt
        times.append(t)
        mean_x.append(float((density * x).sum()) / norm)
        mean_x2.append(float((density * x * x).sum()) / norm)
        raw_norms.append(raw_value)
        xi_trace.append(float(xi_values[xi_index_of(t)]))
        boundary = (density[:edge].sum() + density[-edge:].sum()) / norm
        boundary_max = max(boundary_max, float(boundary))
        if weights_rows is not None:
            w = component_weights(WaveFunction(grid, amp), centers)
            weights_rows.append(w)
            if stop_threshold is not None and np.max(w) / np.sum(w) >= stop_threshold:
                return True
        return False

    dominated = record(0, 1.0)
    if not dominated:
        for i in range(1, config.n_steps + 1):
            t_step = (i - 1) * config.dt
            xi = float(xi_values[xi_index_of(t_step)])
            amp = engine.apply(amp, xi)
            raw = float(np.sum(np.abs(amp) ** 2) * dx)
            if not np.isfinite(raw) or raw == 0.0:
                raise BlowUpError(f"state blew up at step {i}: norm = {raw}")
            if config.renormalize:
                amp /= math.sqrt(raw)
                raw_accum *= raw
            if i % config.record_stride == 0:
                value = raw_accum if config.renormalize else raw
                raw_accum = 1.0
                if record(i, value):
                    stopped = True
                    break
    else:
        stopped = True

    return Trajectory(
        times=np.asarray(times),
        mean_x=np.asarray(mean_x),
        mean_x2=np.asarray(mean_x2),
        raw_norm=np.asarray(raw_norms),
        xi_trace=np.asarray(xi_trace),
        component_weights=np.asarray(weights_rows) if weights_rows is not None else None,
        centers=tuple(centers) if centers is not None else None,
        boundary_mass_max=boundary_max,
        stopped_early=stopped,
    )


def _gaussian_parameters_from_state(psi: WaveFunction) -> ComponentSpec:
    """Moment-match a grid state to a Gaussian; reject non-Gaussian input."""
    from .core import observables  # local import to avoid cycle at module load

    obs = observables(psi)
    var = obs.mean_x2 - obs.mean_x**2
    if var <= 0:
        raise ValueError("state has non-positive variance; not a Gaussian")
    sigma = math.sqrt(var)
    x = psi.grid.positions
    model = np.exp(-((x - obs.mean_x) ** 2) / (4.0 * sigma**2))
    model /= math.sqrt(float(np.sum(model**2) * psi.grid.dx))
    actual = np.abs(psi.amplitudes) / math.sqrt(obs.norm)
    l2_err = math.sqrt(float(np.sum((actual - model) ** 2) * psi.grid.dx))
    if l2_err > 1e-6:
        raise ValueError(
            f"initial state is not a single Gaussian (profile mismatch {l2_err:.2e})"
        )
    return ComponentSpec(center=obs.mean_x, width=sigma)


def gaussian_oracle(
    params: PhysicalParams,
    initial: ComponentSpec | WaveFunction,
    t_grid: Sequence[float],
    rtol: float = 1e-12,
) -> Trajectory:
    """Exact Gaussian-ansatz evolution for xi = 0 (independent of the grid).

    `initial` is a Gaussian, given either as a ComponentSpec (center, width)
    or as a grid state that must moment-match a Gaussian profile.  Returns
    the same observables as `evolve`; `raw_norm` holds the norm decay factor
    over each record interval.
    """
    if isinstance(initial, WaveFunction):
        initial = _gaussian_parameters_from_state(initial)
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size < 1 or t_grid[0] != 0.0:
        raise ValueError("t_grid must be a 1-D array starting at 0")
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")

    M, w, hbar = params.total_mass, params.omega, params.hbar
    sigma, x0 = initial.width, initial.center
    length = sigma
    t_ref = 1.0 / w if w > 0 else 2.0 * M * sigma**2 / hbar
    kappa = hbar * t_ref / (M * length**2)
    nu = M * w**2 * t_ref * length**2 / hbar

    def rhs(_tau, y):
        a = y[0] + 1j * y[1]
        b = y[2] + 1j * y[3]
        c = y[4] + 1j * y[5]
        da = -1j * kappa * a * a + nu
        db = -1j * kappa * a * b
        dc = 0.5j * kappa * (b * b - a)
        return [da.real, da.imag, db.real, db.imag, dc.real, dc.imag]

    # psi ~ exp(-A x^2/2 + B x + C):  A = 1/(2 sigma^2), B = x0/(2 sigma^2)
    y0 = [0.5, 0.0, 0.5 * x0 / length, 0.0, 0.0, 0.0]
    sol = solve_ivp(
        rhs,
        (0.0, float(t_grid[-1] / t_ref) if t_grid[-1] > 0 else 1e-30),
        y0,
        t_eval=t_grid / t_ref,
        method="DOP853",
        rtol=rtol,
        atol=1e-14,
    )
    if not sol.success:
        raise RuntimeError(f"oracle integration failed: {sol.message}")
    a = sol.y[0] + 1j * sol.y[1]
    b = sol.y[2] + 1j * sol.y[3]
    c = sol.y[4] + 1j * sol.y[5]
    if np.any(a.real <= 0):
        raise RuntimeError("oracle lost normalizability (Re A <= 0)")

    mean = (b.real / a.real) * length
    var = (0.5 / a.real) * length**2
    # log integral of exp(-Re(A) u^2 + 2 Re(B) u + 2 Re(C)) du, u = x/length
    log_norm = (
        2.0 * c.real + b.real**2 / a.real + 0.5 * (np.log(np.pi) - np.log(a.real))
    )
    log_norm = log_norm - log_norm[0]
    raw = np.exp(np.diff(log_norm, prepend=log_norm[0]))
    raw[0] = 1.0

    return Trajectory(
        times=t_grid,
        mean_x=mean,
        mean_x2=var + mean**2,
        raw_norm=raw,
        xi_trace=np.zeros_like(t_grid),
        component_weights=None,
        centers=None,
        boundary_mass_max=None,
        stopped_early=False,
    )


def gravity_omega(mass: float, size: float) -> float:
    """Coupling frequency from self-gravity: omega = sqrt(G M / L^3)."""
    if mass <= 0 or size <= 0:
        raise ValueError(f"mass and size must be > 0 (got {mass}, {size})")
    return math.sqrt(GRAVITATIONAL_CONSTANT * mass / size**3)


class TimescaleEstimates(NamedTuple):
    tau_reduction: float
    tau_drift: float


def timescale_estimates(params: PhysicalParams, x_ref: float) -> TimescaleEstimates:
    """Reduction and drift timescales for a superposition of spatial scale x_ref.

    tau_reduction = hbar / (M omega^2 x_ref^2) is the scale on which the
    damping discriminates between components separated by x_ref;
    tau_drift = 1/omega is the scale on which a surviving localized state
    moves toward the damping center.
    """
    if params.omega <= 0:
        raise ValueError("timescale estimates require omega > 0")
    if x_ref <= 0:
        raise ValueError(f"x_ref must be > 0 (got {x_ref})")
    tau_red = params.hbar / (params.total_mass * params.omega**2 * x_ref**2)
    return TimescaleEstimates(tau_red, 1.0 / params.omega)
