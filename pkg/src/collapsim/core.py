"""Spatial grid, wavefunction container and observable extraction.

Conventions used throughout the package:

* 1-D uniform grid with cell-centered sample points and periodic (spectral)
  boundaries.  ``n_points`` must be a power of two so the FFT-based kinetic
  propagator stays exact.
* Normalization is the plain Riemann sum  sum(|psi_i|^2) * dx = 1.
* SI units everywhere; hbar and G carry their SI values.  Nondimensional
  plots (x/x_c, t*omega) are a presentation concern, not a storage one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

HBAR = 1.0545718e-34  # J s
GRAVITATIONAL_CONSTANT = 6.674e-11  # m^3 kg^-1 s^-2

#: number of cells next to each boundary that should stay (almost) empty
BOUNDARY_ZONE_CELLS = 8
#: probability mass allowed inside the boundary zone before a run is flagged
BOUNDARY_MASS_LIMIT = 1e-8


@dataclass(frozen=True)
class Grid:
    """Uniform 1-D spatial grid, cell-centered, periodic."""

    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self) -> None:
        if self.x_max <= self.x_min:
            raise ValueError(
                f"grid extent must be positive, got [{self.x_min}, {self.x_max}]"
            )
        n = self.n_points
        if n < 16 or (n & (n - 1)) != 0:
            raise ValueError(
                f"n_points must be a power of two >= 16 (got {n}); "
                "the spectral kinetic step requires it"
            )

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_points

    @property
    def extent(self) -> float:
        return self.x_max - self.x_min

    @cached_property
    def positions(self) -> np.ndarray:
        """Cell-center coordinates."""
        x = self.x_min + (np.arange(self.n_points) + 0.5) * self.dx
        x.flags.writeable = False
        return x

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers matching numpy's FFT ordering."""
        k = 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.dx)
        k.flags.writeable = False
        return k

    @property
    def k_max(self) -> float:
        return float(np.max(np.abs(self.wavenumbers)))


def make_grid(x_min: float, x_max: float, n_points: int) -> Grid:
    """Build a grid; dx is exactly (x_max - x_min) / n_points."""
    return Grid(x_min, x_max, n_points)


@dataclass(frozen=True)
class PhysicalParams:
    """Total mass, non-unitary coupling frequency and hbar.

    ``total_mass`` is the collective mass N*m of the object whose center of
    mass is being evolved.  ``omega`` parameterizes the strength of the
    imaginary quadratic potential; omega = 0 is the purely unitary limit.
    """

    total_mass: float
    omega: float
    hbar: float = HBAR

    def __post_init__(self) -> None:
        if self.total_mass <= 0:
            raise ValueError(f"total_mass must be > 0 (got {self.total_mass})")
        if self.omega < 0:
            raise ValueError(f"omega must be >= 0 (got {self.omega})")
        if self.hbar <= 0:
            raise ValueError(f"hbar must be > 0 (got {self.hbar})")

    @property
    def x_c(self) -> float:
        """Characteristic localization length sqrt(hbar / (M omega))."""
        if self.omega == 0:
            raise ValueError("x_c is undefined for omega = 0")
        return math.sqrt(self.hbar / (self.total_mass * self.omega))

    @property
    def tau_slow(self) -> float:
        """Timescale 1/omega of the drift toward the damping center."""
        if self.omega == 0:
            raise ValueError("tau_slow is undefined for omega = 0")
        return 1.0 / self.omega

    @property
    def damping_rate_density(self) -> float:
        """M omega^2 / hbar, the density-damping rate per squared meter."""
        return self.total_mass * self.omega**2 / self.hbar


@dataclass(frozen=True)
class ComponentSpec:
    """One Gaussian component of a superposition."""

    center: float
    width: float
    weight: complex = 1.0 + 0.0j

    def __post_init__(self) -> None:
        if self.width <= 0:
            raise ValueError(f"component width must be > 0 (got {self.width})")


@dataclass
class WaveFunction:
    """Complex amplitudes on a grid, normalized as sum |psi|^2 dx = 1."""

    grid: Grid
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        amp = np.asarray(self.amplitudes, dtype=np.complex128)
        if amp.shape != (self.grid.n_points,):
            raise ValueError(
                f"amplitudes shape {amp.shape} does not match grid "
                f"({self.grid.n_points},)"
            )
        self.amplitudes = amp

    def norm(self) -> float:
        """Riemann-sum probability mass sum |psi|^2 dx."""
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.dx)

    def normalized(self) -> "WaveFunction":
        n = self.norm()
        if not np.isfinite(n) or n == 0.0:
            raise ValueError(f"cannot normalize state with norm {n}")
        return WaveFunction(self.grid, self.amplitudes / math.sqrt(n))

    def copy(self) -> "WaveFunction":
        return WaveFunction(self.grid, self.amplitudes.copy())


class Observables(NamedTuple):
    norm: float
    mean_x: float
    mean_x2: float


def observables(psi: WaveFunction) -> Observables:
    """Norm, <x> and <x^2> via plain dx-weighted Riemann sums."""
    x = psi.grid.positions
    density = np.abs(psi.amplitudes) ** 2 * psi.grid.dx
    norm = float(density.sum())
    if norm == 0.0:
        raise ValueError("state has zero norm")
    mean_x = float((density * x).sum()) / norm
    mean_x2 = float((density * x * x).sum()) / norm
    return Observables(norm, mean_x, mean_x2)


def boundary_mass(psi: WaveFunction, zone_cells: int = BOUNDARY_ZONE_CELLS) -> float:
    """Fraction of the norm inside `zone_cells` cells of either boundary."""
    density = np.abs(psi.amplitudes) ** 2
    total = density.sum()
    if total == 0.0:
        return 0.0
    edge = density[:zone_cells].sum() + density[-zone_cells:].sum()
    return float(edge / total)


def _gaussian_profile(grid: Grid, center: float, width: float) -> np.ndarray:
    margin = 4.0 * width
    if not (grid.x_min + margin <= center <= grid.x_max - margin):
        raise ValueError(
            f"gaussian at {center} with width {width} extends beyond the "
            f"grid margin [{grid.x_min + margin}, {grid.x_max - margin}]"
        )
    x = grid.positions
    return np.exp(-((x - center) ** 2) / (4.0 * width**2)).astype(np.complex128)


def uniform_state(grid: Grid) -> WaveFunction:
    """Homogeneous (zero total momentum) state, amplitude 1/sqrt(extent)."""
    amp = np.full(grid.n_points, 1.0 / math.sqrt(grid.extent), dtype=np.complex128)
    return WaveFunction(grid, amp)


def gaussian_state(grid: Grid, center: float, width: float) -> WaveFunction:
    """Normalized Gaussian with <x> = center and variance width^2."""
    return WaveFunction(grid, _gaussian_profile(grid, center, width)).normalized()


def superposition_state(
    grid: Grid, components: Sequence[ComponentSpec]
) -> WaveFunction:
    """Weighted sum of Gaussian components, weights renormalized to
    sum |w_i|^2 = 1 and the overall state normalized on the grid."""
    if not components:
        raise ValueError("superposition needs at least one component")
    weights = np.array([c.weight for c in components], dtype=np.complex128)
    wnorm = math.sqrt(float(np.sum(np.abs(weights) ** 2)))
    if wnorm == 0.0:
        raise ValueError("all component weights are zero")
    weights = weights / wnorm
    amp = np.zeros(grid.n_points, dtype=np.complex128)
    for spec, w in zip(components, weights):
        profile = _gaussian_profile(grid, spec.center, spec.width)
        # normalize each component individually so |w_i|^2 is its weight
        profile /= math.sqrt(float(np.sum(np.abs(profile) ** 2) * grid.dx))
        amp += w * profile
    return WaveFunction(grid, amp).normalized()


def make_state(grid: Grid, kind: str, **kwargs) -> WaveFunction:
    """Dispatch constructor: kind in {uniform, gaussian, superposition}.

    gaussian requires center=, width=;  superposition requires components=.
    """
    if kind == "uniform":
        return uniform_state(grid)
    if kind == "gaussian":
        return gaussian_state(grid, kwargs["center"], kwargs["width"])
    if kind == "superposition":
        return superposition_state(grid, kwargs["components"])
    raise ValueError(f"unknown state kind {kind!r}")


def voronoi_edges(centers: Sequence[float]) -> np.ndarray:
    """Interior midpoint bisectors of the sorted centers."""
    c = np.asarray(sorted(centers), dtype=float)
    if c.size == 0:
        raise ValueError("need at least one center")
    if np.any(np.diff(c) == 0.0):
        raise ValueError(f"duplicate centers in {list(centers)}")
    return 0.5 * (c[1:] + c[:-1])


def component_weights(psi: WaveFunction, centers: Sequence[float]) -> np.ndarray:
    """Probability mass per Voronoi cell of the given centers.

    Cells are delimited by midpoint bisectors; the returned weights follow
    the order of `centers` as given (not sorted) and sum to the state norm.
    """
    centers = list(centers)
    edges = voronoi_edges(centers)
    order = np.argsort(centers)
    x = psi.grid.positions
    density = np.abs(psi.amplitudes) ** 2 * psi.grid.dx
    cell_index = np.searchsorted(edges, x, side="left")
    sorted_weights = np.bincount(cell_index, weights=density, minlength=len(centers))
    weights = np.empty(len(centers))
    weights[order] = sorted_weights
    return weights
