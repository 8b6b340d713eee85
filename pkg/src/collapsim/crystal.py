"""Harmonic-chain equilibrium toolkit.

Covers the static side of the problem: the acoustic phonon dispersion of a
1-D chain, the Bogoliubov coefficients that diagonalize its quadratic boson
Hamiltonian, the ladder of center-of-mass momentum levels whose spacing
vanishes as 1/N (the "thin" spectrum), the localized ground state produced
by a weak harmonic pinning field, and the order-of-limits table showing why
N -> infinity and omega -> 0 do not commute.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import HBAR, Grid, PhysicalParams, WaveFunction, gaussian_state

__all__ = [
    "CrystalModel",
    "BogoliubovCoeffs",
    "dispersion",
    "bogoliubov",
    "thin_spectrum_energies",
    "sb_ground_state",
    "singular_limit_table",
    "LimitTableRow",
]


@dataclass(frozen=True)
class CrystalModel:
    """Chain of n_atoms masses coupled by springs, confined to a box.

    The box length only quantizes the center-of-mass momentum,
    p_n = 2 pi hbar n / box_length; it plays no role in the phonons.
    """

    n_atoms: int
    atom_mass: float
    spring: float
    lattice_const: float
    box_length: float = 1.0
    hbar: float = HBAR

    def __post_init__(self) -> None:
        if self.n_atoms < 2:
            raise ValueError(f"n_atoms must be >= 2 (got {self.n_atoms})")
        for name in ("atom_mass", "spring", "lattice_const", "box_length", "hbar"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0 (got {getattr(self, name)})")


@dataclass(frozen=True)
class BogoliubovCoeffs:
    """Transformation data at wavenumber k (fields may be arrays).

    u solves tanh(2u) = -B/A with A = 2 - cos(ka), B = -cos(ka); this is
    the choice that cancels the anomalous pair-creation terms.
    """

    k: np.ndarray
    A: np.ndarray
    B: np.ndarray
    u: np.ndarray
    cosh_u: np.ndarray
    sinh_u: np.ndarray

    def off_diagonal_coefficient(self) -> np.ndarray:
        """Residual coefficient of the pair terms; zero when diagonalized."""
        return self.A * self.sinh_u * self.cosh_u + 0.5 * self.B * (
            self.cosh_u**2 + self.sinh_u**2
        )


def _check_nonzero_mode(model: CrystalModel, k) -> None:
    k = np.asarray(k, dtype=float)
    if np.any(k == 0.0):
        raise ValueError(
            "k = 0 is the collective (thin-spectrum) mode; the phonon "
            "dispersion and Bogoliubov transform are singular there"
        )


def dispersion(model: CrystalModel, k):
    """Single-phonon energy 2 hbar sqrt(kappa/m) |sin(k a / 2)|.

    Accepts a scalar or an array of wavenumbers; k = 0 is rejected because
    that mode describes the chain's center of mass, not a phonon.
    """
    _check_nonzero_mode(model, k)
    ka = np.asarray(k, dtype=float) * model.lattice_const
    energy = (
        2.0
        * model.hbar
        * math.sqrt(model.spring / model.atom_mass)
        * np.abs(np.sin(0.5 * ka))
    )
    return energy if energy.ndim else float(energy)


def bogoliubov(model: CrystalModel, k) -> BogoliubovCoeffs:
    """Diagonalizing transformation at wavenumber k (scalar or array).

    Raises for k equivalent to the zone center (cos(ka) = 1), where both
    cosh(u) and sinh(u) diverge.
    """
    _check_nonzero_mode(model, k)
    karr = np.asarray(k, dtype=float)
    ka = karr * model.lattice_const
    A = 2.0 - np.cos(ka)
    B = -np.cos(ka)
    ratio = -B / A
    if np.any(np.abs(ratio) >= 1.0):
        raise ValueError(
            "Bogoliubov transform diverges: wavenumber is equivalent to the "
            "collective k = 0 mode (cos(ka) = 1)"
        )
    u = 0.5 * np.arctanh(ratio)
    coeffs = BogoliubovCoeffs(
        k=karr, A=A, B=B, u=u, cosh_u=np.cosh(u), sinh_u=np.sinh(u)
    )
    return coeffs


def thin_spectrum_energies(model: CrystalModel, n_max: int) -> np.ndarray:
    """Center-of-mass kinetic levels E_n = (2 pi hbar n / L)^2 / (2 N m).

    Returns n_max + 1 energies for n = 0 .. n_max.  At fixed box length
    every level scales exactly as 1/N: doubling the atom count halves the
    whole ladder, which is what makes the spectrum "thin".
    """
    if n_max < 1:
        raise ValueError(f"n_max must be >= 1 (got {n_max})")
    n = np.arange(n_max + 1, dtype=float)
    p_n = 2.0 * math.pi * model.hbar * n / model.box_length
    return p_n**2 / (2.0 * model.n_atoms * model.atom_mass)


def sb_ground_state(grid: Grid, params: PhysicalParams) -> WaveFunction:
    """Localized (symmetry-broken) harmonic ground state on a grid.

    The state is the Gaussian (M omega / pi hbar)^(1/4) exp(-M omega x^2 /
    2 hbar) with M = total mass, so <x^2> = hbar / (2 M omega).  The grid
    must resolve the width: dx <= x_c/8 and extent >= 12 x_c where
    x_c = sqrt(hbar / (M omega)).
    """
    if params.omega <= 0:
        raise ValueError("sb_ground_state requires omega > 0")
    x_c = params.x_c
    if grid.dx > x_c / 8.0:
        raise ValueError(
            f"grid cannot resolve the ground-state width: dx = {grid.dx:.3e} "
            f"> x_c/8 = {x_c / 8.0:.3e}"
        )
    if grid.extent < 12.0 * x_c:
        raise ValueError(
            f"grid extent {grid.extent:.3e} < 12 x_c = {12.0 * x_c:.3e}"
        )
    # gaussian_state uses exp(-x^2 / 4 sigma^2); variance hbar/(2 M omega)
    sigma = x_c / math.sqrt(2.0)
    return gaussian_state(grid, 0.0, sigma)


@dataclass(frozen=True)
class LimitTableRow:
    order: str  # "omega_first" or "n_first"
    step: int
    n_atoms: float
    omega: float
    width: float
    delocalized: bool


def _pinned_width(n_atoms: float, atom_mass: float, omega: float,
                  cap: float, hbar: float) -> tuple[float, bool]:
    if omega <= 0.0:
        return cap, True
    w = math.sqrt(hbar / (2.0 * n_atoms * atom_mass * omega))
    return (cap, True) if w >= cap else (w, False)


def singular_limit_table(
    model: CrystalModel,
    n_sequence: Sequence[float],
    omega_sequence: Sequence[float],
) -> list[LimitTableRow]:
    """Ground-state widths along the two orders of the double limit.

    ``omega_first`` walks omega down at the smallest N, then N up at the
    smallest omega; ``n_first`` walks N up at the largest omega, then omega
    down at the largest N.  Widths are rms values of the pinned ground
    state, capped at box_length / sqrt(12) (the rms of a state spread
    uniformly over the box), which marks complete delocalization.

    Taking omega -> 0 first delocalizes the chain regardless of how large
    N becomes afterwards at that omega; growing N first keeps it localized
    all the way down.  Along any path with N * omega fixed the width does
    not move at all.
    """
    n_seq = [float(n) for n in n_sequence]
    w_seq = [float(w) for w in omega_sequence]
    if len(n_seq) < 2 or len(w_seq) < 2:
        raise ValueError("need at least two entries in each sequence")
    if any(b <= a for a, b in zip(n_seq, n_seq[1:])):
        raise ValueError("n_sequence must be strictly increasing")
    if any(b >= a for a, b in zip(w_seq, w_seq[1:])):
        raise ValueError("omega_sequence must be strictly decreasing")
    if any(w < 0 for w in w_seq):
        raise ValueError("omega values must be >= 0")

    cap = model.box_length / math.sqrt(12.0)
    m = model.atom_mass
    rows: list[LimitTableRow] = []

    def emit(order: str, step: int, n: float, omega: float) -> int:
        width, delocalized = _pinned_width(n, m, omega, cap, model.hbar)
        rows.append(LimitTableRow(order, step, n, omega, width, delocalized))
        return step + 1

    step = 0
    for omega in w_seq:  # omega -> 0 at small N
        step = emit("omega_first", step, n_seq[0], omega)
    for n in n_seq[1:]:  # then N -> large at small omega
        step = emit("omega_first", step, n, w_seq[-1])

    step = 0
    for n in n_seq:  # N -> large at large omega
        step = emit("n_first", step, n, w_seq[0])
    for omega in w_seq[1:]:  # then omega -> 0 at large N
        step = emit("n_first", step, n_seq[-1], omega)

    return rows
