"""collapsim: non-unitary wavepacket dynamics and collapse statistics.

The package evolves 1-D wavefunctions under a Hermitian kinetic term plus an
imaginary quadratic potential with a stochastically wandering center, and
measures reduction timescales, dominance statistics and outcome frequencies
over Monte Carlo ensembles.  A separate crystal toolkit covers the phonon
dispersion, Bogoliubov coefficients, the 1/N center-of-mass level ladder and
the pinned (symmetry-broken) ground state of a harmonic chain.
"""

from .core import (
    BOUNDARY_MASS_LIMIT,
    GRAVITATIONAL_CONSTANT,
    HBAR,
    ComponentSpec,
    Grid,
    Observables,
    PhysicalParams,
    WaveFunction,
    component_weights,
    gaussian_state,
    make_grid,
    make_state,
    observables,
    superposition_state,
    uniform_state,
)
from .crystal import (
    BogoliubovCoeffs,
    CrystalModel,
    LimitTableRow,
    bogoliubov,
    dispersion,
    sb_ground_state,
    singular_limit_table,
    thin_spectrum_energies,
)
from .ensemble import (
    BornReport,
    EnsembleFailure,
    EnsembleResult,
    FitResult,
    PointStats,
    RunRecord,
    SweepSpec,
    born_statistics,
    default_noise_tau,
    derive_run_seed,
    dominance_time,
    dominant_component,
    half_time,
    half_time_from_series,
    histogram,
    run_ensemble,
    scaling_fit,
    two_sample_proportion_test,
    wilson_interval,
)
from .propagator import (
    BlowUpError,
    EffectiveHamiltonian,
    NoiseProcess,
    PropagatorConfig,
    StabilityBounds,
    TimescaleEstimates,
    Trajectory,
    evolve,
    gaussian_oracle,
    gravity_omega,
    stability_bounds,
    step,
    timescale_estimates,
    validate_stability,
)

__version__ = "0.1.0"
