import math

import numpy as np
import pytest
from scipy.integrate import quad

from collapsim.core import HBAR, PhysicalParams, make_grid, observables
from collapsim.crystal import (
    CrystalModel,
    bogoliubov,
    dispersion,
    sb_ground_state,
    singular_limit_table,
    thin_spectrum_energies,
)


@pytest.fixture
def model():
    return CrystalModel(
        n_atoms=64, atom_mass=3.2e-26, spring=5.0, lattice_const=2.5e-10
    )


class TestDispersion:
    def test_zone_edge_energy(self, model):
        # maximum of the acoustic branch: 2 hbar sqrt(kappa/m) at ka = pi
        k_edge = math.pi / model.lattice_const
        expected = 2.0 * model.hbar * math.sqrt(model.spring / model.atom_mass)
        assert dispersion(model, k_edge) == pytest.approx(expected, rel=1e-12)

    def test_linear_small_k_limit(self, model):
        # E(k) -> hbar sqrt(kappa/m) a k for small k
        sound = model.hbar * math.sqrt(model.spring / model.atom_mass) * model.lattice_const
        k = 1e-6 * math.pi / model.lattice_const
        assert dispersion(model, k) / (sound * k) == pytest.approx(1.0, abs=1e-9)
        # independent check: centered finite-difference slope at k -> 0
        h = 1e-7 * math.pi / model.lattice_const
        fd_slope = (dispersion(model, k + h) - dispersion(model, k - h)) / (2 * h)
        assert fd_slope == pytest.approx(sound, rel=1e-6)

    def test_periodicity_zero_at_reciprocal_vector(self, model):
        k_edge = math.pi / model.lattice_const
        assert abs(dispersion(model, 2 * k_edge)) <= 1e-15 * dispersion(model, k_edge)

    def test_k_zero_rejected(self, model):
        with pytest.raises(ValueError, match="thin-spectrum"):
            dispersion(model, 0.0)

    def test_symmetry_in_k(self, model):
        rng = np.random.default_rng(11)
        k = rng.uniform(-math.pi, math.pi, size=1000) / model.lattice_const
        k = k[k != 0.0]
        np.testing.assert_allclose(
            dispersion(model, k), dispersion(model, -k), rtol=1e-15
        )


class TestBogoliubov:
    def test_quarter_zone_is_trivial(self, model):
        c = bogoliubov(model, 0.5 * math.pi / model.lattice_const)
        assert c.B == pytest.approx(0.0, abs=1e-15)
        assert c.u == pytest.approx(0.0, abs=1e-15)
        assert c.cosh_u == pytest.approx(1.0, rel=1e-15)
        assert c.sinh_u == pytest.approx(0.0, abs=1e-15)

    def test_zone_edge_values(self, model):
        c = bogoliubov(model, math.pi / model.lattice_const)
        assert c.A == pytest.approx(3.0, rel=1e-15)
        assert c.B == pytest.approx(1.0, rel=1e-15)
        assert math.tanh(2 * c.u) == pytest.approx(-1.0 / 3.0, rel=1e-14)
        assert abs(c.off_diagonal_coefficient()) < 1e-12

    def test_hyperbolic_identity_random_k(self, model):
        rng = np.random.default_rng(5)
        k = rng.uniform(0.05, 1.95, size=10_000) * math.pi / model.lattice_const
        c = bogoliubov(model, k)
        np.testing.assert_allclose(c.cosh_u**2 - c.sinh_u**2, 1.0, atol=1e-12)

    def test_off_diagonal_cancellation_random_k(self, model):
        rng = np.random.default_rng(6)
        k = rng.uniform(0.05, 1.95, size=10_000) * math.pi / model.lattice_const
        c = bogoliubov(model, k)
        assert np.max(np.abs(c.off_diagonal_coefficient())) < 1e-12

    def test_diagonalized_energy_reproduces_dispersion(self, model):
        # after cancellation the level spacing is hbar sqrt(k/2m) sqrt(A^2-B^2)
        rng = np.random.default_rng(8)
        k = rng.uniform(0.05, 1.95, size=100) * math.pi / model.lattice_const
        c = bogoliubov(model, k)
        scale = model.hbar * math.sqrt(model.spring / (2.0 * model.atom_mass))
        np.testing.assert_allclose(
            scale * np.sqrt(c.A**2 - c.B**2), dispersion(model, k), rtol=1e-12
        )

    def test_divergence_toward_zone_center(self, model):
        ka = 10.0 ** -np.arange(1, 7)
        sinh = np.array(
            [abs(bogoliubov(model, x / model.lattice_const).sinh_u) for x in ka]
        )
        assert np.all(np.diff(sinh) > 0)
        assert sinh[-1] > 10.0

    def test_zone_center_rejected(self, model):
        with pytest.raises(ValueError, match="thin-spectrum"):
            bogoliubov(model, 0.0)
        with pytest.raises(ValueError, match="diverges"):
            bogoliubov(model, 2 * math.pi / model.lattice_const)


class TestThinSpectrum:
    def test_zero_momentum_level(self, model):
        assert thin_spectrum_energies(model, 3)[0] == 0.0

    def test_quadratic_in_n(self, model):
        e = thin_spectrum_energies(model, 4)
        assert e[2] / e[1] == pytest.approx(4.0, rel=1e-12)
        assert e[4] / e[1] == pytest.approx(16.0, rel=1e-12)

    def test_exact_inverse_n_scaling(self, model):
        doubled = CrystalModel(
            n_atoms=2 * model.n_atoms,
            atom_mass=model.atom_mass,
            spring=model.spring,
            lattice_const=model.lattice_const,
            box_length=model.box_length,
        )
        e1 = thin_spectrum_energies(model, 5)
        e2 = thin_spectrum_energies(doubled, 5)
        # halving by a factor of 2 is exact in binary floating point
        assert np.all(e2 == e1 / 2.0)

    def test_n_max_validation(self, model):
        with pytest.raises(ValueError):
            thin_spectrum_energies(model, 0)


class TestSbGroundState:
    def test_second_moment_matches_quadrature_oracle(self):
        params = PhysicalParams(total_mass=1e-11, omega=1000.0)
        x_c = params.x_c
        grid = make_grid(-8 * x_c, 8 * x_c, 512)
        psi = sb_ground_state(grid, params)
        obs = observables(psi)
        expected = params.hbar / (2.0 * params.total_mass * params.omega)
        assert obs.mean_x2 == pytest.approx(expected, rel=1e-6)

        # independent continuum quadrature of the analytic profile
        alpha = params.total_mass * params.omega / params.hbar

        def integrand(x):
            return x * x * math.sqrt(alpha / math.pi) * math.exp(-alpha * x * x)

        oracle = quad(integrand, -8 * x_c, 8 * x_c)[0]
        assert obs.mean_x2 == pytest.approx(oracle, rel=1e-6)

    def test_width_scaling_with_omega(self):
        p1 = PhysicalParams(total_mass=1e-11, omega=1000.0)
        p2 = PhysicalParams(total_mass=1e-11, omega=1.0)
        g1 = make_grid(-8 * p1.x_c, 8 * p1.x_c, 512)
        g2 = make_grid(-8 * p2.x_c, 8 * p2.x_c, 512)
        w1 = math.sqrt(observables(sb_ground_state(g1, p1)).mean_x2)
        w2 = math.sqrt(observables(sb_ground_state(g2, p2)).mean_x2)
        assert w2 / w1 == pytest.approx(math.sqrt(1000.0), rel=1e-6)

    def test_parity(self):
        params = PhysicalParams(total_mass=1e-11, omega=1000.0)
        grid = make_grid(-8 * params.x_c, 8 * params.x_c, 512)
        obs = observables(sb_ground_state(grid, params))
        assert abs(obs.mean_x) < 1e-9 * math.sqrt(obs.mean_x2)

    def test_unresolvable_width_rejected(self):
        params = PhysicalParams(total_mass=1e-11, omega=1000.0)
        coarse = make_grid(-100 * params.x_c, 100 * params.x_c, 64)
        with pytest.raises(ValueError, match="resolve"):
            sb_ground_state(coarse, params)
        narrow = make_grid(-2 * params.x_c, 2 * params.x_c, 1024)
        with pytest.raises(ValueError, match="extent"):
            sb_ground_state(narrow, params)


class TestSingularLimitTable:
    @pytest.fixture
    def table_model(self):
        return CrystalModel(
            n_atoms=2, atom_mass=1e-26, spring=1.0, lattice_const=1e-10, box_length=1.0
        )

    def test_hundredfold_n_shrinks_width_tenfold(self, table_model):
        rows = singular_limit_table(
            table_model, [1e3, 1e5, 1e7], [1.0, 0.5, 0.25]
        )
        n_leg = [r for r in rows if r.order == "n_first" and r.omega == 1.0]
        assert n_leg[1].width / n_leg[0].width == pytest.approx(0.1, rel=1e-12)

    def test_omega_first_delocalizes(self, table_model):
        rows = singular_limit_table(
            table_model, [10, 1e10, 1e20], [1.0, 1e-6, 1e-12]
        )
        omega_leg = [r for r in rows if r.order == "omega_first"]
        assert any(r.delocalized for r in omega_leg)
        cap = table_model.box_length / math.sqrt(12.0)
        assert max(r.width for r in omega_leg) == pytest.approx(cap, rel=1e-12)

    def test_n_first_stays_localized(self, table_model):
        rows = singular_limit_table(
            table_model, [1e10, 1e15, 1e20], [1.0, 1e-6, 1e-12]
        )
        assert not any(r.delocalized for r in rows if r.order == "n_first")

    def test_fixed_product_fixes_width(self, table_model):
        r1 = singular_limit_table(table_model, [1e3, 1e5], [1.0, 0.5])
        r2 = singular_limit_table(table_model, [1e5, 1e7], [1e-2, 0.5e-2])
        # same N*omega product at the first corner of each table
        assert r1[0].n_atoms * r1[0].omega == pytest.approx(
            r2[0].n_atoms * r2[0].omega
        )
        assert r1[0].width == pytest.approx(r2[0].width, rel=1e-12)

    def test_monotonicity_validation(self, table_model):
        with pytest.raises(ValueError, match="increasing"):
            singular_limit_table(table_model, [10, 10], [1.0, 0.5])
        with pytest.raises(ValueError, match="decreasing"):
            singular_limit_table(table_model, [10, 100], [0.5, 1.0])


class TestModelValidation:
    def test_rejects_bad_fields(self):
        with pytest.raises(ValueError):
            CrystalModel(n_atoms=1, atom_mass=1.0, spring=1.0, lattice_const=1.0)
        with pytest.raises(ValueError):
            CrystalModel(n_atoms=2, atom_mass=-1.0, spring=1.0, lattice_const=1.0)
