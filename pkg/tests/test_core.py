import math

import numpy as np
import pytest
from scipy.integrate import quad

from collapsim.core import (
    ComponentSpec,
    Grid,
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


class TestMakeGrid:
    def test_dx_is_exact(self):
        g = make_grid(-1.0, 1.0, 1024)
        assert g.dx == 2.0 / 1024

    def test_rejects_non_power_of_two(self):
        with pytest.raises(ValueError, match="power of two"):
            make_grid(-1.0, 1.0, 1000)

    def test_rejects_degenerate_extent(self):
        with pytest.raises(ValueError, match="extent"):
            make_grid(0.0, 0.0, 64)

    def test_rejects_tiny_grids(self):
        with pytest.raises(ValueError):
            make_grid(-1.0, 1.0, 8)

    def test_positions_are_cell_centered_and_symmetric(self):
        g = make_grid(-1.0, 1.0, 64)
        x = g.positions
        assert x[0] == pytest.approx(-1.0 + g.dx / 2)
        np.testing.assert_allclose(x + x[::-1], 0.0, atol=1e-16)


class TestMakeState:
    def test_uniform_amplitude(self):
        psi = make_state(make_grid(-1.0, 1.0, 1024), "uniform")
        np.testing.assert_allclose(psi.amplitudes, math.sqrt(0.5), rtol=1e-15)

    def test_gaussian_moments(self):
        psi = make_state(make_grid(-1.0, 1.0, 1024), "gaussian", center=0.0, width=0.05)
        obs = observables(psi)
        assert abs(obs.mean_x) < 1e-12
        assert obs.mean_x2 == pytest.approx(2.5e-3, rel=1e-6)

    def test_symmetric_superposition_has_zero_mean(self):
        comps = [ComponentSpec(-0.4, 0.05, 1.0), ComponentSpec(0.4, 0.05, 1.0)]
        psi = make_state(make_grid(-1.0, 1.0, 1024), "superposition", components=comps)
        assert abs(observables(psi).mean_x) < 1e-9

    def test_all_constructors_normalize(self):
        g = make_grid(-1.0, 1.0, 512)
        comps = [ComponentSpec(-0.3, 0.04, 0.6), ComponentSpec(0.5, 0.03, 0.8j)]
        for psi in (
            uniform_state(g),
            gaussian_state(g, 0.2, 0.05),
            superposition_state(g, comps),
        ):
            assert abs(psi.norm() - 1.0) < 1e-12

    def test_margin_violation_raises(self):
        g = make_grid(-1.0, 1.0, 256)
        with pytest.raises(ValueError, match="margin"):
            gaussian_state(g, 0.9, 0.05)
        with pytest.raises(ValueError, match="margin"):
            superposition_state(g, [ComponentSpec(0.0, 0.3)])

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown state kind"):
            make_state(make_grid(-1.0, 1.0, 64), "plane_wave")


class TestObservables:
    def test_gaussian_mean(self):
        psi = gaussian_state(make_grid(-1.0, 1.0, 1024), 0.3, 0.05)
        assert observables(psi).mean_x == pytest.approx(0.3, abs=1e-6)

    def test_uniform_second_moment(self):
        psi = uniform_state(make_grid(-1.0, 1.0, 1024))
        assert observables(psi).mean_x2 == pytest.approx(1.0 / 3.0, abs=1e-6)

    def test_norm_contract(self):
        psi = gaussian_state(make_grid(-2.0, 2.0, 512), -0.7, 0.1)
        assert observables(psi).norm == pytest.approx(1.0, abs=1e-12)

    def test_parity_property(self):
        # any amplitude pattern symmetrized on the cell-centered grid
        g = make_grid(-1.0, 1.0, 256)
        rng = np.random.default_rng(7)
        for _ in range(20):
            amp = rng.normal(size=g.n_points) + 1j * rng.normal(size=g.n_points)
            amp = amp + amp[::-1]
            psi = WaveFunction(g, amp).normalized()
            assert abs(observables(psi).mean_x) < 1e-9


class TestComponentWeights:
    def test_symmetric_pair(self):
        g = make_grid(-1.0, 1.0, 1024)
        psi = superposition_state(
            g, [ComponentSpec(-0.4, 0.05), ComponentSpec(0.4, 0.05)]
        )
        w = component_weights(psi, [-0.4, 0.4])
        np.testing.assert_allclose(w, [0.5, 0.5], atol=1e-6)

    def test_containment(self):
        g = make_grid(-1.0, 1.0, 1024)
        psi = gaussian_state(g, 0.4, 0.03)
        w = component_weights(psi, [-0.4, 0.4])
        np.testing.assert_allclose(w, [0.0, 1.0], atol=1e-6)

    def test_weights_match_construction_via_quadrature(self):
        # oracle: continuum quadrature of the analytic superposition density
        g = make_grid(-1.0, 1.0, 2048)
        a, s = 0.45, 0.04
        w1, w2 = 0.6, 0.8  # |w1|^2 = 0.36, |w2|^2 = 0.64
        psi = superposition_state(
            g, [ComponentSpec(-a, s, w1), ComponentSpec(a, s, w2)]
        )

        def density(x):
            g1 = (2 * math.pi * s * s) ** -0.25 * math.exp(-((x + a) ** 2) / (4 * s * s))
            g2 = (2 * math.pi * s * s) ** -0.25 * math.exp(-((x - a) ** 2) / (4 * s * s))
            return abs(w1 * g1 + w2 * g2) ** 2

        total = quad(density, -1, 1, limit=200)[0]
        left = quad(density, -1, 0, limit=200)[0] / total
        right = quad(density, 0, 1, limit=200)[0] / total
        w = component_weights(psi, [-a, a])
        np.testing.assert_allclose(w, [left, right], atol=1e-6)
        np.testing.assert_allclose(w, [0.36, 0.64], atol=1e-3)

    def test_weights_sum_to_norm(self):
        g = make_grid(-1.0, 1.0, 256)
        rng = np.random.default_rng(3)
        for _ in range(25):
            amp = rng.normal(size=g.n_points) + 1j * rng.normal(size=g.n_points)
            psi = WaveFunction(g, amp)
            centers = np.unique(rng.uniform(-0.9, 0.9, size=rng.integers(1, 6)))
            w = component_weights(psi, list(centers))
            assert abs(w.sum() - psi.norm()) < 1e-12 * max(1.0, psi.norm())

    def test_weight_order_follows_centers_argument(self):
        g = make_grid(-1.0, 1.0, 1024)
        psi = gaussian_state(g, 0.4, 0.03)
        w = component_weights(psi, [0.4, -0.4])
        np.testing.assert_allclose(w, [1.0, 0.0], atol=1e-6)

    def test_duplicate_centers_raise(self):
        psi = uniform_state(make_grid(-1.0, 1.0, 64))
        with pytest.raises(ValueError, match="duplicate"):
            component_weights(psi, [0.1, 0.1])

    def test_empty_centers_raise(self):
        psi = uniform_state(make_grid(-1.0, 1.0, 64))
        with pytest.raises(ValueError):
            component_weights(psi, [])


class TestPhysicalParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            PhysicalParams(total_mass=0.0, omega=1.0)
        with pytest.raises(ValueError):
            PhysicalParams(total_mass=1.0, omega=-1.0)
        with pytest.raises(ValueError):
            PhysicalParams(total_mass=1.0, omega=1.0, hbar=0.0)

    def test_characteristic_length(self):
        p = PhysicalParams(total_mass=1e-11, omega=1000.0)
        assert p.x_c == pytest.approx(math.sqrt(p.hbar / (1e-11 * 1000.0)), rel=1e-15)

    def test_omega_zero_is_allowed_but_has_no_xc(self):
        p = PhysicalParams(total_mass=1e-11, omega=0.0)
        with pytest.raises(ValueError):
            _ = p.x_c


class TestComponentSpec:
    def test_width_validation(self):
        with pytest.raises(ValueError):
            ComponentSpec(0.0, 0.0)

    def test_weights_renormalized_after_construction(self):
        g = make_grid(-1.0, 1.0, 1024)
        comps = [ComponentSpec(-0.4, 0.05, 3.0), ComponentSpec(0.4, 0.05, 4.0)]
        psi = superposition_state(g, comps)
        w = component_weights(psi, [-0.4, 0.4])
        np.testing.assert_allclose(w, [9.0 / 25.0, 16.0 / 25.0], atol=1e-6)
