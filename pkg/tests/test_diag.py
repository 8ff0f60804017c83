"""Rate formulas, Maxwell integral, isotropization oracle, step tracking."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from rfppen import diag, mesh
from rfppen.errors import DegenerateInputError, DomainError


class TestPsi:
    def test_zero(self):
        assert diag.psi(0.0) == 0.0

    def test_large_argument_limit(self):
        assert diag.psi(50.0) == pytest.approx(1.0, abs=1e-14)

    def test_against_quadrature_oracle(self):
        # direct numerical quadrature of (2/sqrt(pi)) int_0^x sqrt(t) e^-t dt
        for x in (0.25, 1.0, 2.5, 7.0):
            oracle, _ = quad(lambda t: 2.0 / math.sqrt(math.pi) * math.sqrt(t)
                             * math.exp(-t), 0.0, x, epsabs=1e-14, epsrel=1e-13)
            assert diag.psi(x) == pytest.approx(oracle, abs=1e-12)
        assert diag.psi(1.0) == pytest.approx(0.42759, abs=1e-5)

    def test_monotone_with_range(self):
        x = np.linspace(0, 40, 500)
        p = diag.psi(x)
        assert np.all(np.diff(p) >= 0)
        assert np.all(p >= 0.0) and np.all(p < 1.0 + 1e-15)

    def test_prime_matches_derivative(self):
        for x in (0.3, 1.0, 4.0):
            h = 1e-6
            fd = (diag.psi(x + h) - diag.psi(x - h)) / (2 * h)
            assert diag.psi_prime(x) == pytest.approx(fd, rel=1e-8)

    def test_domain(self):
        with pytest.raises(DomainError):
            diag.psi(-1.0)


class TestTheoreticalRates:
    def test_large_x_asymptote(self):
        p = diag.BeamParams()
        nu_s, _, _ = diag.theoretical_rates(40.0, p)
        nu0 = 4 * math.pi * p.e_test**2 * p.e_bg**2 * p.coulomb_log * p.n_bg \
            / (p.m_test**2 * 40.0**3)
        assert nu_s == pytest.approx((1 + p.m_test / p.m_bg) * nu0, rel=1e-6)

    def test_formula_reduction_at_paper_charges(self):
        # m_t = 2, m_b = 27, e_b = 13, lambda = 1, n = 1:
        # nu_s / nu0 = (29/27) psi(x)
        p = diag.BeamParams()
        u = 1.0
        nu_s, _, _ = diag.theoretical_rates(u, p)
        nu0 = 4 * math.pi * 169.0 / (4.0 * u**3)
        assert nu_s / nu0 == pytest.approx(29.0 / 27.0 * diag.psi(1.0), rel=1e-12)

    def test_x_equals_one_parallel_rate(self):
        p = diag.BeamParams()
        _, _, nu_par = diag.theoretical_rates(1.0, p)
        nu0 = 4 * math.pi * 169.0 / 4.0
        assert nu_par == pytest.approx(diag.psi(1.0) * nu0, rel=1e-12)

    def test_all_positive(self):
        p = diag.BeamParams()
        for u in (0.5, 1.0, 3.0, 20.0):
            rates = diag.theoretical_rates(u, p)
            assert all(r > 0 for r in rates)

    def test_zero_drift_rejected(self):
        with pytest.raises(DomainError):
            diag.theoretical_rates(0.0, diag.BeamParams())


class TestMeasuredRates:
    def test_constant_history_gives_zero(self):
        hist = [(0.0, 2.0, 0.5, 0.1), (0.1, 2.0, 0.5, 0.1), (0.2, 2.0, 0.5, 0.1)]
        assert diag.measured_rates(hist, 1.0) == (0.0, 0.0, 0.0)

    def test_exponential_decay_closed_form(self):
        # u(t) = u0 exp(-nu t) sampled at uniform dt: the implemented average
        # sum |du| / u^{(p)} / (N dt) equals (e^{nu dt} - 1)/dt exactly
        nu, dt, u0 = 0.8, 0.01, 3.0
        ts_ = np.arange(0, 51) * dt
        hist = [(t, u0 * math.exp(-nu * t), 1.0, 1.0) for t in ts_]
        nu_s, _, _ = diag.measured_rates(hist, 1.0)
        exact = (math.exp(nu * dt) - 1.0) / dt
        assert nu_s == pytest.approx(exact, rel=1e-12)
        assert nu_s == pytest.approx(nu, rel=nu * dt)

    def test_single_step_substitution(self):
        # |dT_perp| = 0.01, m u^2 = 1, dt = 0.1 -> nu_perp = 0.1
        hist = [(0.0, 1.0, 0.5, 0.2), (0.1, 1.0, 0.51, 0.2)]
        _, nu_perp, _ = diag.measured_rates(hist, 1.0)
        assert nu_perp == pytest.approx(0.1, rel=1e-12)

    def test_zero_duration_entries_ignored(self):
        hist = [(0.0, 1.0, 0.5, 0.2), (0.1, 0.9, 0.5, 0.2)]
        padded = [hist[0], hist[0], hist[1]]  # zero-duration duplicate
        assert diag.measured_rates(hist, 1.0) == diag.measured_rates(padded, 1.0)

    def test_requires_history(self):
        with pytest.raises(DegenerateInputError):
            diag.measured_rates([(0.0, 1.0, 1.0, 1.0)], 1.0)


class TestNuT:
    def test_small_anisotropy_limit(self):
        # bracket/A^2 -> 4/15 as A -> 0
        p = diag.IsotropizationParams()
        T = 0.3
        eps = 1e-4
        val = diag.nu_T(T * (1 + eps), T, p)
        pref = 2 * math.sqrt(math.pi) * p.e4_lambda * p.n / (math.sqrt(p.m) * T**1.5)
        assert val == pytest.approx(pref * 4.0 / 15.0, rel=1e-3)

    def test_unsupported_branch(self):
        with pytest.raises(DomainError):
            diag.nu_T(0.1, 0.5)

    def test_reference_conserves_mean_temperature(self):
        sol = diag.isotropization_reference(0.5, 0.1, t_end=3.0,
                                            t_eval=np.linspace(0, 3, 40))
        mean = (2 * sol.y[0] + sol.y[1]) / 3.0
        assert np.max(np.abs(mean - mean[0])) <= 1e-8 * mean[0]

    def test_equilibrium_temperature(self):
        sol = diag.isotropization_reference(0.5, 0.1, t_end=40.0)
        assert sol.y[0][-1] == pytest.approx(1.1 / 3.0, rel=1e-5)
        assert sol.y[1][-1] == pytest.approx(1.1 / 3.0, rel=1e-5)


class TestTrackStep:
    def test_first_step_zero_deltas(self):
        g = mesh.build_grid("cylindrical", 16, 16, (0, 4), (-4, 4))
        f = mesh.maxwellian_values(g, 1.0, 0.0, 1.0)
        initial = mesh.conserved_moments(f, g)
        rep = diag.track_step(f, g, 1, 0.1, 0.1, 1.0, initial=initial)
        assert rep.d_mass == 0.0 and rep.d_momentum == 0.0 and rep.d_energy == 0.0
        assert rep.min_f > 0.0

    def test_csv_row_roundtrip(self):
        g = mesh.build_grid("cylindrical", 16, 16, (0, 4), (-4, 4))
        f = mesh.maxwellian_values(g, 1.0, 0.0, 1.0)
        rep = diag.track_step(f, g, 3, 0.5, 0.1, 10.0)
        row = rep.csv_row()
        assert len(row.split(",")) == len(diag.StepReport.CSV_HEADER.split(","))
