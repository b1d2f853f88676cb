import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import draw_rates, draw_stable, lyapunov_oracle
from optomech.core import coupling_rates, derive_cavity_rates, nominal_system, thermal_numbers
from optomech.dynamics import (
    LinearRates, characteristic_coefficients, closed_form_effective, cooling_predictions, detuning_sweep,
    diffusion_from_rates, displacement_nps, drift_diffusion, drift_from_rates, effective_params,
    equipartition_temperature, instability_threshold, is_stable, linear_rates, loglog_slope, nms_warning,
    position_spectrum, routh_hurwitz_quartic, solve_lyapunov, spectral_variance, steady_covariance,
    sweep_point, variance_by_spectrum,
)
from optomech.errors import InstabilityError, ParameterError

TWO_PI = 2.0 * math.pi
OMEGA_M = TWO_PI * 945e3


def rates(**kw):
    base = dict(omega_m=OMEGA_M, gamma_m=OMEGA_M / 3e4, kappa=0.8 * OMEGA_M, delta=OMEGA_M, G=1e5,
                n_th=1e3, x_zpf=4.5e-16)
    base.update(kw)
    return LinearRates(**base)


class TestDrift:
    def test_sparsity(self):
        A = drift_from_rates(rates())
        expected_zero = [(0, 0), (0, 2), (0, 3), (1, 3), (2, 0), (2, 1), (3, 1)]
        assert all(A[i, j] == 0.0 for i, j in expected_zero)
        assert A[1, 2] == A[3, 0] == 1e5

    def test_decoupled_blocks(self):
        r = rates(G=0.0)
        A = drift_from_rates(r)
        assert not A[:2, 2:].any() and not A[2:, :2].any()
        ev = np.sort_complex(np.linalg.eigvals(A[:2, :2]))
        w = math.sqrt(r.omega_m**2 - r.gamma_m**2 / 4)
        np.testing.assert_allclose(ev, [-r.gamma_m / 2 - 1j * w, -r.gamma_m / 2 + 1j * w], rtol=1e-12)

    def test_nominal_cooling_point_is_stable(self):
        assert np.all(np.linalg.eigvals(drift_diffusion(nominal_system()).A).real < 0)

    def test_blue_detuning_destabilizes(self):
        s = nominal_system(detuning=-OMEGA_M)
        p = instability_threshold(s, 7e-3)
        below = is_stable(drift_diffusion(s.with_drive(power=0.99 * p)))
        above = is_stable(drift_diffusion(s.with_drive(power=1.01 * p)))
        assert below.stable and below.routh_hurwitz
        assert not above.stable and not above.routh_hurwitz
        assert above.margin >= 0

    def test_diffusion_symmetric_psd(self):
        D = drift_diffusion(nominal_system()).D
        assert np.array_equal(D, D.T)
        assert np.all(np.linalg.eigvalsh(D) >= 0)


class TestStability:
    def test_characteristic_polynomial_matches_numpy(self):
        A = drift_from_rates(rates(G=3e6))
        np.testing.assert_allclose(characteristic_coefficients(A), np.poly(A), rtol=1e-9)

    def test_decoupled_is_stable(self):
        st_ = is_stable(drift_from_rates(rates(G=0.0)))
        assert st_.stable and st_.routh_hurwitz

    def test_repeated_zero_eigenvalue(self):
        st_ = is_stable(np.zeros((4, 4)))
        assert not st_.stable and st_.margin == 0.0 and not st_.routh_hurwitz

    def test_routh_hurwitz_known_polynomials(self):
        assert routh_hurwitz_quartic(np.poly([-1, -2, -3, -4]))
        assert not routh_hurwitz_quartic(np.poly([-1, -2, -3, 0.5]))
        assert not routh_hurwitz_quartic(np.poly([-1, -2, 1j - 0.0, -1j]))

    def test_agreement_on_random_draws(self):
        rng = np.random.default_rng(11)
        for _ in range(2000):
            st_ = is_stable(drift_from_rates(draw_rates(rng)))
            assert st_.stable == st_.routh_hurwitz

    def test_threshold_requires_unstable_upper_bound(self):
        with pytest.raises(ParameterError):
            instability_threshold(nominal_system(), 7e-3)


class TestCovariance:
    def test_equilibrium_contract(self):
        r = rates(G=0.0, n_th=123.4)
        V = solve_lyapunov(drift_from_rates(r), diffusion_from_rates(r))
        assert V[0, 0] == pytest.approx(123.9, rel=1e-12)
        assert V[1, 1] == pytest.approx(123.9, rel=1e-12)
        assert V[2, 2] == pytest.approx(0.5, rel=1e-12)

    def test_vacuum(self):
        r = rates(G=0.0, n_th=0.0)
        V = solve_lyapunov(drift_from_rates(r), diffusion_from_rates(r))
        assert V[0, 0] == pytest.approx(0.5, rel=1e-13)

    def test_bath_occupancy_without_drive(self):
        s = nominal_system(power=0.0, temperature=2.3)
        assert steady_covariance(s).V[0, 0] == pytest.approx(5.07e4, rel=1e-3)
        assert steady_covariance(s).n_full == pytest.approx(thermal_numbers(s.environment, s.mechanics).n_th,
                                                            rel=1e-12)

    @settings(max_examples=300, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_matches_scipy_and_residual(self, seed):
        r = draw_stable(np.random.default_rng(seed), 1)[0]
        A, D = drift_from_rates(r), diffusion_from_rates(r)
        V = solve_lyapunov(A, D)
        ref = lyapunov_oracle(A, D)
        np.testing.assert_allclose(V, ref, rtol=1e-7, atol=1e-9 * np.abs(ref).max())
        assert np.linalg.norm(A @ V + V @ A.T + D) <= 1e-10 * np.linalg.norm(D) * max(1.0, np.linalg.cond(A))

    def test_nominal_residual(self):
        dd = drift_diffusion(nominal_system())
        V = solve_lyapunov(dd.A, dd.D)
        assert np.linalg.norm(dd.A @ V + V @ dd.A.T + dd.D) <= 1e-10 * np.linalg.norm(dd.D)

    def test_unstable_raises_with_margin(self):
        with pytest.raises(InstabilityError) as info:
            steady_covariance(nominal_system(detuning=-OMEGA_M))
        assert info.value.margin > 0

    def test_vanishing_drive_limit(self):
        s = nominal_system(power=1e-15)
        n_th = thermal_numbers(s.environment, s.mechanics).n_th
        assert abs(steady_covariance(s).n_full / n_th - 1) < 1e-6

    def test_occupancy_at_half_mode_matching(self):
        # frozen full-model value; the first-order estimate n_f is lower
        pred = cooling_predictions(nominal_system(mode_matching=0.5))
        assert pred.n_full == pytest.approx(40.0, abs=0.1)
        assert pred.n_f == pytest.approx(31.2, abs=0.1)

    def test_sideband_floor(self):
        rng = np.random.default_rng(5)
        checked = 0
        while checked < 2000:
            r = draw_rates(rng)
            if r.kappa > 0.5 * r.omega_m:
                continue
            A = drift_from_rates(r)
            if not is_stable(A).stable:
                continue
            V = solve_lyapunov(A, diffusion_from_rates(r))
            assert 0.5 * (V[0, 0] + V[1, 1] - 1) >= 0.95 * r.kappa**2 / (4 * r.omega_m**2)
            checked += 1


class TestSpectrum:
    def test_decoupled_lorentzian(self):
        r = rates(G=0.0, gamma_m=OMEGA_M / 3e4)
        A, D = drift_from_rates(r), diffusion_from_rates(r)
        # single oscillator: S = 2 gamma (n + 1/2) w_m^2 / ((w_m^2 - w^2)^2 + gamma^2 w^2) / ... at w = w_m
        s_peak = position_spectrum(A, D, [r.omega_m])[0]
        assert s_peak == pytest.approx(2 * (r.n_th + 0.5) / r.gamma_m, rel=1e-12)
        w = r.omega_m + r.gamma_m * np.array([-3.0, -0.5, 0.5, 3.0])
        exact = 2 * r.gamma_m * (r.n_th + 0.5) * r.omega_m**2 / ((r.omega_m**2 - w**2) ** 2 + r.gamma_m**2 * w**2)
        np.testing.assert_allclose(position_spectrum(A, D, w), exact, rtol=1e-10)

    def test_duality_nominal(self):
        s = nominal_system()
        assert variance_by_spectrum(s) == pytest.approx(steady_covariance(s).V[0, 0], rel=1e-6)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_duality_random(self, seed):
        r = draw_stable(np.random.default_rng(seed), 1)[0]
        A, D = drift_from_rates(r), diffusion_from_rates(r)
        ev = np.linalg.eigvals(A)
        feats = [(e.imag, -e.real) for e in ev] + [(r.omega_m, r.gamma_m), (r.delta, r.kappa)]
        assert spectral_variance(A, D, feats) == pytest.approx(solve_lyapunov(A, D)[0, 0], rel=1e-6)

    def test_displacement_nps_integral(self):
        s = nominal_system()
        f = np.linspace(1.0, 4e6, 400_001)
        nps = displacement_nps(s, TWO_PI * f)
        x2 = np.trapezoid(nps.values, nps.freqs)
        ref = 2 * linear_rates(s).x_zpf ** 2 * steady_covariance(s).V[0, 0]
        assert x2 == pytest.approx(ref, rel=0.01)  # tail beyond 4 MHz is missing
        assert np.all(nps.values >= 0)

    def test_max_cooling_variance_order(self):
        s = nominal_system()
        x2 = 2 * linear_rates(s).x_zpf ** 2 * steady_covariance(s).V[0, 0]
        assert 0.5 * 1.3e-29 <= x2 <= 2 * 1.3e-29

    def test_negative_grid_rejected(self):
        with pytest.raises(ParameterError):
            displacement_nps(nominal_system(), [-1.0, 1.0])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_nonnegative(self, seed):
        r = draw_stable(np.random.default_rng(seed), 1)[0]
        w = np.linspace(0.0, 3 * max(r.omega_m, abs(r.delta)), 2001)
        assert np.all(position_spectrum(drift_from_rates(r), diffusion_from_rates(r), w) >= 0)


class TestEffectiveParams:
    def test_decoupled(self):
        e = effective_params(nominal_system(power=0.0))
        assert e.omega_eff == OMEGA_M
        assert e.gamma_eff == OMEGA_M / 3e4
        assert e.method == "closed-form" and e.omega_eval == OMEGA_M

    @given(st.floats(1e3, 3e7), st.floats(0.0, 5e6))
    def test_odd_in_detuning(self, delta, G):
        r = rates(delta=delta, G=G)
        rm = r._replace(delta=-delta)
        k2 = r.kappa**2
        d = (k2 + (r.omega_m - delta) ** 2) * (k2 + (r.omega_m + delta) ** 2)
        w_p, g_p = closed_form_effective(r)
        w_m, g_m = closed_form_effective(rm)
        assert g_p - r.gamma_m == pytest.approx(-(g_m - r.gamma_m), rel=1e-12, abs=1e-300)
        shift = G**2 * delta * r.omega_m * (k2 + delta**2 - r.omega_m**2) / d
        if math.isfinite(w_p) and math.isfinite(w_m):
            assert w_p**2 - r.omega_m**2 == pytest.approx(-shift, rel=1e-6, abs=1e-9 * r.omega_m**2)
            assert w_m**2 - r.omega_m**2 == pytest.approx(shift, rel=1e-6, abs=1e-9 * r.omega_m**2)
        if G > 1e3:
            assert g_p > r.gamma_m

    def test_resolved_sideband_damping(self):
        # kappa = 0.8 w_m, Delta = w_m: gamma_eff - gamma_m = 2 G^2 w^2 kappa / (kappa^2 (kappa^2 + 4 w^2))
        r = rates(G=2e5)
        _, g = closed_form_effective(r)
        k = r.kappa
        assert g - r.gamma_m == pytest.approx(2 * r.G**2 * r.omega_m**2 * k / (k**2 * (k**2 + 4 * r.omega_m**2)),
                                              rel=1e-12)
        assert g - r.gamma_m == pytest.approx(0.539 * r.G**2 / r.omega_m, rel=1e-3)

    def test_damping_matches_eigenvalue_in_weak_coupling(self):
        s = nominal_system(power=100e-6, mode_matching=0.5)
        cf = effective_params(s)
        fit = effective_params(s, method="spectrum-fit")
        assert fit.method == "spectrum-fit"
        assert fit.gamma_eff == pytest.approx(cf.gamma_eff, rel=0.01)
        assert fit.omega_eff == pytest.approx(cf.omega_eff, rel=0.01)
        assert cf.gamma_eff == pytest.approx(9276, rel=2e-3)

    def test_detuning_argument_replaces_drive(self):
        s = nominal_system()
        assert effective_params(s, detuning=0.0).gamma_eff == s.mechanics.gamma_m

    def test_unstable_raises(self):
        with pytest.raises(InstabilityError):
            effective_params(nominal_system(detuning=-OMEGA_M))

    def test_unknown_method(self):
        with pytest.raises(ParameterError):
            effective_params(nominal_system(), method="guess")


class TestCooling:
    def test_sideband_limit(self):
        r = rates(kappa=0.8 * OMEGA_M)
        assert r.kappa**2 / (4 * r.omega_m**2) == pytest.approx(0.16, abs=1e-12)
        assert cooling_predictions(nominal_system()).n_min == pytest.approx(0.1654, abs=1e-4)

    def test_first_order_occupancy_definition(self):
        s = nominal_system()
        p = cooling_predictions(s)
        G = coupling_rates(s).G
        kappa = derive_cavity_rates(s.cavity).kappa
        assert p.Gamma_sb == pytest.approx(G**2 / (2 * kappa), rel=1e-14)
        assert p.n_f == pytest.approx(thermal_numbers(s.environment, s.mechanics).gamma_th / p.Gamma_sb, rel=1e-14)
        assert 1.4e7 / 4.4e5 == pytest.approx(32, abs=0.5)

    def test_no_drive(self):
        s = nominal_system(power=0.0)
        p = cooling_predictions(s)
        assert p.Gamma_sb == 0.0
        assert p.n_f == thermal_numbers(s.environment, s.mechanics).n_th

    def test_unstable_raises(self):
        with pytest.raises(InstabilityError):
            cooling_predictions(nominal_system(detuning=-OMEGA_M))

    def test_equipartition_temperature(self):
        s = nominal_system(power=0.0, temperature=2.3)
        V = steady_covariance(s).V[0, 0]
        assert equipartition_temperature(s, V, OMEGA_M) == pytest.approx(2.3, rel=1e-4)


class TestNMS:
    def test_no_coupling(self):
        w = nms_warning(nominal_system(power=0.0))
        assert not w.flag and w.ratio == 0.0

    def test_nominal_below_threshold(self):
        assert not nms_warning(nominal_system(mode_matching=1.0)).flag

    def test_reduced_kappa_flags(self):
        s = nominal_system(mode_matching=0.5)
        kappa = derive_cavity_rates(s.cavity).kappa
        w = nms_warning(s, kappa=kappa / 10)
        assert w.flag and w.ratio == pytest.approx(10 * nms_warning(s).ratio, rel=1e-12)


class TestSweep:
    def test_shape_and_order(self):
        s = nominal_system()
        d = [-OMEGA_M, 0.0, OMEGA_M]
        p = [140e-6, 7e-3]
        rows = detuning_sweep(s, d, p)
        assert len(rows) == 6
        assert [(r.detuning, r.power) for r in rows] == [(a, b) for a in d for b in p]

    def test_unstable_rows_have_no_numbers(self):
        row = sweep_point(nominal_system(), -OMEGA_M, 7e-3)
        assert not row.stable
        assert row.omega_eff is row.gamma_eff is row.T_eff is row.n is None

    def test_zero_detuning_keeps_intrinsic_damping(self):
        s = nominal_system()
        for row in detuning_sweep(s, [0.0], [140e-6, 1e-3, 7e-3]):
            assert row.gamma_eff == s.mechanics.gamma_m

    def test_low_power_curves(self):
        s = nominal_system(power=140e-6)
        d = np.linspace(0.1, 2.0, 20) * OMEGA_M
        red = detuning_sweep(s, d, [140e-6])
        blue = detuning_sweep(s, -d, [140e-6])
        gm = s.mechanics.gamma_m
        for a, b, delta in zip(red, blue, d):
            assert a.stable and a.gamma_eff > gm
            _, g_blue = closed_form_effective(linear_rates(s.with_drive(detuning=-delta)))
            assert a.gamma_eff - gm == pytest.approx(-(g_blue - gm), rel=1e-9)
            # anti-damping beyond gamma_m: the blue side is flagged, not tabulated
            assert b.stable == (g_blue > 0)
        # past sqrt(w_m^2 - kappa^2) the red side softens, below it stiffens
        assert red[-1].omega_eff < OMEGA_M < red[0].omega_eff
        r = linear_rates(s.with_drive(detuning=d[5]))
        assert red[5].omega_eff == closed_form_effective(r)[0]

    def test_power_law_product(self):
        s = nominal_system()
        rows = detuning_sweep(s, [OMEGA_M], np.geomspace(10e-6, 500e-6, 20))
        prod = np.array([r.T_eff * r.gamma_eff for r in rows])
        assert prod.max() / prod.min() - 1 < 0.01

    def test_workers_do_not_change_rows(self):
        s = nominal_system()
        d = np.linspace(-1, 2, 7) * OMEGA_M
        p = [140e-6, 1e-3, 7e-3]
        assert detuning_sweep(s, d, p, workers=1) == detuning_sweep(s, d, p, workers=2)

    def test_empty_lists_rejected(self):
        with pytest.raises(ParameterError):
            detuning_sweep(nominal_system(), [], [1e-3])

    def test_loglog_slope(self):
        x = np.geomspace(1, 1e3, 10)
        assert loglog_slope(x, 3 * x**-1.5) == pytest.approx(-1.5, rel=1e-12)
