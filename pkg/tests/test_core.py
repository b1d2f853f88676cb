import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from optomech.core import (
    CONSTANTS, DriveField, Environment, MechanicalMode, OpticalCavity, OptomechSystem, coupling_rates,
    derive_cavity_rates, derive_mechanical, heat_load, intracavity_state, nominal_system, thermal_numbers,
)
from optomech.errors import ParameterError

TWO_PI = 2.0 * math.pi
OMEGA_M = TWO_PI * 945e3


def cavity(finesse=3900.0, length=0.025, **kw):
    return OpticalCavity(length=length, wavelength=1064e-9, finesse=finesse, input_transmission=900e-6,
                         loss=620e-6, **kw)


def test_planck_constant_is_two_pi_hbar():
    assert CONSTANTS.h == 2.0 * math.pi * CONSTANTS.hbar
    assert CONSTANTS.c == 299_792_458.0


class TestCavityRates:
    def test_kappa_matches_quoted_linewidth(self):
        r = derive_cavity_rates(cavity())
        assert r.kappa / TWO_PI == pytest.approx(768.7e3, rel=1e-3)
        assert abs(r.kappa / (TWO_PI * 770e3) - 1) < 0.005

    @pytest.mark.filterwarnings("ignore:finesse")
    def test_doubling_finesse_halves_kappa(self):
        assert derive_cavity_rates(cavity(7800.0)).kappa == pytest.approx(
            0.5 * derive_cavity_rates(cavity()).kappa, rel=1e-15)

    def test_fsr(self):
        assert derive_cavity_rates(cavity()).fsr == pytest.approx(5.99585e9, rel=1e-5)

    def test_kappa_is_pi_fwhm(self):
        r = derive_cavity_rates(cavity())
        assert r.kappa == pytest.approx(math.pi * r.fwhm, rel=1e-14)

    def test_kappa_in(self):
        assert derive_cavity_rates(cavity()).kappa_in == pytest.approx(299_792_458.0 * 900e-6 / 0.1, rel=1e-14)

    @pytest.mark.parametrize("field,value", [("length", 0.0), ("finesse", -1.0), ("wavelength", math.nan)])
    def test_rejects_bad_geometry(self, field, value):
        kw = dict(length=0.025, wavelength=1064e-9, finesse=3900.0, input_transmission=9e-4)
        kw[field] = value
        with pytest.raises(ParameterError):
            OpticalCavity(**kw)

    def test_rejects_bad_transmission(self):
        with pytest.raises(ParameterError):
            OpticalCavity(length=0.025, wavelength=1064e-9, finesse=3900.0, input_transmission=1.0)
        with pytest.raises(ParameterError):
            OpticalCavity(length=0.025, wavelength=1064e-9, finesse=3900.0, input_transmission=1e-3, loss=-1e-6)

    def test_finesse_above_loss_limit_warns(self):
        # loss limit 2 pi / 1.52e-3 = 4134; 15 % above is 4754
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            cavity(4700.0)
        with pytest.warns(UserWarning, match="loss-limited"):
            cavity(5000.0)

    @given(st.floats(100.0, 1e5), st.floats(1e-3, 1.0))
    def test_kappa_identity(self, F, L):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            r = derive_cavity_rates(cavity(F, L))
        assert r.kappa * 2 * L * F / (math.pi * CONSTANTS.c) == pytest.approx(1.0, abs=1e-14)

    @given(st.floats(100.0, 1e5), st.floats(1.01, 10.0))
    def test_kappa_decreases_with_finesse(self, F, factor):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert derive_cavity_rates(cavity(F * factor)).kappa < derive_cavity_rates(cavity(F)).kappa


class TestMechanical:
    def test_gamma_m(self):
        r = derive_mechanical(MechanicalMode(OMEGA_M, 30_000.0, 43e-12))
        assert r.gamma_m / TWO_PI == pytest.approx(31.5, rel=1e-12)

    def test_gamma_vanishes_at_large_q(self):
        assert derive_mechanical(MechanicalMode(OMEGA_M, 1e300, 43e-12)).gamma_m < 1e-290

    def test_x_zpf(self):
        assert derive_mechanical(MechanicalMode(OMEGA_M, 3e4, 43e-12)).x_zpf == pytest.approx(4.54e-16, rel=2e-3)

    @given(st.floats(1e-15, 1e-6))
    def test_x_zpf_mass_scaling(self, m):
        a = derive_mechanical(MechanicalMode(OMEGA_M, 3e4, m)).x_zpf
        b = derive_mechanical(MechanicalMode(OMEGA_M, 3e4, 4 * m)).x_zpf
        assert b == pytest.approx(0.5 * a, rel=1e-14)

    @pytest.mark.parametrize("args", [(0.0, 1.0, 1.0), (1.0, -1.0, 1.0), (1.0, 1.0, math.inf)])
    def test_rejects_non_positive(self, args):
        with pytest.raises(ParameterError):
            MechanicalMode(*args)


class TestThermal:
    mode = MechanicalMode(OMEGA_M, 30_000.0, 43e-12)

    def test_n_th_at_bath_temperature(self):
        n = thermal_numbers(Environment(2.3), self.mode).n_th
        assert n == pytest.approx(5.07e4, rel=1e-3)

    def test_zero_temperature(self):
        assert tuple(thermal_numbers(Environment(0.0), self.mode)) == (0.0, 0.0)

    def test_gamma_th_from_inputs(self):
        # computed from T and Q, not the smaller figure quoted in the text
        assert thermal_numbers(Environment(5.3), self.mode).gamma_th == pytest.approx(2.31e7, rel=2e-3)

    def test_bose_einstein_flag(self):
        classical = thermal_numbers(Environment(2.3), self.mode).n_th
        be = thermal_numbers(Environment(2.3), self.mode, bose_einstein=True).n_th
        assert be == pytest.approx(classical - 0.5, rel=1e-6)

    @given(st.floats(1e-3, 300.0), st.floats(1.0, 100.0))
    def test_linear_in_temperature(self, T, k):
        a = thermal_numbers(Environment(T), self.mode)
        b = thermal_numbers(Environment(k * T), self.mode)
        assert b.n_th == pytest.approx(k * a.n_th, rel=1e-12)
        assert b.gamma_th == pytest.approx(k * a.gamma_th, rel=1e-12)

    def test_negative_temperature_rejected(self):
        with pytest.raises(ParameterError):
            Environment(-1.0)


class TestIntracavity:
    def test_resonant_drive(self):
        s = nominal_system(detuning=0.0, mode_matching=1.0)
        ic = intracavity_state(s)
        assert ic.n_cav == pytest.approx(8.6e9, rel=0.015)
        assert ic.P_circ == pytest.approx(9.7, rel=0.01)

    def test_zero_power(self):
        assert intracavity_state(nominal_system(power=0.0)).n_cav == 0.0

    def test_detuned_drive(self):
        assert intracavity_state(nominal_system(mode_matching=1.0)).P_circ == pytest.approx(3.9, rel=0.01)

    def test_phase(self):
        s = nominal_system(mode_matching=1.0)
        a = intracavity_state(s).alpha_s
        kappa = derive_cavity_rates(s.cavity).kappa
        assert math.atan2(a.imag, a.real) == pytest.approx(math.atan2(OMEGA_M, kappa), rel=1e-12)

    @given(st.floats(-1e8, 1e8))
    def test_even_in_detuning_and_peaked_at_resonance(self, delta):
        p = intracavity_state(nominal_system(detuning=delta)).P_circ
        m = intracavity_state(nominal_system(detuning=-delta)).P_circ
        assert p == pytest.approx(m, rel=1e-14)
        assert p <= intracavity_state(nominal_system(detuning=0.0)).P_circ

    def test_detuning_offset_adds(self):
        cav = cavity(detuning_offset=TWO_PI * 100e3)
        s = OptomechSystem(cav, MechanicalMode(OMEGA_M, 3e4, 43e-12), Environment(5.3),
                           DriveField(7e-3, OMEGA_M - TWO_PI * 100e3))
        assert s.detuning == pytest.approx(OMEGA_M, rel=1e-15)


class TestCoupling:
    def test_single_photon_rate(self):
        assert coupling_rates(nominal_system()).g0 / TWO_PI == pytest.approx(5.1, rel=0.01)

    def test_zero_power(self):
        assert coupling_rates(nominal_system(power=0.0)).G == 0.0

    def test_field_enhanced_rate(self):
        assert coupling_rates(nominal_system(mode_matching=0.5)).G == pytest.approx(2.7e6, rel=0.01)

    def test_sqrt_power_over_three_decades(self):
        P = np.geomspace(7e-6, 7e-3, 13)
        G = np.array([coupling_rates(nominal_system(power=p)).G for p in P])
        np.testing.assert_allclose(G / np.sqrt(P), G[0] / np.sqrt(P[0]), rtol=1e-12)


class TestHeatLoad:
    def test_zero_absorption(self):
        assert heat_load(nominal_system(), 0.0, 0.0).P_mirror == 0.0

    def test_mirror_product(self):
        s = nominal_system(mode_matching=1.0)
        h = heat_load(s, 1e-6, 0.01)
        assert h.P_mirror == pytest.approx(1e-6 * intracavity_state(s).P_circ, rel=1e-15)
        assert h.P_mirror == pytest.approx(3.9e-6, rel=0.01)
        assert h.P_substrate == pytest.approx(0.01 * 9e-5 * intracavity_state(s).P_circ, rel=1e-15)

    def test_resonant_reading_is_larger(self):
        # the quoted ~13 uW needs more circulating power than a detuned drive provides
        detuned = heat_load(nominal_system(mode_matching=1.0), 1e-6, 0.0).P_mirror
        resonant = heat_load(nominal_system(detuning=0.0, mode_matching=1.0), 1e-6, 0.0).P_mirror
        assert detuned < 13e-6 and resonant < 13e-6
        assert resonant == pytest.approx(9.7e-6, rel=0.01)

    def test_fraction_domain(self):
        with pytest.raises(ParameterError):
            heat_load(nominal_system(), 1.0, 0.0)


valid = st.fixed_dictionaries({
    "L": st.floats(1e-3, 0.5), "F": st.floats(100.0, 2e4), "T": st.floats(1e-5, 0.1),
    "wm": st.floats(1e4, 1e8), "Q": st.floats(10.0, 1e7), "m": st.floats(1e-15, 1e-6),
    "temp": st.floats(0.0, 300.0), "P": st.floats(0.0, 0.1), "d": st.floats(-1e8, 1e8), "eta": st.floats(0.01, 1.0),
})


@settings(max_examples=200)
@given(valid)
def test_outputs_finite(p):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        s = OptomechSystem(
            OpticalCavity(p["L"], 1064e-9, p["F"], p["T"]), MechanicalMode(p["wm"], p["Q"], p["m"]),
            Environment(p["temp"]), DriveField(p["P"], p["d"], p["eta"]))
    values = [*derive_cavity_rates(s.cavity), *derive_mechanical(s.mechanics),
              *thermal_numbers(s.environment, s.mechanics), *coupling_rates(s), *heat_load(s, 1e-6, 0.01)]
    ic = intracavity_state(s)
    values += [ic.n_cav, ic.P_circ, abs(ic.alpha_s)]
    assert all(math.isfinite(v) for v in values)
