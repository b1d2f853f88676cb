"""Pipelines behind the command-line tools.

Each ``run_*`` function takes a validated :class:`RunConfig` and returns plain
data (dicts, lists, :class:`Spectrum`).  File handling and exit codes live in
:mod:`optomech.cli`.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from .config import RunConfig, build_beam, build_stack, build_system, build_tone
from .core import (
    CONSTANTS, coupling_rates, derive_cavity_rates, derive_mechanical, heat_load,
    intracavity_state, thermal_numbers,
)
from .dynamics import (
    closed_form_effective, cooling_predictions, detuning_sweep, displacement_nps, drift_diffusion,
    effective_params, is_stable, linear_rates, loglog_slope, nms_warning, steady_covariance,
)
from .errors import CalibrationError, FloorModelError
from .modal import (
    beam_mode, clamped_roots, effective_mass, mass_budget, pad_stiffness_ratio, spring_mass, stack_mass,
)
from .spectral import (
    QUOTED_SHOT_NOISE, UNIT_RAW, Spectrum, calibrate, fit_peak, floor_spectrum, integrate_band,
    mode_thermometry, notch_tone, shot_noise_floor, thermal_variance,
)

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

# weak-coupling subset used for power-law fits: the cavity adiabatically
# follows the mechanics and the mechanical peak stays Lorentzian
WEAK_GAMMA_FRACTION = 0.05  # gamma_eff < 0.05 kappa
WEAK_G_FRACTION = 0.3  # G < 0.3 kappa

FIG2B_POWERS = (140e-6, 0.5e-3, 1e-3, 2e-3, 4e-3, 7e-3)
FIG2B_DETUNINGS = np.linspace(-1.0, 2.0, 61)  # in units of omega_m
FIG3_POWERS = np.geomspace(10e-6, 7e-3, 100)
FIG3_DETUNINGS = (0.8, 1.0, 1.2)  # in units of omega_m

SWEEP_COLUMNS = ("detuning_hz", "power_w", "omega_eff_hz", "gamma_eff_hz", "T_eff_K", "n", "stable")


def _hz(omega):
    return None if omega is None else omega / TWO_PI


# ---------------------------------------------------------------------------
# predict


def run_predict(cfg: RunConfig) -> tuple[dict, bool]:
    """Derived rates, coupling, stability and cooling prediction for one setup.

    Returns ``(report, stable)``.  On an unstable setup the cooling block is
    ``None`` and only the stability margin is meaningful.
    """
    system = build_system(cfg)
    cav = derive_cavity_rates(system.cavity)
    mech = derive_mechanical(system.mechanics)
    th = thermal_numbers(system.environment, system.mechanics)
    ic = intracavity_state(system)
    cp = coupling_rates(system)
    stab = is_stable(drift_diffusion(system))
    nms = nms_warning(system)

    resonant = system.with_drive(detuning=-system.cavity.detuning_offset)
    h = cfg.heat
    heat_here = heat_load(system, h.mirror_absorption, h.substrate_absorption, h.end_mirror_transmission)
    heat_res = heat_load(resonant, h.mirror_absorption, h.substrate_absorption, h.end_mirror_transmission)

    shot = shot_noise_floor(
        wavelength=system.cavity.wavelength, finesse=system.cavity.finesse, power=cfg.readout.power_w,
        omega_m=system.mechanics.omega_m, kappa=cav.kappa,
        input_transmission=system.cavity.input_transmission, loss=system.cavity.loss,
        mode_matched_power=cfg.readout.mode_matched_power_w,
    )

    report = {
        "cavity": {
            "kappa_hz": cav.kappa / TWO_PI,
            "kappa_in_hz": cav.kappa_in / TWO_PI,
            "fsr_hz": cav.fsr,
            "fwhm_hz": cav.fwhm,
            "detuning_hz": system.detuning / TWO_PI,
        },
        "mechanics": {
            "frequency_hz": system.mechanics.omega_m / TWO_PI,
            "gamma_m_hz": mech.gamma_m / TWO_PI,
            "x_zpf_m": mech.x_zpf,
        },
        "thermal": {"n_th": th.n_th, "gamma_th_per_s": th.gamma_th},
        "intracavity": {"n_cav": ic.n_cav, "P_circ_w": ic.P_circ},
        "coupling": {"g0_hz": cp.g0 / TWO_PI, "G_hz": cp.G / TWO_PI, "G_over_kappa": cp.G / cav.kappa},
        "stability": {"stable": stab.stable, "margin_per_s": stab.margin, "routh_hurwitz": stab.routh_hurwitz},
        "nms": {"flag": nms.flag, "G_over_kappa": nms.ratio},
        "heat_load": {
            "at_drive_detuning": {"P_mirror_w": heat_here.P_mirror, "P_substrate_w": heat_here.P_substrate},
            "at_resonance": {"P_mirror_w": heat_res.P_mirror, "P_substrate_w": heat_res.P_substrate},
        },
        "shot_noise": {
            "computed_m_per_rthz": shot,
            "quoted_m_per_rthz": QUOTED_SHOT_NOISE,
            "ratio_computed_to_quoted": shot / QUOTED_SHOT_NOISE,
            "note": ("the formula evaluated on the readout parameters differs from the quoted "
                     "sensitivity; both values are reported, neither is adjusted"),
        },
        "prediction": None,
        "effective": None,
    }
    if stab.stable:
        pred = cooling_predictions(system)
        eff = effective_params(system)
        report["prediction"] = {
            "Gamma_sb_per_s": pred.Gamma_sb,
            "n_min": pred.n_min,
            "n_f": pred.n_f,
            "n_full": pred.n_full,
            "T_eff_K": pred.T_eff_pred,
        }
        report["effective"] = {"omega_eff_hz": _hz(eff.omega_eff), "gamma_eff_hz": _hz(eff.gamma_eff)}
    return report, stab.stable


def predict_summary(report) -> str:
    c, s = report["cavity"], report["stability"]
    lines = [
        f"kappa/2pi        {c['kappa_hz'] / 1e3:.1f} kHz",
        f"G/2pi            {report['coupling']['G_hz'] / 1e3:.1f} kHz  (G/kappa {report['coupling']['G_over_kappa']:.3f})",
        f"stable           {s['stable']}  (margin {s['margin_per_s']:.4g} 1/s)",
    ]
    p = report["prediction"]
    if p is not None:
        lines += [
            f"n_min            {p['n_min']:.4f}",
            f"n_f              {p['n_f']:.2f}",
            f"n_full           {p['n_full']:.2f}",
            f"T_eff            {p['T_eff_K'] * 1e3:.3f} mK",
        ]
    if report["nms"]["flag"]:
        lines.append("WARNING: G >= kappa, normal-mode splitting; equipartition thermometry unreliable")
    sn = report["shot_noise"]
    lines.append(f"shot noise       {sn['computed_m_per_rthz']:.3g} m/rtHz computed, "
                 f"{sn['quoted_m_per_rthz']:.3g} quoted (ratio {sn['ratio_computed_to_quoted']:.3g})")
    lines.append(f"note: {sn['note']}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# synth


def frequency_grid(cfg: RunConfig) -> np.ndarray:
    s = cfg.synthesis
    k = np.arange(s.n_bins, dtype=float)
    if s.center_hz is not None:
        return s.center_hz + (k - 0.5 * (s.n_bins - 1)) * s.bin_hz
    return s.start_hz + k * s.bin_hz


def run_synth(cfg: RunConfig, seed: int | None = None) -> Spectrum:
    """Model displacement spectrum plus floor plus seeded Gaussian per-bin noise.

    Per-bin sigma is ``(model + floor) / sqrt(averages)``; negative draws are
    clipped to zero.  With ``unit: raw`` the spectrum is multiplied by
    ``raw_gain_per_m2`` and the calibration tone is added as a single bin.
    """
    s = cfg.synthesis
    seed = s.seed if seed is None else seed
    system = build_system(cfg)
    f = frequency_grid(cfg)
    model = displacement_nps(system, TWO_PI * f).values  # raises InstabilityError
    mean = model + s.floor_m2_per_hz
    sigma = mean / math.sqrt(s.averages)
    rng = np.random.default_rng(seed)
    values = np.clip(mean + sigma * rng.standard_normal(len(f)), 0.0, None)
    if s.unit != UNIT_RAW:
        return Spectrum(f, values, sigma, s.unit)
    tone = build_tone(cfg)
    if tone is None:
        raise CalibrationError("raw synthesis needs analysis.calibration_tone")
    values = values * s.raw_gain_per_m2
    sigma = sigma * s.raw_gain_per_m2
    k = int(np.argmin(np.abs(f - tone.f_cal)))
    values[k] += tone.x_equivalent**2 * s.raw_gain_per_m2 / s.bin_hz
    return Spectrum(f, values, sigma, UNIT_RAW)


def generator_occupancy(cfg: RunConfig) -> dict:
    """Occupancy the synthesized spectrum was drawn from (equipartition on the model)."""
    system = build_system(cfg)
    cov = steady_covariance(system)
    omega_eff, gamma_eff = closed_form_effective(linear_rates(system))
    x2 = 2.0 * derive_mechanical(system.mechanics).x_zpf ** 2 * cov.V[0, 0]
    n = system.mechanics.m_eff * omega_eff * x2 / CONSTANTS.hbar
    return {"x2_m2": x2, "n": n, "n_full": cov.n_full, "omega_eff_hz": _hz(omega_eff),
            "gamma_eff_hz": _hz(gamma_eff)}


# ---------------------------------------------------------------------------
# analyze


def run_analyze(spec: Spectrum, cfg: RunConfig) -> dict:
    """calibrate (raw only) -> fit_peak -> integrate_band -> thermal_variance -> mode_thermometry."""
    a = cfg.analysis
    steps = {"input_unit": spec.unit, "n_points": len(spec)}
    if spec.unit == UNIT_RAW:
        tone = build_tone(cfg)
        if tone is None:
            raise CalibrationError("raw spectrum but no analysis.calibration_tone configured")
        spec = notch_tone(calibrate(spec, tone), tone)
        steps["calibration"] = {"x_equivalent_m": tone.x_equivalent, "tone_hz": tone.f_cal}
        logger.info("calibrated and notched tone at %.6g Hz", tone.f_cal)
    if not np.any(spec.values > 0):
        raise FloorModelError("spectrum is identically zero; no peak above a floor")

    fit = fit_peak(spec, a.peak_window_hz)
    steps["fit"] = fit.as_dict()
    logger.info("fit: f0=%.6g Hz fwhm=%.4g Hz offset=%.4g converged=%s", fit.f0, fit.fwhm, fit.offset, fit.converged)
    if not fit.converged or not fit.f0 > 0:
        raise FloorModelError("peak fit did not converge; floor level undetermined")

    level = a.floor_m2_per_hz if a.floor_m2_per_hz is not None else fit.offset
    if level < 0:
        raise FloorModelError(f"fitted floor {level:.4g} m^2/Hz is negative")
    total = integrate_band(spec, a.band_hz)
    floor = integrate_band(floor_spectrum(spec, level), a.band_hz)
    steps["integrals"] = {"total_m2": total.A, "total_sigma_m2": total.dA,
                          "floor_m2": floor.A, "floor_sigma_m2": floor.dA, "floor_level_m2_per_hz": level}
    logger.info("band integrals: total=%.5g floor=%.5g (+-%.3g, %.3g)", total.A, floor.A, total.dA, floor.dA)
    tv = thermal_variance(total, floor)
    report = mode_thermometry(tv, build_system(cfg).mechanics, TWO_PI * fit.f0,
                              budget=a.budget_percent.model_dump(), combination=a.combination)
    logger.info("thermometry: <x^2>=%.4g m^2 T_eff=%.4g K n=%.4g +- %.3g", report.x2, report.T_eff, report.n, report.dn)
    return {"report": report.as_dict(), "steps": steps}


def analyze_summary(result) -> str:
    r = result["report"]
    return (f"<x^2> = {r['x2_m2']:.4g} +- {r['x2_sigma_m2']:.2g} m^2\n"
            f"T_eff = {r['T_eff_K']:.4g} K\n"
            f"n     = {r['n']:.4g} +- {r['n_sigma']:.3g} (area only +- {r['n_sigma_area']:.3g})")


# ---------------------------------------------------------------------------
# sweeps and figure tables


def sweep_table(rows) -> list[dict]:
    out = []
    for r in rows:
        out.append({
            "detuning_hz": r.detuning / TWO_PI,
            "power_w": r.power,
            "omega_eff_hz": _hz(r.omega_eff),
            "gamma_eff_hz": _hz(r.gamma_eff),
            "T_eff_K": r.T_eff,
            "n": r.n,
            "stable": r.stable,
        })
    return out


def run_sweep(cfg: RunConfig) -> list[dict]:
    system = build_system(cfg)
    sw = cfg.sweep
    rows = detuning_sweep(system, [TWO_PI * d for d in sw.detunings_hz], sw.powers_w, workers=sw.workers)
    return sweep_table(rows)


def weak_coupling(system, power, gamma_eff) -> bool:
    kappa = derive_cavity_rates(system.cavity).kappa
    G = coupling_rates(system.with_drive(power=power)).G
    return gamma_eff < WEAK_GAMMA_FRACTION * kappa and G < WEAK_G_FRACTION * kappa


def run_repro(cfg: RunConfig, target: str) -> tuple[list[dict], dict]:
    """Tables behind the detuning/power characterization and the power-law plot."""
    system = build_system(cfg)
    wm = system.mechanics.omega_m
    workers = cfg.sweep.workers
    if target == "fig2b":
        rows = detuning_sweep(system, FIG2B_DETUNINGS * wm, FIG2B_POWERS, workers=workers)
        table = sweep_table(rows)
        zero = [r for r in rows if r.detuning == 0.0 and r.stable]
        unstable = {}
        for r in rows:
            if not r.stable:
                unstable.setdefault(r.power, []).append(r.detuning / TWO_PI)
        summary = {
            "target": "fig2b",
            "powers_w": list(FIG2B_POWERS),
            "rows": len(table),
            "unstable_rows": sum(not r.stable for r in rows),
            "gamma_eff_minus_gamma_m_at_zero_detuning_hz": [(r.gamma_eff - system.mechanics.gamma_m) / TWO_PI
                                                           for r in zero],
            "unstable_detuning_range_hz": {f"{p:g}": [min(d), max(d)] for p, d in unstable.items()},
        }
        return table, summary
    if target == "fig3":
        rows = detuning_sweep(system, [d * wm for d in FIG3_DETUNINGS], FIG3_POWERS, workers=workers)
        table = sweep_table(rows)
        good = [r for r in rows if r.stable]
        weak = [r for r in good if weak_coupling(system, r.power, r.gamma_eff)]
        for row, r in zip(table, rows):
            row["weak_coupling"] = bool(r.stable and weak_coupling(system, r.power, r.gamma_eff))
        slope_weak = loglog_slope([r.gamma_eff for r in weak], [r.T_eff for r in weak]) if len(weak) > 1 else None
        slope_all = loglog_slope([r.gamma_eff for r in good], [r.T_eff for r in good]) if len(good) > 1 else None
        summary = {
            "target": "fig3",
            "rows": len(table),
            "weak_coupling_rows": len(weak),
            "slope": slope_weak,
            "slope_deviation_from_minus_one": None if slope_weak is None else slope_weak + 1.0,
            "slope_all_stable_rows": slope_all,
            "weak_coupling_definition": f"gamma_eff < {WEAK_GAMMA_FRACTION} kappa and G < {WEAK_G_FRACTION} kappa",
        }
        return table, summary
    raise ValueError(f"unknown repro target {target!r}")


# ---------------------------------------------------------------------------
# modal


def run_modal(cfg: RunConfig) -> tuple[dict, object]:
    """Mass budget and effective mass of the fundamental mode; returns (report, mode shape)."""
    m = cfg.modal
    bare = build_beam(cfg, with_pad=False)
    stack = build_stack(cfg)
    lo, hi = m.tantala_density_range_kg_m3
    center = m.probe.center_m if m.probe.center_m is not None else 0.5 * m.beam.length_m

    ideal_beam = build_beam(cfg, stiffening=False)
    ideal = beam_mode(ideal_beam, method="analytic")
    m_ideal = effective_mass(ideal, ideal.modal_mass, m.probe.waist_m, center)

    loaded_beam = build_beam(cfg)
    loaded = beam_mode(loaded_beam, method="ritz", n_basis=m.n_basis)
    m_loaded = effective_mass(loaded, loaded.modal_mass, m.probe.waist_m, center)

    bare_mode = beam_mode(bare, method="analytic")
    budget = mass_budget(bare, stack)
    report = {
        "beta1_L": float(clamped_roots(1)[0]),
        "bare_mode_mass_fraction": bare_mode.fraction,
        "bare_frequency_hz": bare_mode.omega / TWO_PI,
        "mass_kg": {"beam": budget.beam, "pad": budget.pad, "total": budget.total},
        "pad_mass_range_kg": [stack_mass(build_stack(cfg, lo)), stack_mass(build_stack(cfg, hi))],
        "pad_stiffness_ratio": pad_stiffness_ratio(bare, stack) if m.pad_stiffening else 1.0,
        "ideal_shape": {"mode_mass_kg": ideal.modal_mass, "fraction": ideal.fraction,
                        "m_eff_kg": m_ideal, "frequency_hz": ideal.omega / TWO_PI},
        "loaded_shape": {"mode_mass_kg": loaded.modal_mass, "fraction": loaded.fraction,
                         "m_eff_kg": m_loaded, "frequency_hz": loaded.omega / TWO_PI,
                         "n_basis": m.n_basis},
        "flat_top_change": m_loaded / m_ideal - 1.0,
        "probe": {"waist_m": m.probe.waist_m, "center_m": center},
        "spring_mass_kg": spring_mass(m.spring_constant_n_per_m, TWO_PI * m.spring_frequency_hz),
    }
    return report, loaded
