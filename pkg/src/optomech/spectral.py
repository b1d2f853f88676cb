"""Inverse pipeline on measured noise power spectra.

Spectra are one-sided power spectral densities on a positive frequency grid
in Hz, so a band integral of a calibrated spectrum is directly a mean-square
displacement in m^2.
"""

from __future__ import annotations

import io
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.optimize import least_squares
from scipy.signal import find_peaks

from .core import CONSTANTS, MechanicalMode
from .errors import CalibrationError, FloorModelError, ParameterError, SpectrumFormatError

logger = logging.getLogger(__name__)

UNIT_DISPLACEMENT = "m2_per_hz"
UNIT_RAW = "raw"
UNITS = (UNIT_DISPLACEMENT, UNIT_RAW)

CSV_HEADER = "freq_hz,psd,psd_sigma"

# relative uncertainty items (percent) on top of the area error
DEFAULT_BUDGET = {"calibration": 12.0, "frequency": 5.0, "power": 10.0}

MIN_TONE_SNR = 5.0


@dataclass(frozen=True, eq=False)
class Spectrum:
    freqs: np.ndarray
    values: np.ndarray
    sigma: np.ndarray | None = None
    unit: str = UNIT_DISPLACEMENT

    def __post_init__(self):
        freqs = np.asarray(self.freqs, dtype=float)
        values = np.asarray(self.values, dtype=float)
        sigma = np.zeros_like(values) if self.sigma is None else np.asarray(self.sigma, dtype=float)
        if not (freqs.ndim == values.ndim == sigma.ndim == 1):
            raise ParameterError("spectrum arrays must be one-dimensional")
        if not (len(freqs) == len(values) == len(sigma)):
            raise ParameterError("freqs, values and sigma must have equal lengths")
        if len(freqs) > 1 and np.any(np.diff(freqs) <= 0):
            raise ParameterError("frequency grid must be strictly increasing")
        if np.any(values < 0) or np.any(sigma < 0):
            raise ParameterError("spectral values and uncertainties must be >= 0")
        if self.unit not in UNITS:
            raise ParameterError(f"unknown unit tag {self.unit!r}")
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "sigma", sigma)

    def __len__(self):
        return len(self.freqs)

    def scaled(self, factor, unit=None):
        return Spectrum(self.freqs, self.values * factor, self.sigma * factor, unit or self.unit)

    def band_mask(self, f_lo=None, f_hi=None):
        lo = self.freqs[0] if f_lo is None else f_lo
        hi = self.freqs[-1] if f_hi is None else f_hi
        return (self.freqs >= lo) & (self.freqs <= hi)


# ---------------------------------------------------------------------------
# CSV I/O


def write_spectrum_csv(spec: Spectrum, path=None) -> str:
    """Serialize ``spec``; floats use 17 significant digits so reading back is exact."""
    buf = io.StringIO()
    buf.write(f"# unit: {spec.unit}\n")
    buf.write(CSV_HEADER + "\n")
    rows = np.column_stack([spec.freqs, spec.values, spec.sigma])
    np.savetxt(buf, rows, fmt="%.17g", delimiter=",")
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="\n")
    return text


def read_spectrum_csv(path) -> Spectrum:
    text = Path(path).read_text(encoding="utf-8")
    return parse_spectrum_csv(text)


def parse_spectrum_csv(text: str) -> Spectrum:
    unit = None
    header_seen = False
    freqs, values, sigma = [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("unit:"):
                unit = body.split(":", 1)[1].strip()
                if unit not in UNITS:
                    raise SpectrumFormatError(f"unknown unit {unit!r}", lineno)
            continue
        if not header_seen:
            if line.replace(" ", "") != CSV_HEADER:
                raise SpectrumFormatError(f"expected header {CSV_HEADER!r}, got {line!r}", lineno)
            header_seen = True
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise SpectrumFormatError(f"expected 3 fields, got {len(parts)}", lineno)
        try:
            f, y, s = (float(p) for p in parts)
        except ValueError:
            raise SpectrumFormatError(f"non-numeric field in {line!r}", lineno) from None
        if not all(map(math.isfinite, (f, y, s))):
            raise SpectrumFormatError("non-finite value", lineno)
        if y < 0 or s < 0:
            raise SpectrumFormatError("negative psd or sigma", lineno)
        if freqs and f <= freqs[-1]:
            raise SpectrumFormatError("frequencies must be strictly increasing", lineno)
        freqs.append(f)
        values.append(y)
        sigma.append(s)
    if unit is None:
        raise SpectrumFormatError("missing '# unit:' comment line")
    if not header_seen:
        raise SpectrumFormatError("missing header line")
    if not freqs:
        raise SpectrumFormatError("no data rows")
    return Spectrum(np.array(freqs), np.array(values), np.array(sigma), unit)


# ---------------------------------------------------------------------------
# calibration


@dataclass(frozen=True)
class CalibrationTone:
    """Known laser frequency modulation used as a displacement reference.

    ``fm_depth`` is the rms frequency excursion in Hz. A frequency shift
    ``dnu`` of the laser is indistinguishable from a cavity length change
    ``L dnu / nu``.
    """

    f_cal: float
    fm_depth: float
    cavity_length: float
    optical_frequency: float
    halfwidth: float | None = None  # Hz around f_cal holding the tone power

    def __post_init__(self):
        for name in ("f_cal", "fm_depth", "cavity_length", "optical_frequency"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ParameterError(f"{name} must be finite and > 0, got {v!r}")

    @property
    def x_equivalent(self):
        return self.cavity_length * self.fm_depth / self.optical_frequency


class ToneMeasurement(NamedTuple):
    area: float
    floor: float
    snr: float
    mask: np.ndarray


def _tone_window(spec: Spectrum, tone: CalibrationTone):
    df = np.median(np.diff(spec.freqs))
    half = tone.halfwidth if tone.halfwidth is not None else 3.0 * df
    core = np.abs(spec.freqs - tone.f_cal) <= half
    side = (np.abs(spec.freqs - tone.f_cal) > half) & (np.abs(spec.freqs - tone.f_cal) <= 4.0 * half)
    return core, side


def measure_tone(spec: Spectrum, tone: CalibrationTone) -> ToneMeasurement:
    if not (spec.freqs[0] <= tone.f_cal <= spec.freqs[-1]):
        raise CalibrationError(f"tone frequency {tone.f_cal:g} Hz lies outside the spectrum grid")
    core, side = _tone_window(spec, tone)
    if not core.any() or side.sum() < 2:
        raise CalibrationError("spectrum grid too coarse to isolate the calibration tone")
    floor = float(np.median(spec.values[side]))
    spread = float(np.std(spec.values[side]))
    if spread == 0.0:
        spread = float(np.median(spec.sigma[side]))
    idx = np.flatnonzero(core)
    widths = _bin_widths(spec.freqs)[idx]
    area = float(np.sum((spec.values[idx] - floor) * widths))
    height = float(spec.values[idx].max() - floor)
    if spread > 0:
        snr = height / spread
    else:
        snr = math.inf if height > 0 else 0.0
    return ToneMeasurement(area=area, floor=floor, snr=snr, mask=core)


def calibrate(raw: Spectrum, tone: CalibrationTone) -> Spectrum:
    """Scale a raw spectrum to m^2/Hz using the frequency-modulation tone.

    Raises :class:`CalibrationError` when the tone is not resolved (SNR below 5)
    or when the input already carries displacement units.
    """
    if raw.unit != UNIT_RAW:
        raise CalibrationError(f"spectrum already calibrated (unit {raw.unit!r})")
    meas = measure_tone(raw, tone)
    if meas.snr < MIN_TONE_SNR or meas.area <= 0:
        raise CalibrationError(f"calibration tone SNR {meas.snr:.3g} below {MIN_TONE_SNR:g}")
    scale = tone.x_equivalent**2 / meas.area
    logger.info("calibration: x_eq=%.4g m, tone area=%.4g, scale=%.6g m^2/raw", tone.x_equivalent, meas.area, scale)
    return raw.scaled(scale, UNIT_DISPLACEMENT)


def notch_tone(spec: Spectrum, tone: CalibrationTone) -> Spectrum:
    """Replace the tone bins by a straight line between the neighbouring bins."""
    core, _ = _tone_window(spec, tone)
    if not core.any():
        return spec
    keep = ~core
    values = spec.values.copy()
    values[core] = np.interp(spec.freqs[core], spec.freqs[keep], spec.values[keep])
    sigma = spec.sigma.copy()
    sigma[core] = np.interp(spec.freqs[core], spec.freqs[keep], spec.sigma[keep])
    return Spectrum(spec.freqs, values, sigma, spec.unit)


# ---------------------------------------------------------------------------
# integration and thermometry


def _bin_widths(freqs):
    d = np.diff(freqs)
    return np.append(d, d[-1] if len(d) else 0.0)


class BandIntegral(NamedTuple):
    A: float
    dA: float


def integrate_band(spec: Spectrum, band=None) -> BandIntegral:
    """Left Riemann sum of the spectrum over ``band = (f_lo, f_hi)``.

    ``A = sum (f[i+1] - f[i]) y[i]`` over consecutive grid points inside the
    band, and ``dA = sqrt(sum (f[i+1] - f[i])**2 sigma[i]**2)`` (Gaussian
    propagation with exact frequencies). A band of N points therefore
    contributes N - 1 terms.
    """
    f_lo, f_hi = (None, None) if band is None else band
    idx = np.flatnonzero(spec.band_mask(f_lo, f_hi))
    if len(idx) < 2:
        raise ParameterError(f"band {band!r} contains fewer than two grid points")
    f = spec.freqs[idx]
    df = np.diff(f)
    y = spec.values[idx[:-1]]
    s = spec.sigma[idx[:-1]]
    return BandIntegral(A=float(np.sum(df * y)), dA=float(np.sqrt(np.sum(df**2 * s**2))))


class ThermalVariance(NamedTuple):
    x2: float
    dx2: float


def thermal_variance(total: BandIntegral, floor: BandIntegral) -> ThermalVariance:
    """Peak area above the noise floor, errors added in quadrature."""
    x2 = total.A - floor.A
    dx2 = math.hypot(total.dA, floor.dA)
    if x2 < 0:
        if -x2 > 2.0 * dx2:
            raise FloorModelError(f"floor exceeds total area by {-x2:.3g} m^2 (> 2 sigma = {2 * dx2:.3g})")
        x2 = 0.0
    return ThermalVariance(x2=x2, dx2=dx2)


@dataclass(frozen=True)
class AnalysisReport:
    x2: float
    dx2: float
    T_eff: float
    n: float
    omega_eff: float
    budget: Mapping[str, float] = field(default_factory=dict)  # percent
    combination: str = "quadrature"
    dn_area: float = 0.0
    dn: float = 0.0

    @property
    def relative_uncertainty(self):
        return self.dn / self.n if self.n > 0 else math.inf

    def as_dict(self):
        return {
            "x2_m2": self.x2,
            "x2_sigma_m2": self.dx2,
            "T_eff_K": self.T_eff,
            "n": self.n,
            "n_sigma_area": self.dn_area,
            "n_sigma": self.dn,
            "omega_eff_hz": self.omega_eff / (2 * math.pi),
            "budget_percent": dict(self.budget),
            "combination": self.combination,
        }


def combine_percent(items, rule="quadrature"):
    items = [float(v) for v in items]
    if rule == "quadrature":
        return math.sqrt(sum(v * v for v in items))
    if rule == "linear":
        return sum(items)
    raise ParameterError(f"unknown combination rule {rule!r}")


def mode_thermometry(x2: float | ThermalVariance, mech: MechanicalMode, omega_eff: float,
                     budget: Mapping[str, float] | None = None, combination="quadrature",
                     dx2: float | None = None) -> AnalysisReport:
    """Equipartition temperature and occupancy of the mode.

    ``T_eff = m_eff omega_eff**2 <x^2> / k_B`` and ``n = k_B T_eff / (hbar omega_eff)``.
    The area error (from ``dx2``) and the ``budget`` percentages are combined
    with ``combination`` ("quadrature" or "linear").
    """
    if isinstance(x2, ThermalVariance):
        x2, dx2 = x2
    if dx2 is None:
        dx2 = 0.0
    if not (omega_eff > 0):
        raise ParameterError("omega_eff must be > 0")
    budget = dict(DEFAULT_BUDGET if budget is None else budget)
    T_eff = mech.m_eff * omega_eff**2 * x2 / CONSTANTS.k_B
    n = CONSTANTS.k_B * T_eff / (CONSTANTS.hbar * omega_eff)
    area_pct = 100.0 * dx2 / x2 if x2 > 0 else 0.0
    total_pct = combine_percent([area_pct, *budget.values()], combination)
    full_budget = {"area": area_pct, **budget}
    return AnalysisReport(x2=x2, dx2=dx2, T_eff=T_eff, n=n, omega_eff=omega_eff,
                          budget=full_budget, combination=combination,
                          dn_area=n * area_pct / 100.0, dn=n * total_pct / 100.0)


# ---------------------------------------------------------------------------
# peak fitting


@dataclass(frozen=True)
class FitResult:
    f0: float
    fwhm: float
    area: float
    offset: float
    f0_sigma: float
    fwhm_sigma: float
    area_sigma: float
    offset_sigma: float
    converged: bool
    residual_norm: float
    nfev: int = 0

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def lorentzian(f, f0, fwhm, area, offset=0.0):
    """Lorentzian of given integral ``area`` on a constant ``offset``."""
    hw = 0.5 * fwhm
    return area / math.pi * hw / ((f - f0) ** 2 + hw**2) + offset


def _half_max_width(f, y, i_peak, base):
    half = base + 0.5 * (y[i_peak] - base)
    lo = i_peak
    while lo > 0 and y[lo] > half:
        lo -= 1
    hi = i_peak
    while hi < len(y) - 1 and y[hi] > half:
        hi += 1
    width = f[hi] - f[lo]
    return width if width > 0 else f[min(i_peak + 1, len(f) - 1)] - f[max(i_peak - 1, 0)]


MAX_ITERATIONS = 200


def _initial_guess(y):
    """Baseline, smoothing length and per-bin noise for the starting point.

    The baseline is the median of the outer tenth of the window on each side.
    The smoothing length (odd, in bins) maximizes the peak signal-to-noise of
    a running mean, which roughly matches it to the peak width.
    """
    n = len(y)
    edge = max(n // 10, 2)
    base = float(np.median(np.concatenate([y[:edge], y[-edge:]])))
    d = np.diff(y)
    noise = 1.4826 * float(np.median(np.abs(d - np.median(d)))) / math.sqrt(2.0)
    if noise == 0.0:
        return base, 1, 0.0
    best, best_snr = 1, -math.inf
    m = 1
    while m <= max(n // 10, 1):
        snr = uniform_filter1d(y - base, m, mode="nearest").max() * math.sqrt(m) / noise
        if snr > best_snr:
            best, best_snr = m, snr
        m = 3 * m
    return base, best, noise


def fit_peak(spec: Spectrum, window=None) -> FitResult:
    """Least-squares fit of a Lorentzian plus constant floor.

    Levenberg-Marquardt on internally rescaled parameters. Uncertainties come
    from the inverse normal matrix scaled by the reduced chi-square. A
    non-converged fit comes back with ``converged=False``; nothing is raised.
    """
    mask = spec.band_mask(*(window or (None, None)))
    f = spec.freqs[mask]
    y = spec.values[mask]
    s = spec.sigma[mask]
    if len(f) < 5:
        raise ParameterError("peak window must contain at least 5 points")

    base, scale, noise = _initial_guess(y)
    smooth = uniform_filter1d(y - base, scale, mode="nearest")
    peaks, props = find_peaks(smooth, prominence=3.0 * noise / math.sqrt(scale))
    if len(peaks) == 0:
        peaks = np.array([int(np.argmax(smooth))])
        prominences = np.array([smooth.max()])
    else:
        prominences = props["prominences"]
    order = np.argsort(prominences)[::-1]
    main = peaks[order[0]]
    strong = peaks[prominences >= 0.5 * prominences[order[0]]]
    if len(strong) > 1:
        # keep only the largest peak, bounded by midpoints to the neighbours
        others = strong[strong != main]
        dist = np.abs(f[others] - f[main])
        w0 = _half_max_width(f, smooth, main, 0.0)
        if np.any(dist > 3.0 * w0):
            warnings.warn("multiple peaks in fit window; fitting the largest", stacklevel=2)
            left = others[others < main]
            right = others[others > main]
            lo = 0.5 * (f[left.max()] + f[main]) if len(left) else f[0]
            hi = 0.5 * (f[right.min()] + f[main]) if len(right) else f[-1]
            keep = (f >= lo) & (f <= hi)
            f, y, s, smooth = f[keep], y[keep], s[keep], smooth[keep]
            main = int(np.argmax(smooth))

    f_peak = float(f[main])
    width0 = max(_half_max_width(f, smooth, main, 0.0), scale * float(np.median(np.diff(f))))
    height = max(float(smooth[main]), np.finfo(float).tiny)
    area0 = height * math.pi * width0 / 2.0

    # work in units where frequency offsets, widths and heights are O(1)
    f_scale = width0
    y_scale = height
    u = (f - f_peak) / f_scale
    weights = np.where(s > 0, 1.0 / s, 1.0) if np.all(s > 0) else np.ones_like(y)
    w_scale = weights * y_scale

    def model(p):
        x0, lw, a, c = p
        hw = 0.5 * abs(lw)
        return a / math.pi * hw / ((u - x0) ** 2 + hw**2) + c

    def resid(p):
        return (model(p) - y / y_scale) * w_scale

    p0 = np.array([0.0, 1.0, area0 / (f_scale * y_scale), base / y_scale])
    try:
        sol = least_squares(resid, p0, method="lm", xtol=1e-10, ftol=1e-12, gtol=1e-12,
                            max_nfev=MAX_ITERATIONS * (len(p0) + 1))
        p = sol.x
        converged = bool(sol.success) and np.all(np.isfinite(p))
        J = sol.jac
        r = sol.fun
        nfev = int(sol.nfev)
    except (ValueError, np.linalg.LinAlgError):  # pragma: no cover - defensive
        p, converged, J, r, nfev = p0, False, None, resid(p0), 0

    dof = max(len(y) - len(p), 1)
    chi2 = float(r @ r)
    perr = np.full(4, np.nan)
    if J is not None:
        try:
            cov = np.linalg.inv(J.T @ J) * chi2 / dof
            perr = np.sqrt(np.abs(np.diag(cov)))
        except np.linalg.LinAlgError:
            converged = False
    x0, lw, a, c = p
    return FitResult(
        f0=f_peak + x0 * f_scale,
        fwhm=abs(lw) * f_scale,
        area=max(a * f_scale * y_scale, 0.0),
        offset=c * y_scale,
        f0_sigma=perr[0] * f_scale,
        fwhm_sigma=perr[1] * f_scale,
        area_sigma=perr[2] * f_scale * y_scale,
        offset_sigma=perr[3] * y_scale,
        converged=bool(converged),
        residual_norm=math.sqrt(chi2),
        nfev=nfev,
    )


# ---------------------------------------------------------------------------
# shot noise


QUOTED_SHOT_NOISE = 6e-18  # m/sqrt(Hz), value reported for the nominal setup


def shot_noise_floor(wavelength, finesse, power, omega_m, kappa, input_transmission, loss,
                     mode_matched_power) -> float:
    """Shot-noise-limited displacement sensitivity in m/sqrt(Hz).

    ``lambda / (16 F sqrt(P lambda / h c)) * sqrt(1 + (omega_m/kappa)**2)
    * sqrt((T + l) / T) * P / P_MM``
    """
    for name, v in (("wavelength", wavelength), ("finesse", finesse), ("power", power),
                    ("kappa", kappa), ("input_transmission", input_transmission),
                    ("mode_matched_power", mode_matched_power)):
        if not (np.isfinite(v) and v > 0):
            raise ParameterError(f"{name} must be finite and > 0, got {v!r}")
    if omega_m < 0 or loss < 0:
        raise ParameterError("omega_m and loss must be >= 0")
    if mode_matched_power > power:
        raise ParameterError("mode-matched power cannot exceed the input power")
    photon_rate = power * wavelength / (CONSTANTS.h * CONSTANTS.c)
    base = wavelength / (16.0 * finesse * math.sqrt(photon_rate))
    return (base * math.sqrt(1.0 + (omega_m / kappa) ** 2)
            * math.sqrt((input_transmission + loss) / input_transmission)
            * power / mode_matched_power)


def floor_spectrum(spec: Spectrum, level: float) -> Spectrum:
    """Constant floor on the grid of ``spec``, carrying the same per-bin sigma."""
    return Spectrum(spec.freqs, np.full(len(spec), float(level)), spec.sigma, spec.unit)


__all__ = [
    "AnalysisReport", "BandIntegral", "CalibrationTone", "DEFAULT_BUDGET", "FitResult",
    "QUOTED_SHOT_NOISE", "Spectrum", "ThermalVariance", "calibrate", "combine_percent",
    "fit_peak", "floor_spectrum", "integrate_band", "lorentzian", "measure_tone",
    "mode_thermometry", "notch_tone", "parse_spectrum_csv", "read_spectrum_csv",
    "shot_noise_floor", "thermal_variance", "write_spectrum_csv",
]
