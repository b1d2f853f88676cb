"""Linearized radiation-pressure dynamics of the mirror and the cavity field.

State vector ``(q, p, X, Y)``: dimensionless mechanical position and momentum
(``x = sqrt(2) x_zpf q``, ``[q, p] = i``) and the amplitude/phase quadratures
of the intracavity field fluctuations. Equations of motion::

    dq/dt =  omega_m p
    dp/dt = -omega_m q - gamma_m p + G X + xi
    dX/dt = -kappa X + Delta Y + sqrt(2 kappa) X_in
    dY/dt = -kappa Y - Delta X + G q + sqrt(2 kappa) Y_in

Noise is white; its strength is fixed so that with ``G = 0`` the stationary
state has ``V_qq = V_pp = n_th + 1/2`` and ``V_XX = V_YY = 1/2``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .core import (
    CONSTANTS,
    OptomechSystem,
    coupling_rates,
    derive_cavity_rates,
    derive_mechanical,
    thermal_numbers,
)
from .errors import InstabilityError, ParameterError
from .spectral import Spectrum, fit_peak

logger = logging.getLogger(__name__)

BASIS = ("q", "p", "X", "Y")


class LinearRates(NamedTuple):
    omega_m: float
    gamma_m: float
    kappa: float
    delta: float
    G: float
    n_th: float
    x_zpf: float


def linear_rates(system: OptomechSystem) -> LinearRates:
    mech = derive_mechanical(system.mechanics)
    return LinearRates(
        omega_m=system.mechanics.omega_m,
        gamma_m=mech.gamma_m,
        kappa=derive_cavity_rates(system.cavity).kappa,
        delta=system.detuning,
        G=coupling_rates(system).G,
        n_th=thermal_numbers(system.environment, system.mechanics).n_th,
        x_zpf=mech.x_zpf,
    )


@dataclass(frozen=True, eq=False)
class DriftDiffusion:
    A: np.ndarray
    D: np.ndarray
    basis: tuple = BASIS


def drift_from_rates(r: LinearRates) -> np.ndarray:
    return np.array([
        [0.0, r.omega_m, 0.0, 0.0],
        [-r.omega_m, -r.gamma_m, r.G, 0.0],
        [0.0, 0.0, -r.kappa, r.delta],
        [r.G, 0.0, -r.delta, -r.kappa],
    ])


def diffusion_from_rates(r: LinearRates) -> np.ndarray:
    return np.diag([0.0, 2.0 * r.gamma_m * (r.n_th + 0.5), r.kappa, r.kappa])


def drift_matrix(system: OptomechSystem) -> np.ndarray:
    return drift_from_rates(linear_rates(system))


def diffusion_matrix(system: OptomechSystem) -> np.ndarray:
    return diffusion_from_rates(linear_rates(system))


def drift_diffusion(system: OptomechSystem) -> DriftDiffusion:
    r = linear_rates(system)
    return DriftDiffusion(drift_from_rates(r), diffusion_from_rates(r))


# ---------------------------------------------------------------------------
# stability


def characteristic_coefficients(A: np.ndarray) -> np.ndarray:
    """Coefficients ``[1, a1, ..., an]`` of ``det(s I - A)`` (Faddeev-LeVerrier).

    Uses only matrix products and traces, so it is independent of any
    eigenvalue routine.
    """
    n = A.shape[0]
    coeffs = [1.0]
    M = np.zeros_like(A)
    I = np.eye(n)
    c = 1.0
    for k in range(1, n + 1):
        M = A @ M + c * I
        c = -np.trace(A @ M) / k
        coeffs.append(c)
    return np.array(coeffs)


def routh_hurwitz_quartic(coeffs) -> bool:
    """Hurwitz test for ``s^4 + a1 s^3 + a2 s^2 + a3 s + a4``."""
    a0, a1, a2, a3, a4 = coeffs
    if a0 <= 0:
        a1, a2, a3, a4 = -a1, -a2, -a3, -a4
    if min(a1, a2, a3, a4) <= 0:
        return False
    return a1 * a2 - a3 > 0 and a1 * a2 * a3 - a3**2 - a1**2 * a4 > 0


class Stability(NamedTuple):
    stable: bool
    margin: float  # largest real part of the eigenvalues, rad/s
    routh_hurwitz: bool


def is_stable(dd: DriftDiffusion | np.ndarray) -> Stability:
    A = dd.A if isinstance(dd, DriftDiffusion) else np.asarray(dd, dtype=float)
    ev = np.linalg.eigvals(A)
    margin = float(np.max(ev.real))
    # repeated zero eigenvalues: report unstable with margin 0
    if np.sum(np.abs(ev) <= 1e-12 * max(1.0, np.abs(A).max())) >= 2:
        margin = max(margin, 0.0)
    rh = routh_hurwitz_quartic(characteristic_coefficients(A))
    return Stability(stable=margin < 0, margin=margin, routh_hurwitz=rh)


def _require_stable(dd: DriftDiffusion) -> None:
    st = is_stable(dd)
    if not st.stable:
        raise InstabilityError(st.margin)


def instability_threshold(system: OptomechSystem, p_hi: float, rtol: float = 1e-9) -> float:
    """Smallest drive power (bisection on ``[0, p_hi]``) at which the dynamics turn unstable."""
    def unstable(p):
        return not is_stable(drift_diffusion(system.with_drive(power=p))).stable

    if not unstable(p_hi):
        raise ParameterError(f"system is still stable at {p_hi:g} W")
    lo, hi = 0.0, p_hi
    if unstable(lo):
        return 0.0
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if unstable(mid):
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------------------
# covariance and spectra


_SYM_INDEX = [(i, j) for i in range(4) for j in range(i, 4)]


def solve_lyapunov(A: np.ndarray, D: np.ndarray) -> np.ndarray:
    """Solve ``A V + V A^T = -D`` for symmetric ``V`` by a dense 10x10 solve."""
    n = A.shape[0]
    pos = {pair: k for k, pair in enumerate(_SYM_INDEX)}
    M = np.zeros((len(_SYM_INDEX), len(_SYM_INDEX)))
    rhs = np.empty(len(_SYM_INDEX))
    for row, (i, j) in enumerate(_SYM_INDEX):
        # (A V)_ij + (V A^T)_ij = sum_k A_ik V_kj + V_ik A_jk
        for k in range(n):
            M[row, pos[tuple(sorted((k, j)))]] += A[i, k]
            M[row, pos[tuple(sorted((i, k)))]] += A[j, k]
        rhs[row] = -D[i, j]
    v = np.linalg.solve(M, rhs)
    V = np.empty((n, n))
    for k, (i, j) in enumerate(_SYM_INDEX):
        V[i, j] = V[j, i] = v[k]
    return V


class Covariance(NamedTuple):
    V: np.ndarray
    n_full: float


def steady_covariance(system: OptomechSystem) -> Covariance:
    dd = drift_diffusion(system)
    _require_stable(dd)
    V = solve_lyapunov(dd.A, dd.D)
    return Covariance(V=V, n_full=0.5 * (V[0, 0] + V[1, 1] - 1.0))


def position_spectrum(A: np.ndarray, D: np.ndarray, omegas) -> np.ndarray:
    """Symmetrized ``S_qq(omega)``, normalized so that ``int S dw / 2 pi = V_qq``."""
    w = np.atleast_1d(np.asarray(omegas, dtype=float))
    n = A.shape[0]
    mats = A[None, :, :] + 1j * w[:, None, None] * np.eye(n)[None, :, :]
    e0 = np.zeros((len(w), n), dtype=complex)
    e0[:, 0] = 1.0
    # first row of the inverse: solve (A + i w)^T r = e_0
    rows = np.linalg.solve(np.transpose(mats, (0, 2, 1)), e0[..., None])[..., 0]
    return np.real(np.einsum("wj,jk,wk->w", rows, D, rows.conj()))


def displacement_nps(system: OptomechSystem, omegas) -> Spectrum:
    """One-sided displacement spectrum in m^2/Hz on the angular grid ``omegas``.

    With ``x = sqrt(2) x_zpf q`` the per-Hz one-sided density is
    ``4 x_zpf**2 S_qq(2 pi f)``, whose integral over ``f > 0`` is ``<x^2>``.
    """
    r = linear_rates(system)
    dd = DriftDiffusion(drift_from_rates(r), diffusion_from_rates(r))
    _require_stable(dd)
    w = np.asarray(omegas, dtype=float)
    if np.any(w < 0):
        raise ParameterError("angular frequency grid must be non-negative")
    s = 4.0 * r.x_zpf**2 * position_spectrum(dd.A, dd.D, w)
    return Spectrum(w / (2.0 * math.pi), np.clip(s, 0.0, None), np.zeros_like(w))


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


def _gauss_legendre(f, breaks):
    a, b = breaks[:-1], breaks[1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    x = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    vals = f(x).reshape(len(a), -1)
    return float(np.sum(half * (vals @ _GL_WEIGHTS)))


def spectral_variance(A: np.ndarray, D: np.ndarray, centers_scales) -> float:
    """``int_{-inf}^{inf} S_qq dw / 2pi`` by composite Gauss-Legendre quadrature.

    Breakpoints are placed geometrically around every ``(center, scale)``
    feature, so arbitrarily narrow resonances are resolved. This path never
    touches the Lyapunov solver; it is the spectral side of the
    covariance/spectrum duality.
    """
    pts = [0.0]
    for c, s in centers_scales:
        c, s = abs(c), abs(s)
        if s == 0:
            continue
        steps = s * 2.0 ** np.arange(-4, 60)
        pts.extend(c + steps)
        pts.extend(c - steps)
        pts.append(c)
    top = max(abs(c) + abs(s) for c, s in centers_scales) * 1e3
    pts = np.unique(np.clip(np.asarray(pts), 0.0, top))
    spectrum = lambda w: position_spectrum(A, D, w)  # noqa: E731
    body = _gauss_legendre(spectrum, pts)
    # tail: w = top / t, t in (0, 1]
    tail = _gauss_legendre(lambda t: spectrum(top / t) * top / t**2, np.linspace(1e-9, 1.0, 9))
    # S_qq is even in omega
    return 2.0 * (body + tail) / (2.0 * math.pi)


def mechanical_eigenvalue(A: np.ndarray) -> complex:
    """Eigenvalue with positive imaginary part whose eigenvector lives mostly on (q, p)."""
    ev, vec = np.linalg.eig(A)
    weight = np.abs(vec[0]) ** 2 + np.abs(vec[1]) ** 2
    upper = ev.imag >= 0
    k = np.argmax(np.where(upper, weight, -1.0))
    return complex(ev[k])


def variance_by_spectrum(system: OptomechSystem) -> float:
    """``V_qq`` obtained by integrating ``S_qq`` over all frequencies."""
    return variance_from_rates(linear_rates(system))


def variance_from_rates(r: LinearRates) -> float:
    dd = DriftDiffusion(drift_from_rates(r), diffusion_from_rates(r))
    _require_stable(dd)
    lam = mechanical_eigenvalue(dd.A)
    feats = [(lam.imag, -lam.real), (r.omega_m, r.gamma_m), (r.delta, r.kappa), (0.0, r.kappa)]
    return spectral_variance(dd.A, dd.D, feats)


# ---------------------------------------------------------------------------
# effective mechanical parameters


@dataclass(frozen=True)
class EffectiveParams:
    omega_eff: float
    gamma_eff: float
    omega_eval: float
    method: str


def closed_form_effective(r: LinearRates, omega: float | None = None) -> tuple[float, float]:
    """Optical-spring frequency and damping from the mechanical susceptibility."""
    w = r.omega_m if omega is None else omega
    k2 = r.kappa**2
    d = (k2 + (w - r.delta) ** 2) * (k2 + (w + r.delta) ** 2)
    omega2 = r.omega_m**2 - r.G**2 * r.delta * r.omega_m * (k2 + r.delta**2 - w**2) / d
    gamma = r.gamma_m + 2.0 * r.G**2 * r.delta * r.omega_m * r.kappa / d
    return math.sqrt(omega2) if omega2 > 0 else math.nan, gamma


FIT_HALF_WINDOW = 12.0  # in linewidths
FIT_POINTS = 1201


def effective_params(system: OptomechSystem, detuning: float | None = None,
                     method: str = "closed-form") -> EffectiveParams:
    """Effective frequency and damping of the mechanical mode.

    ``method="closed-form"`` evaluates the susceptibility expressions at
    ``omega = omega_m``. ``method="spectrum-fit"`` synthesizes ``S_qq`` around
    the mechanical peak and fits a Lorentzian to it.
    """
    if detuning is not None:
        system = system.with_drive(detuning=detuning)
    return effective_from_rates(linear_rates(system), method)


def effective_from_rates(r: LinearRates, method: str = "closed-form") -> EffectiveParams:
    dd = DriftDiffusion(drift_from_rates(r), diffusion_from_rates(r))
    _require_stable(dd)
    if method == "closed-form":
        omega_eff, gamma_eff = closed_form_effective(r)
        return EffectiveParams(omega_eff, gamma_eff, r.omega_m, "closed-form")
    if method != "spectrum-fit":
        raise ParameterError(f"unknown method {method!r}")
    lam = mechanical_eigenvalue(dd.A)
    w_c, width = lam.imag, -2.0 * lam.real
    lo = max(w_c - FIT_HALF_WINDOW * width, 0.0)
    w = np.linspace(lo, w_c + FIT_HALF_WINDOW * width, FIT_POINTS)
    s = position_spectrum(dd.A, dd.D, w)
    spec = Spectrum(w / (2 * math.pi), np.clip(s / s.max(), 0.0, None), None)
    fit = fit_peak(spec)
    return EffectiveParams(2 * math.pi * fit.f0, 2 * math.pi * fit.fwhm, w_c, "spectrum-fit")


# ---------------------------------------------------------------------------
# cooling


@dataclass(frozen=True)
class CoolingPrediction:
    Gamma_sb: float
    n_min: float
    n_f: float
    n_full: float
    T_eff_pred: float


def equipartition_temperature(system: OptomechSystem, V_qq: float, omega_eff: float) -> float:
    x2 = 2.0 * derive_mechanical(system.mechanics).x_zpf ** 2 * V_qq
    return system.mechanics.m_eff * omega_eff**2 * x2 / CONSTANTS.k_B


def cooling_predictions(system: OptomechSystem) -> CoolingPrediction:
    r = linear_rates(system)
    G_sb = coupling_rates(system).G_sb
    gamma_sb = G_sb**2 / (2.0 * r.kappa)
    n_min = r.kappa**2 / (4.0 * r.omega_m**2)
    th = thermal_numbers(system.environment, system.mechanics)
    n_f = th.gamma_th / gamma_sb if gamma_sb > 0 else th.n_th
    cov = steady_covariance(system)
    omega_eff, _ = closed_form_effective(r)
    T_pred = equipartition_temperature(system, cov.V[0, 0], omega_eff)
    return CoolingPrediction(Gamma_sb=gamma_sb, n_min=n_min, n_f=n_f, n_full=cov.n_full, T_eff_pred=T_pred)


class NMSWarning(NamedTuple):
    flag: bool
    ratio: float


def nms_warning(system: OptomechSystem, kappa: float | None = None) -> NMSWarning:
    """Flag strong coupling (``G >= kappa``) where the mode splits and thermometry breaks."""
    G = coupling_rates(system).G_sb
    kappa = derive_cavity_rates(system.cavity).kappa if kappa is None else kappa
    ratio = G / kappa
    return NMSWarning(flag=ratio >= 1.0, ratio=ratio)


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepRow:
    detuning: float  # rad/s
    power: float
    omega_eff: float | None
    gamma_eff: float | None
    T_eff: float | None
    n: float | None
    stable: bool


def sweep_point(system: OptomechSystem, detuning: float, power: float) -> SweepRow:
    s = system.with_drive(detuning=detuning, power=power)
    r = linear_rates(s)
    A = drift_from_rates(r)
    if not is_stable(A).stable:
        return SweepRow(detuning, power, None, None, None, None, False)
    V = solve_lyapunov(A, diffusion_from_rates(r))
    omega_eff, gamma_eff = closed_form_effective(r)
    if not math.isfinite(omega_eff):
        return SweepRow(detuning, power, None, None, None, None, False)
    return SweepRow(
        detuning=detuning, power=power, omega_eff=omega_eff, gamma_eff=gamma_eff,
        T_eff=equipartition_temperature(s, V[0, 0], omega_eff),
        n=0.5 * (V[0, 0] + V[1, 1] - 1.0), stable=True,
    )


def _sweep_chunk(args):
    system, cells = args
    return [sweep_point(system, d, p) for d, p in cells]


def detuning_sweep(system: OptomechSystem, detunings: Sequence[float], powers: Sequence[float],
                   workers: int | None = None) -> list[SweepRow]:
    """Grid over drive detuning (outer) and power (inner).

    Unstable cells are kept with ``stable=False`` and empty physics fields.
    ``workers > 1`` spreads the cells over a process pool; row order is
    independent of the worker count.
    """
    if len(detunings) == 0 or len(powers) == 0:
        raise ParameterError("detuning and power lists must be non-empty")
    cells = [(float(d), float(p)) for d in detunings for p in powers]
    if not workers or workers <= 1:
        return [sweep_point(system, d, p) for d, p in cells]
    chunks = [cells[i::workers] for i in range(workers)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_sweep_chunk, [(system, c) for c in chunks]))
    rows = [None] * len(cells)
    for i, part in enumerate(parts):
        rows[i::workers] = part
    return rows


def loglog_slope(x, y) -> float:
    x, y = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(x, y, 1)[0])
