"""Mass budget and fundamental mode of a mirror-loaded doubly clamped beam.

The beam is a 1-D Euler-Bernoulli beam. The circular mirror pad on top of it
is projected onto the beam axis with chord weighting, which keeps the pad
mass exact. Pad-loaded modes come from a Rayleigh-Ritz solve over the
clamped-clamped eigenfunctions. Mode shapes are always normalized to a
maximum displacement of 1 at the antinode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import eigh
from scipy.optimize import brentq

from .errors import ConvergenceError, ParameterError

NORMALIZATION = "antinode-max=1"


@dataclass(frozen=True)
class Layer:
    material: str
    thickness: float
    density: float
    youngs_modulus: float | None = None

    def __post_init__(self):
        if not (self.thickness > 0 and self.density > 0):
            raise ParameterError(f"layer {self.material!r}: thickness and density must be > 0")


@dataclass(frozen=True)
class LayerStack:
    layers: tuple[Layer, ...]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.radius < 0:
            raise ParameterError("pad radius must be >= 0")

    @property
    def thickness(self):
        return sum(layer.thickness for layer in self.layers)


def alternating_stack(pairs, high: Layer, low: Layer, radius) -> LayerStack:
    return LayerStack(tuple(l for _ in range(pairs) for l in (high, low)), radius)


def stack_mass(stack: LayerStack) -> float:
    areal = sum(layer.thickness * layer.density for layer in stack.layers)
    return math.pi * stack.radius**2 * areal


@dataclass(frozen=True)
class Pad:
    """Mirror pad centred at ``center`` (m from the left clamp).

    ``stiffness_ratio`` is the bending stiffness of the beam+pad section over
    that of the bare beam at the widest chord; 1 means the pad only adds mass.
    """

    mass: float
    radius: float
    center: float
    stiffness_ratio: float = 1.0


@dataclass(frozen=True)
class BeamGeometry:
    length: float
    width: float
    thickness: float
    density: float
    youngs_modulus: float = 250e9
    volume_factor: float = 1.0  # etch correction on the beam volume
    pad: Pad | None = None

    def __post_init__(self):
        for name in ("length", "width", "density", "youngs_modulus", "volume_factor"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"beam {name} must be > 0")
        if self.thickness < 0:
            raise ParameterError("beam thickness must be >= 0")
        if self.pad is not None:
            p = self.pad
            if not (0 <= p.center <= self.length):
                raise ParameterError("pad centre must lie on the beam")
            if p.center - p.radius < 0 or p.center + p.radius > self.length:
                raise ParameterError("pad footprint extends past the clamps")
            if not (p.mass >= 0 and p.stiffness_ratio >= 1):
                raise ParameterError("pad mass must be >= 0 and stiffness ratio >= 1")

    @property
    def mass(self):
        return self.density * self.length * self.width * self.thickness * self.volume_factor

    @property
    def linear_density(self):
        return self.mass / self.length

    @property
    def bending_stiffness(self):
        return self.youngs_modulus * self.width * self.thickness**3 / 12.0

    @property
    def total_mass(self):
        return self.mass + (self.pad.mass if self.pad else 0.0)


def pad_stiffness_ratio(geom: BeamGeometry, stack: LayerStack) -> float:
    """Composite-section bending stiffness of beam plus stack over the bare beam.

    Layers are stacked on top of the beam across its full width; every layer
    needs a Young's modulus.
    """
    if any(layer.youngs_modulus is None for layer in stack.layers):
        raise ParameterError("every stack layer needs a Young's modulus")
    z0 = 0.0
    parts = [(geom.youngs_modulus, geom.thickness, 0.5 * geom.thickness)]
    z0 = geom.thickness
    for layer in stack.layers:
        parts.append((layer.youngs_modulus, layer.thickness, z0 + 0.5 * layer.thickness))
        z0 += layer.thickness
    EA = sum(E * t for E, t, _ in parts)
    zc = sum(E * t * z for E, t, z in parts) / EA
    EI = sum(E * (t**3 / 12.0 + t * (z - zc) ** 2) for E, t, z in parts)
    return EI / (geom.youngs_modulus * geom.thickness**3 / 12.0)


class MassBudget(NamedTuple):
    beam: float
    pad: float
    total: float


def mass_budget(geom: BeamGeometry, stack: LayerStack) -> MassBudget:
    beam = geom.mass
    pad = stack_mass(stack)
    return MassBudget(beam=beam, pad=pad, total=beam + pad)


def spring_mass(k: float, omega: float) -> float:
    if not (k > 0 and omega > 0):
        raise ParameterError("spring constant and frequency must be > 0")
    return k / omega**2


# ---------------------------------------------------------------------------
# clamped-clamped eigenfunctions


def clamped_roots(n: int) -> np.ndarray:
    """First ``n`` positive roots of ``cos(b) cosh(b) = 1``."""
    # cos(b) - 1/cosh(b) has the same roots and stays O(1)
    f = lambda b: math.cos(b) - 1.0 / math.cosh(b)  # noqa: E731
    roots = []
    for k in range(1, n + 1):
        guess = (k + 0.5) * math.pi
        roots.append(brentq(f, guess - 0.5, guess + 0.5, xtol=1e-15, rtol=4 * np.finfo(float).eps))
    return np.array(roots)


def _sigma(b):
    # (cosh b - cos b) / (sinh b - sin b), and 1 - that, both without cancellation
    denom = math.sinh(b) - math.sin(b)
    one_minus = (-math.exp(-b) - math.sin(b) + math.cos(b)) / denom
    return 1.0 - one_minus, one_minus


def clamped_function(b, xi, derivative=0):
    """Clamped-clamped eigenfunction on ``xi = x / L`` (unnormalized), or its 2nd derivative in xi."""
    s, one_minus = _sigma(b)
    X = b * np.asarray(xi, dtype=float)
    # cosh X - s sinh X = ((1+s) e^-X + (1-s) e^X) / 2
    hyp = 0.5 * ((1.0 + s) * np.exp(-X) + one_minus * np.exp(X))
    if derivative == 0:
        return hyp - np.cos(X) + s * np.sin(X)
    if derivative == 2:
        return b**2 * (hyp + np.cos(X) - s * np.sin(X))
    raise ValueError("derivative must be 0 or 2")


def _gl(a, b, pieces, order=24):
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, pieces + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    return (mid[:, None] + half[:, None] * x).ravel(), (half[:, None] * w).ravel()


@dataclass(frozen=True, eq=False)
class ModeShape:
    x: np.ndarray  # m
    u: np.ndarray
    index: int
    omega: float  # rad/s
    fraction: float  # modal mass / total mass
    total_mass: float
    normalization: str = NORMALIZATION
    coefficients: np.ndarray = field(default=None, repr=False)

    @property
    def modal_mass(self):
        return self.fraction * self.total_mass

    def to_csv(self) -> str:
        lines = ["x_m,u"]
        lines += [f"{x:.17g},{u:.17g}" for x, u in zip(self.x, self.u)]
        return "\n".join(lines) + "\n"


class _Quadrature(NamedTuple):
    xi: np.ndarray  # nodes on [0, 1]
    w_beam: np.ndarray  # weights for int (.) dxi
    xi_pad: np.ndarray
    w_pad_mass: np.ndarray  # weights such that sum w f = int mu_pad f dx / m_pad
    w_pad_chord: np.ndarray  # weights such that sum w f = int (chord/2R) f dxi


def _quadrature(geom: BeamGeometry) -> _Quadrature:
    xi, w = _gl(0.0, 1.0, 64)
    pad = geom.pad
    if pad is None or pad.radius == 0:
        empty = np.zeros(0)
        return _Quadrature(xi, w, empty, empty, empty)
    # s = R sin(theta) removes the square-root edges of the chord weight
    th, wt = _gl(-0.5 * math.pi, 0.5 * math.pi, 32)
    xi_pad = (pad.center + pad.radius * np.sin(th)) / geom.length
    w_mass = 2.0 / math.pi * np.cos(th) ** 2 * wt
    w_chord = pad.radius / geom.length * np.cos(th) ** 2 * wt
    return _Quadrature(xi, w, xi_pad, w_mass, w_chord)


def modal_mass(geom: BeamGeometry, shape_fn) -> float:
    """``int mu(x) u(x)^2 dx`` for a callable antinode-normalized profile ``shape_fn(xi)``."""
    q = _quadrature(geom)
    m = geom.linear_density * geom.length * np.sum(q.w_beam * shape_fn(q.xi) ** 2)
    if len(q.xi_pad):
        m += geom.pad.mass * np.sum(q.w_pad_mass * shape_fn(q.xi_pad) ** 2)
    return float(m)


def _antinode_scale(fn):
    grid = np.linspace(0.0, 1.0, 4001)
    vals = fn(grid)
    k = int(np.argmax(np.abs(vals)))
    # refine the extremum around the best grid point
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    fine = np.linspace(lo, hi, 201)
    fv = fn(fine)
    j = int(np.argmax(np.abs(fv)))
    return float(fv[j])


def beam_mode(geom: BeamGeometry, n: int = 1, method: str | None = None, n_basis: int = 8,
              n_samples: int = 501) -> ModeShape:
    """Mode ``n`` of the beam, antinode-normalized.

    ``method="analytic"`` uses the bare clamped-clamped eigenfunction (pad mass
    still counts in the modal mass); ``method="ritz"`` (default when a pad is
    present) solves the Rayleigh-Ritz problem over ``n_basis`` eigenfunctions.
    """
    if n < 1:
        raise ParameterError("mode index must be >= 1")
    if method is None:
        method = "ritz" if geom.pad is not None and geom.pad.mass > 0 else "analytic"
    L = geom.length
    EI = geom.bending_stiffness
    roots = clamped_roots(max(n, n_basis))

    if method == "analytic":
        b = roots[n - 1]
        scale = _antinode_scale(lambda xi: clamped_function(b, xi))
        fn = lambda xi: clamped_function(b, xi) / scale  # noqa: E731
        omega_bare = (b / L) ** 2 * math.sqrt(EI / geom.linear_density) if geom.thickness > 0 else 0.0
        m_mod = modal_mass(geom, fn)
        m_bare = geom.linear_density * L * np.sum(_quadrature(geom).w_beam * fn(_quadrature(geom).xi) ** 2)
        # Rayleigh quotient: bare-beam strain energy over loaded kinetic term
        omega = omega_bare * math.sqrt(m_bare / m_mod) if m_mod > 0 else omega_bare
        coeffs = np.eye(len(roots))[n - 1] / scale
    elif method == "ritz":
        if n_basis < n:
            raise ParameterError("basis must contain at least n functions")
        q = _quadrature(geom)
        B = np.array([clamped_function(b, q.xi) for b in roots[:n_basis]])
        B2 = np.array([clamped_function(b, q.xi, 2) for b in roots[:n_basis]])
        mu = geom.linear_density * L
        M = mu * (B * q.w_beam) @ B.T
        K = EI / L**3 * (B2 * q.w_beam) @ B2.T
        if len(q.xi_pad):
            Bp = np.array([clamped_function(b, q.xi_pad) for b in roots[:n_basis]])
            M += geom.pad.mass * (Bp * q.w_pad_mass) @ Bp.T
            if geom.pad.stiffness_ratio > 1:
                Bp2 = np.array([clamped_function(b, q.xi_pad, 2) for b in roots[:n_basis]])
                K += (geom.pad.stiffness_ratio - 1.0) * EI / L**3 * (Bp2 * q.w_pad_chord) @ Bp2.T
        try:
            lam, vec = eigh(K, M)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"Rayleigh-Ritz eigensolve failed: {exc}") from exc
        c = vec[:, n - 1]
        res = np.linalg.norm(K @ c - lam[n - 1] * M @ c) / max(np.linalg.norm(K @ c), 1e-300)
        if not np.isfinite(lam[n - 1]) or lam[n - 1] < 0 or res > 1e-6:
            raise ConvergenceError("Rayleigh-Ritz eigensolve did not converge", residual=res)
        raw = lambda xi: c @ np.array([clamped_function(b, xi) for b in roots[:n_basis]])  # noqa: E731
        scale = _antinode_scale(raw)
        fn = lambda xi: raw(xi) / scale  # noqa: E731
        omega = math.sqrt(lam[n - 1])
        coeffs = c / scale
        m_mod = modal_mass(geom, fn)
    else:
        raise ParameterError(f"unknown method {method!r}")

    x = np.linspace(0.0, L, n_samples)
    u = fn(x / L)
    u[0] = u[-1] = 0.0
    return ModeShape(x=x, u=u, index=n, omega=omega, fraction=m_mod / geom.total_mass,
                     total_mass=geom.total_mass, coefficients=coeffs)


def effective_mass(shape: ModeShape, m_mode: float, waist: float, center: float) -> float:
    """Mode mass rescaled by the overlap with a Gaussian probe spot.

    ``m_eff = m_mode / <u>_I**2`` where ``<u>_I`` is the average of the
    antinode-normalized profile weighted by ``exp(-2 (x - center)^2 / w^2)``.
    """
    if not waist > 0:
        raise ParameterError("probe waist must be > 0")
    x, u = shape.x, shape.u
    if not (x[0] <= center <= x[-1]):
        raise ParameterError("probe footprint lies off the beam")
    # resample finely enough for narrow probes
    xs = np.linspace(x[0], x[-1], max(20001, len(x)))
    us = np.interp(xs, x, u)
    I = np.exp(-2.0 * (xs - center) ** 2 / waist**2)
    if np.trapezoid(I, xs) <= 0:
        raise ParameterError("probe footprint lies off the beam")
    u_mean = np.trapezoid(I * us, xs) / np.trapezoid(I, xs)
    return m_mode / u_mean**2


def mode_frequencies(geom: BeamGeometry, count: int) -> Sequence[float]:
    """Bare-beam clamped-clamped overtone frequencies (rad/s)."""
    b = clamped_roots(count)
    return list((b / geom.length) ** 2 * math.sqrt(geom.bending_stiffness / geom.linear_density))
