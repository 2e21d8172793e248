"""Discrete variable representations for the two stretches and the bend.

Stretches use a harmonic-oscillator DVR, the bend a Legendre DVR in
x = cos(theta).  Grid amplitudes always carry the square root of the
quadrature weight (and, for the bend, of the sin(theta) volume element), so
that the plain Euclidean norm of an amplitude vector is the continuum norm.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import InvalidParameterError


class DvrKind(enum.Enum):
    HARMONIC_OSCILLATOR = "ho"
    LEGENDRE = "legendre"


@dataclass(frozen=True)
class HoParams:
    mass: float
    omega: float
    center: float


@dataclass(frozen=True, eq=False)
class DvrBasis:
    """One-dimensional DVR.

    For the HO kind ``d1`` and ``d2`` represent d/dr and d^2/dr^2.  For the
    Legendre kind ``points`` holds theta (ascending), ``x`` holds cos(theta),
    ``d1`` represents the angular operator d/dtheta sin(theta) and ``d2`` the
    Legendre operator (1/sin) d/dtheta sin d/dtheta, both with respect to the
    sin(theta) dtheta measure.
    """

    kind: DvrKind
    points: np.ndarray
    weights: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    ho_params: HoParams | None = None
    x: np.ndarray | None = None
    # columns: FBR -> DVR transformation, kept for tests and diagnostics
    fbr: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("points", "weights", "d1", "d2", "x", "fbr"):
            arr = getattr(self, name)
            if arr is not None:
                arr.setflags(write=False)

    @property
    def n_points(self) -> int:
        return len(self.points)

    def __len__(self):
        return len(self.points)


def hermite_functions(n: int, y) -> np.ndarray:
    """Normalised Hermite functions phi_k(y), k < n, for unit mass and frequency; shape (n, len(y))."""
    y = np.asarray(y, dtype=float)
    out = np.empty((n, y.size))
    out[0] = np.pi**-0.25 * np.exp(-0.5 * y**2)
    if n > 1:
        out[1] = np.sqrt(2.0) * y * out[0]
    for k in range(2, n):
        out[k] = np.sqrt(2.0 / k) * y * out[k - 1] - np.sqrt((k - 1) / k) * out[k - 2]
    return out


def legendre_functions(n: int, x) -> np.ndarray:
    """Normalised Legendre polynomials sqrt((2l+1)/2) P_l(x), l < n; shape (n, len(x))."""
    x = np.asarray(x, dtype=float)
    p = np.empty((n, x.size))
    p[0] = 1.0
    if n > 1:
        p[1] = x
    for l in range(2, n):
        p[l] = ((2 * l - 1) * x * p[l - 1] - (l - 1) * p[l - 2]) / l
    return p * np.sqrt((2 * np.arange(n) + 1) / 2.0)[:, None]


def _christoffel(phi, jacobian):
    """FBR->DVR matrix and quadrature weights from basis functions sampled at the nodes."""
    norm2 = (phi**2).sum(axis=0)
    u = phi / np.sqrt(norm2)
    return u, jacobian / norm2


def _check_positive(**kwargs):
    for name, value in kwargs.items():
        if not np.isfinite(value) or value <= 0:
            raise InvalidParameterError(f"{name} must be positive, got {value!r}")


def build_ho_dvr(n_points: int, mass: float, omega: float, center: float = 0.0) -> DvrBasis:
    """Harmonic-oscillator DVR with exact (FBR-projected) derivative matrices."""
    if int(n_points) != n_points or n_points < 1:
        raise InvalidParameterError(f"n_points must be a positive integer, got {n_points!r}")
    _check_positive(mass=mass, omega=omega)
    n = int(n_points)
    mw = mass * omega
    k = np.arange(n - 1, dtype=float)

    off = np.sqrt((k + 1) / (2.0 * mw))
    q = scipy.linalg.eigh_tridiagonal(np.zeros(n), off, eigvals_only=True)
    u, weights = _christoffel(hermite_functions(n, q * np.sqrt(mw)), 1.0 / np.sqrt(mw))

    s = np.sqrt(mw / 2.0)
    d1_fbr = np.diag(s * np.sqrt(k + 1), 1) - np.diag(s * np.sqrt(k + 1), -1)
    kk = np.arange(n, dtype=float)
    d2_fbr = -(mw / 2.0) * np.diag(2 * kk + 1)
    if n > 2:
        j = np.arange(n - 2, dtype=float)
        band = (mw / 2.0) * np.sqrt((j + 1) * (j + 2))
        d2_fbr += np.diag(band, 2) + np.diag(band, -2)

    d1 = u.T @ d1_fbr @ u
    d2 = u.T @ d2_fbr @ u
    d1 = 0.5 * (d1 - d1.T)
    d2 = 0.5 * (d2 + d2.T)
    return DvrBasis(
        kind=DvrKind.HARMONIC_OSCILLATOR,
        points=q + center,
        weights=weights,
        d1=d1,
        d2=d2,
        ho_params=HoParams(float(mass), float(omega), float(center)),
        fbr=u,
    )


def ho_dvr_for_interval(n_points: int, mass: float, lo: float, hi: float) -> DvrBasis:
    """HO DVR whose outermost points sit at ``lo`` and ``hi``."""
    if not hi > lo:
        raise InvalidParameterError(f"empty interval [{lo}, {hi}]")
    center = 0.5 * (lo + hi)
    if n_points == 1:
        return build_ho_dvr(1, mass, 1.0, center)
    # outermost zero of H_n for unit m*omega, then rescale
    unit = build_ho_dvr(n_points, 1.0, 1.0, 0.0).points[-1]
    half = 0.5 * (hi - lo)
    mw = (unit / half) ** 2
    return build_ho_dvr(n_points, mass, mw / mass, center)


def legendre_fbr_operators(n: int):
    """x, d/dtheta sin, and the Legendre operator in normalised Legendre FBR."""
    l = np.arange(n, dtype=float)
    lo = l[:-1]
    x_off = (lo + 1) / np.sqrt((2 * lo + 1) * (2 * lo + 3))
    # d/dtheta sin P_l = ((l+1)^2 P_{l+1} - l^2 P_{l-1}) / (2l+1)
    b = np.zeros((n, n))
    b[np.arange(1, n), np.arange(n - 1)] = (lo + 1) ** 2 / np.sqrt((2 * lo + 1) * (2 * lo + 3))
    b[np.arange(n - 1), np.arange(1, n)] = -b[np.arange(1, n), np.arange(n - 1)]
    lap = np.diag(-l * (l + 1))
    return x_off, b, lap


def build_legendre_dvr(n_points: int) -> DvrBasis:
    """Legendre DVR on Gauss-Legendre nodes in x = cos(theta)."""
    if int(n_points) != n_points or n_points < 1:
        raise InvalidParameterError(f"n_points must be a positive integer, got {n_points!r}")
    n = int(n_points)
    x_off, b_fbr, lap_fbr = legendre_fbr_operators(n)
    x = scipy.linalg.eigh_tridiagonal(np.zeros(n), x_off, eigvals_only=True)
    # theta ascending means x descending
    x = x[::-1].copy()
    x[np.abs(x) < 1e-15] = 0.0
    u, weights = _christoffel(legendre_functions(n, x), 1.0)

    d1 = u.T @ b_fbr @ u
    d2 = u.T @ lap_fbr @ u
    d1 = 0.5 * (d1 - d1.T)
    d2 = 0.5 * (d2 + d2.T)
    return DvrBasis(
        kind=DvrKind.LEGENDRE,
        points=np.arccos(x),
        weights=weights,
        d1=d1,
        d2=d2,
        x=x,
        fbr=u,
    )


def grid_amplitudes(basis: DvrBasis, values) -> np.ndarray:
    """Convert function samples at the grid points to DVR amplitudes."""
    return np.sqrt(basis.weights) * np.asarray(values)


def grid_values(basis: DvrBasis, amplitudes) -> np.ndarray:
    return np.asarray(amplitudes) / np.sqrt(basis.weights)


# Default extents (bohr) relative to equilibrium; the r_cs range reaches past
# the absorbing potential that starts at 8 bohr.
CS_RANGE = (-1.2, 6.0)
OC_RANGE = (-0.9, 2.5)


def default_bases(model, n_cs: int = 64, n_oc: int = 32, n_theta: int = 32, cs_range=CS_RANGE, oc_range=OC_RANGE):
    """HO DVRs spanning the default stretch intervals and a Legendre bend DVR."""
    cs = ho_dvr_for_interval(n_cs, model.m_cs, model.r_cs_e + cs_range[0], model.r_cs_e + cs_range[1])
    oc = ho_dvr_for_interval(n_oc, model.m_oc, model.r_oc_e + oc_range[0], model.r_oc_e + oc_range[1])
    return cs, oc, build_legendre_dvr(n_theta)
