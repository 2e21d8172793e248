"""Sum-of-products operators on the direct-product DVR grid.

Every operator is a list of terms ``coeff * A_cs (x) A_oc (x) A_theta`` where
each factor is ``None`` (identity), a 1-D array (diagonal) or a dense
matrix.  The full grid matrix is never formed.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import HermiticityError, InvalidParameterError
from .grid import DvrBasis, DvrKind
from .pes import PesModel

MODES = ("cs", "oc", "theta")


@dataclass(frozen=True)
class Term:
    coeff: complex
    factors: tuple
    label: str = ""

    @property
    def is_diagonal(self) -> bool:
        return all(f is None or np.ndim(f) == 1 for f in self.factors)


def _apply_factor(psi, factor, axis):
    if factor is None:
        return psi
    if factor.ndim == 1:
        shape = [1, 1, 1]
        shape[axis] = -1
        return psi * factor.reshape(shape)
    if axis == 0:
        n0 = psi.shape[0]
        return (factor @ psi.reshape(n0, -1)).reshape((factor.shape[0],) + psi.shape[1:])
    if axis == 1:
        return np.matmul(factor, psi)
    return psi @ factor.T


def _apply_real_factor(psi, factor, axis, interleaved=None):
    """Fast path: real matrix on a C-contiguous complex tensor via real BLAS.

    A complex array viewed as float interleaves (re, im) along the last axis,
    so axes 0 and 1 need no change and axis 2 uses kron(A, I2).
    """
    if axis == 0:
        n0 = psi.shape[0]
        return (factor @ psi.reshape(n0, -1).view(np.float64)).view(np.complex128).reshape(psi.shape)
    if axis == 1:
        return np.matmul(factor, psi.view(np.float64)).view(np.complex128)
    n2 = psi.shape[2]
    out = psi.view(np.float64).reshape(-1, 2 * n2) @ interleaved
    return out.view(np.complex128).reshape(psi.shape)


def apply_factors(psi, factors):
    """Apply one product term's factors mode by mode."""
    out = psi
    for axis, factor in enumerate(factors):
        out = _apply_factor(out, factor, axis)
    return out


@dataclass(frozen=True, eq=False)
class SopOperator:
    terms: tuple
    shape: tuple
    hermitian: bool = True

    def __post_init__(self):
        for term in self.terms:
            if len(term.factors) != 3:
                raise InvalidParameterError("every term needs exactly three factors")
            for axis, f in enumerate(term.factors):
                if f is None:
                    continue
                if f.ndim == 1 and f.shape != (self.shape[axis],):
                    raise InvalidParameterError(
                        f"term {term.label!r}: diagonal factor on {MODES[axis]} has length "
                        f"{f.shape[0]}, grid has {self.shape[axis]}"
                    )
                if f.ndim == 2 and f.shape != (self.shape[axis],) * 2:
                    raise InvalidParameterError(
                        f"term {term.label!r}: factor on {MODES[axis]} has shape {f.shape}, "
                        f"grid has {self.shape[axis]}"
                    )
                if f.ndim not in (1, 2):
                    raise InvalidParameterError("factors must be 1-D or 2-D")

    def __add__(self, other: "SopOperator") -> "SopOperator":
        if tuple(other.shape) != tuple(self.shape):
            raise InvalidParameterError(f"grid mismatch {self.shape} vs {other.shape}")
        return SopOperator(self.terms + other.terms, self.shape, self.hermitian and other.hermitian)

    def scaled(self, c) -> "SopOperator":
        terms = tuple(Term(t.coeff * c, t.factors, t.label) for t in self.terms)
        herm = self.hermitian and np.isreal(c)
        return SopOperator(terms, self.shape, herm)

    def __len__(self):
        return len(self.terms)

    @cached_property
    def diagonal(self) -> np.ndarray:
        """Summed contribution of all purely diagonal terms on the full grid."""
        diag = np.zeros(self.shape, dtype=complex)
        for term in self.terms:
            if term.is_diagonal:
                diag += term.coeff * apply_factors(np.ones(self.shape), term.factors)
        if not np.any(diag.imag):
            diag = diag.real.copy()
        return diag

    @cached_property
    def _dense_terms(self):
        """Non-diagonal terms with real matrices prepared for the real-BLAS path."""
        prepared = []
        for t in self.terms:
            if t.is_diagonal:
                continue
            steps = []
            for axis, f in enumerate(t.factors):
                if f is None:
                    continue
                real = np.isrealobj(f)
                extra = np.kron(f, np.eye(2)).T.copy() if (real and f.ndim == 2 and axis == 2) else None
                steps.append((axis, f, real and f.ndim == 2, extra))
            prepared.append((t.coeff, steps))
        return prepared

    def apply(self, psi: np.ndarray) -> np.ndarray:
        """Matrix-vector product on a grid tensor."""
        psi = np.asarray(psi)
        if psi.shape != tuple(self.shape):
            raise InvalidParameterError(f"wavefunction shape {psi.shape} != operator grid {self.shape}")
        fast = psi.dtype == np.complex128
        if fast:
            psi = np.ascontiguousarray(psi)
        out = (self.diagonal * psi).astype(np.complex128, copy=False)
        for coeff, steps in self._dense_terms:
            v = psi
            for axis, f, real, extra in steps:
                if fast and real:
                    v = _apply_real_factor(v, f, axis, extra)
                else:
                    v = _apply_factor(v, f, axis)
            if coeff == 1.0:
                out += v
            else:
                out += coeff * v
        return out

    def expectation(self, psi: np.ndarray) -> complex:
        return np.vdot(psi, self.apply(psi))

    def term_expectations(self, psi: np.ndarray) -> dict:
        out = {}
        for term in self.terms:
            val = term.coeff * np.vdot(psi, apply_factors(psi, term.factors))
            out[term.label] = out.get(term.label, 0.0) + val
        return out


def apply_sop(op: SopOperator, psi):
    """Apply ``op`` to a raw grid tensor or to a GridWavefunction."""
    amplitudes = getattr(psi, "amplitudes", None)
    if amplitudes is None:
        return op.apply(psi)
    return type(psi)(op.apply(amplitudes), psi.time)


def check_hermitian(op: SopOperator, n_vectors: int = 3, tol: float = 1e-10, seed: int = 0) -> float:
    """Worst |<u|Hv> - <Hu|v>| over random unit vectors; raises above ``tol``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_vectors):
        u = rng.standard_normal(op.shape) + 1j * rng.standard_normal(op.shape)
        v = rng.standard_normal(op.shape) + 1j * rng.standard_normal(op.shape)
        u /= np.linalg.norm(u)
        v /= np.linalg.norm(v)
        worst = max(worst, abs(np.vdot(u, op.apply(v)) - np.vdot(op.apply(u), v)))
    if worst > tol:
        raise HermiticityError(f"operator fails the symmetry check: max |<u|Hv>-<Hu|v>| = {worst:.3e}")
    return worst


def _shape(bases):
    return tuple(len(b) for b in bases)


def _check_bases(bases):
    cs, oc, th = bases
    if cs.kind is not DvrKind.HARMONIC_OSCILLATOR or oc.kind is not DvrKind.HARMONIC_OSCILLATOR:
        raise InvalidParameterError("stretch bases must be harmonic-oscillator DVRs")
    if th.kind is not DvrKind.LEGENDRE:
        raise InvalidParameterError("bending basis must be a Legendre DVR")
    if np.any(cs.points <= 0) or np.any(oc.points <= 0):
        raise InvalidParameterError("stretch grids must lie at positive bond lengths")


def bend_operators(theta_basis: DvrBasis):
    """cot d sin d + (1/sin) d sin d cos, and the Legendre operator, on the DVR."""
    x = theta_basis.x
    lap = theta_basis.d2
    mixed = x[:, None] * lap + lap * x[None, :]
    return mixed, lap


def bend_kinetic_matrix(model: PesModel, theta_basis: DvrBasis, r_cs: float, r_oc: float):
    """Bending kinetic energy with the radial prefactors frozen at (r_cs, r_oc)."""
    mixed, lap = bend_operators(theta_basis)
    m = model.masses
    return mixed / (2 * m.m_c * r_cs * r_oc) - (1 / (2 * m.m_cs * r_cs**2) + 1 / (2 * m.m_oc * r_oc**2)) * lap


def build_kinetic(bases, model: PesModel, coupled: bool = True) -> SopOperator:
    """Valence-coordinate kinetic energy for J = 0 as eight product terms.

    With ``coupled=False`` the three kinetic couplings are dropped and the
    bending prefactors are frozen at equilibrium, which leaves a separable
    operator (three terms).
    """
    _check_bases(bases)
    if model.masses is None:
        raise InvalidParameterError("masses are required")
    cs, oc, th = bases
    m = model.masses
    shape = _shape(bases)
    if not coupled:
        terms = (
            Term(-1 / (2 * m.m_cs), (cs.d2, None, None), "T_cs"),
            Term(-1 / (2 * m.m_oc), (None, oc.d2, None), "T_oc"),
            Term(1.0, (None, None, bend_kinetic_matrix(model, th, model.r_cs_e, model.r_oc_e)), "T_bend"),
        )
        return SopOperator(terms, shape, True)

    mixed, lap = bend_operators(th)
    inv_cs, inv_oc = 1.0 / cs.points, 1.0 / oc.points
    terms = (
        Term(-1 / (2 * m.m_cs), (cs.d2, None, None), "T_cs"),
        Term(-1 / (2 * m.m_oc), (None, oc.d2, None), "T_oc"),
        Term(-1 / m.m_c, (cs.d1, oc.d1, th.x), "K_cs_oc"),
        Term(1 / m.m_c, (inv_cs, oc.d1, th.d1), "K_oc_bend"),
        Term(1 / m.m_c, (cs.d1, inv_oc, th.d1), "K_cs_bend"),
        Term(1 / (2 * m.m_c), (inv_cs, inv_oc, mixed), "T_bend_mixed"),
        Term(-1 / (2 * m.m_cs), (inv_cs**2, None, lap), "T_bend_cs"),
        Term(-1 / (2 * m.m_oc), (None, inv_oc**2, lap), "T_bend_oc"),
    )
    op = SopOperator(terms, shape, True)
    check_hermitian(op)
    return op


def pes_factors(model: PesModel, bases):
    cs, oc, th = bases
    return model.y_cs(cs.points), model.y_oc(oc.points), th.x - np.cos(model.theta_e)


def build_potential(model: PesModel, bases) -> SopOperator:
    ycs, yoc, yth = pes_factors(model, bases)
    terms = []
    for (i, j, k), c in sorted(model.f.items()):
        if c == 0.0:
            continue
        factors = (ycs**i if i else None, yoc**j if j else None, yth**k if k else None)
        terms.append(Term(c, factors, f"V_{i}{j}{k}"))
    return SopOperator(tuple(terms), _shape(bases), True)


def build_full_h(kinetic: SopOperator, model: PesModel, bases) -> SopOperator:
    """Kinetic operator plus one product term per PES coefficient."""
    return kinetic + build_potential(model, bases)


def cap_potential(r, eta: float = 0.075, r_abs: float = 8.0):
    """-i eta (r - r_abs)^2 for r > r_abs, else 0."""
    r = np.asarray(r, dtype=float)
    d = np.where(r > r_abs, r - r_abs, 0.0)
    return -1j * eta * d**2


def build_cap(eta: float, r_abs: float, basis_cs: DvrBasis) -> SopOperator:
    if not eta > 0:
        raise InvalidParameterError(f"eta must be positive, got {eta!r}")
    if r_abs >= basis_cs.points[-1]:
        raise InvalidParameterError(
            f"r_abs = {r_abs} lies beyond the r_cs grid end {basis_cs.points[-1]:.4f}"
        )
    d = np.where(basis_cs.points > r_abs, basis_cs.points - r_abs, 0.0) ** 2
    return SopOperator((Term(-1j * eta, (d, None, None), "CAP"),), (len(basis_cs), None, None), False)


def with_cap(h: SopOperator, cap: SopOperator) -> SopOperator:
    cap = SopOperator(cap.terms, h.shape, False)
    return h + cap


def one_mode_potential(model: PesModel, basis: DvrBasis, mode: str) -> np.ndarray:
    coeffs = model.slice_coefficients(mode)
    if mode == "cs":
        y = model.y_cs(basis.points)
    elif mode == "oc":
        y = model.y_oc(basis.points)
    else:
        y = basis.x - np.cos(model.theta_e)
    v = np.zeros(len(basis))
    for p, c in sorted(coeffs.items()):
        v = v + c * y**p
    return v


@dataclass(frozen=True, eq=False)
class ZeroOrderSet:
    h_cs: np.ndarray
    h_oc: np.ndarray
    h_theta: np.ndarray
    h_I: SopOperator
    full: SopOperator

    @property
    def matrices(self):
        return self.h_cs, self.h_oc, self.h_theta

    def embedded(self, mode: int) -> SopOperator:
        factors = [None, None, None]
        factors[mode] = self.matrices[mode]
        return SopOperator((Term(1.0, tuple(factors), f"H0_{MODES[mode]}"),), self.full.shape, True)


def build_zero_order(model: PesModel, bases, full_h: SopOperator | None = None) -> ZeroOrderSet:
    """Local-mode Hamiltonians on PES slices through equilibrium and the residual coupling."""
    _check_bases(bases)
    cs, oc, th = bases
    m = model.masses
    h_cs = -cs.d2 / (2 * m.m_cs) + np.diag(one_mode_potential(model, cs, "cs"))
    h_oc = -oc.d2 / (2 * m.m_oc) + np.diag(one_mode_potential(model, oc, "oc"))
    h_th = bend_kinetic_matrix(model, th, model.r_cs_e, model.r_oc_e) + np.diag(
        one_mode_potential(model, th, "theta")
    )
    if full_h is None:
        full_h = build_full_h(build_kinetic(bases, model), model, bases)
    if not full_h.hermitian:
        raise InvalidParameterError("zero-order split needs the Hermitian Hamiltonian (no CAP)")
    minus = SopOperator(
        (
            Term(-1.0, (h_cs, None, None), "-H0_cs"),
            Term(-1.0, (None, h_oc, None), "-H0_oc"),
            Term(-1.0, (None, None, h_th), "-H0_theta"),
        ),
        full_h.shape,
        True,
    )
    return ZeroOrderSet(h_cs, h_oc, h_th, full_h + minus, full_h)
