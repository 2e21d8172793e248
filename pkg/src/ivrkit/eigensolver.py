"""Zero-order local-mode spectra, product-state enumeration and the DOS histogram."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConvergenceError, CoverageError, InvalidParameterError

DENSE_LIMIT = 256


class Mode(enum.Enum):
    CS = "cs"
    OC = "oc"
    THETA = "theta"


@dataclass(frozen=True, order=True)
class StateLabel:
    n: int
    m: int
    l: int

    def __post_init__(self):
        if min(self.n, self.m, self.l) < 0:
            raise InvalidParameterError(f"quantum numbers must be non-negative: {self}")

    def __iter__(self):
        return iter((self.n, self.m, self.l))

    def __str__(self):
        return f"{self.n} {self.m} {self.l}"

    @classmethod
    def parse(cls, text: str) -> "StateLabel":
        parts = text.replace(",", " ").split()
        if len(parts) != 3:
            raise InvalidParameterError(f"a state label needs three integers, got {text!r}")
        return cls(*(int(p) for p in parts))


@dataclass(frozen=True, eq=False)
class ZeroOrderSpectrum:
    mode: Mode
    energies: np.ndarray
    vectors: np.ndarray  # columns on the DVR grid

    def __len__(self):
        return len(self.energies)

    def truncated(self, k: int) -> "ZeroOrderSpectrum":
        return ZeroOrderSpectrum(self.mode, self.energies[:k], self.vectors[:, :k])


def _fix_signs_and_order(energies, vectors, tol=1e-10):
    """Deterministic phase (first significant amplitude positive) and degenerate ordering."""
    vectors = vectors.copy()
    first = np.empty(vectors.shape[1], dtype=int)
    for j in range(vectors.shape[1]):
        v = vectors[:, j]
        thresh = 1e-3 * np.abs(v).max()
        idx = int(np.argmax(np.abs(v) > thresh))
        first[j] = idx
        if v[idx] < 0:
            vectors[:, j] = -v
    scale = max(1.0, np.abs(energies).max(initial=0.0))
    # ascending energy; within a degenerate cluster by first significant index
    rounded = np.round(energies / (tol * scale))
    order = np.lexsort((first, rounded))
    return energies[order], vectors[:, order]


def lanczos_lowest(h: np.ndarray, k: int, tol: float = 1e-10, max_iter: int | None = None, seed: int = 0):
    """k lowest eigenpairs of a real symmetric matrix, Lanczos with full reorthogonalisation."""
    n = h.shape[0]
    max_iter = n if max_iter is None else min(max_iter, n)
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(n)
    q /= np.linalg.norm(q)
    basis = np.zeros((n, max_iter))
    alpha = np.zeros(max_iter)
    beta = np.zeros(max_iter)
    scale = max(np.abs(h).sum(axis=1).max(), 1e-300)
    worst = np.inf
    for j in range(max_iter):
        basis[:, j] = q
        w = h @ q
        alpha[j] = q @ w
        w -= basis[:, : j + 1] @ (basis[:, : j + 1].T @ w)
        w -= basis[:, : j + 1] @ (basis[:, : j + 1].T @ w)
        b = np.linalg.norm(w)
        m = j + 1
        if m >= k:
            theta, s = scipy.linalg.eigh_tridiagonal(alpha[:m], beta[: m - 1])
            res = np.abs(b * s[-1, :k])
            worst = res.max()
            if worst < tol * scale or m == n:
                vecs = basis[:, :m] @ s[:, :k]
                return theta[:k], vecs, worst
        if b < 1e-12 * scale:
            # invariant subspace exhausted: restart with a fresh orthogonal direction
            w = rng.standard_normal(n)
            for _ in range(2):
                w -= basis[:, : j + 1] @ (basis[:, : j + 1].T @ w)
            b = np.linalg.norm(w)
            beta[j] = 0.0
        else:
            beta[j] = b
        q = w / b
    raise ConvergenceError(f"Lanczos did not converge in {max_iter} iterations", worst_residual=worst)


def solve_mode(h: np.ndarray, k: int | None = None, mode: Mode | str = Mode.CS, method: str = "auto",
               tol: float = 1e-10) -> ZeroOrderSpectrum:
    """Lowest ``k`` eigenpairs of a 1-D zero-order Hamiltonian.

    ``method='auto'`` diagonalises densely up to DENSE_LIMIT and uses Lanczos
    above it.
    """
    h = np.asarray(h)
    n = h.shape[0]
    k = n if k is None else k
    if not 1 <= k <= n:
        raise InvalidParameterError(f"k = {k} outside 1..{n}")
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "lanczos"
    if method == "dense":
        e, v = scipy.linalg.eigh(h, subset_by_index=(0, k - 1))
    elif method == "lanczos":
        e, v, _ = lanczos_lowest(h, k, tol=tol)
        v, _ = np.linalg.qr(v)
        # Rayleigh-Ritz once more to clean up after the QR
        e2, s = np.linalg.eigh(v.T @ h @ v)
        e, v = e2, v @ s
    else:
        raise InvalidParameterError(f"unknown method {method!r}")
    e, v = _fix_signs_and_order(np.asarray(e), np.asarray(v))
    return ZeroOrderSpectrum(Mode(mode), e, v)


def solve_zero_order(zero_order, k=None, method: str = "auto"):
    """Spectra of the three local-mode Hamiltonians of a ZeroOrderSet."""
    ks = (None, None, None) if k is None else k
    return tuple(
        solve_mode(h, kk, mode, method=method) for h, kk, mode in zip(zero_order.matrices, ks, Mode)
    )


def retain_states(spectrum: ZeroOrderSpectrum, e_max: float | None = None, margin: float = 0.02,
                  grid_points=None, r_abs: float | None = None, leak_tol: float = 1e-4) -> ZeroOrderSpectrum:
    """Keep states below ``e_max + margin`` that do not live in the absorbing region."""
    keep = np.ones(len(spectrum), dtype=bool)
    if e_max is not None:
        keep &= spectrum.energies <= e_max + margin
    if r_abs is not None and grid_points is not None:
        outside = np.asarray(grid_points) > r_abs
        amp = np.abs(spectrum.vectors)
        if outside.any():
            leak = amp[outside].max(axis=0) / amp.max(axis=0)
            keep &= leak < leak_tol
    # retained set must be a contiguous ladder from the ground state
    stop = int(np.argmin(keep)) if not keep.all() else len(keep)
    return spectrum.truncated(stop)


def enumerate_states(spectra, e_max: float):
    """All product states with E_n + E_m + E_l <= e_max, sorted by energy."""
    spectra = tuple(spectra)
    lowest = [s.energies[0] for s in spectra]
    for i, s in enumerate(spectra):
        others = sum(lowest) - lowest[i]
        if s.energies[-1] + others < e_max:
            raise CoverageError(
                f"{s.mode.value} spectrum ends at {s.energies[-1]:.6g} hartree; "
                f"cannot cover e_max = {e_max:.6g}",
                mode=s.mode,
            )
    e_cs, e_oc, e_th = (s.energies for s in spectra)
    states = []
    for n, en in enumerate(e_cs):
        if en + lowest[1] + lowest[2] > e_max:
            break
        for m, em in enumerate(e_oc):
            if en + em + lowest[2] > e_max:
                break
            for l, el in enumerate(e_th):
                e0 = en + em + el
                if e0 > e_max:
                    break
                states.append((StateLabel(n, m, l), e0))
    states.sort(key=lambda item: (item[1], item[0]))
    return states


def count_states(spectra, e_max: float) -> int:
    return len(enumerate_states(spectra, e_max))


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def dos_histogram(states, bin_width: float = 0.01) -> Histogram:
    """Number of zero-order states per energy bin, from 0 to the highest energy."""
    if not states:
        raise InvalidParameterError("empty state list")
    if not bin_width > 0:
        raise InvalidParameterError("bin_width must be positive")
    energies = np.array([e for _, e in states])
    n_bins = max(1, int(np.floor(energies.max() / bin_width)) + 1)
    edges = bin_width * np.arange(n_bins + 1)
    idx = np.clip(np.floor(energies / bin_width).astype(int), 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    return Histogram(edges, counts)

