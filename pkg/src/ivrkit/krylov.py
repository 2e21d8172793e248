"""Short-iterative Lanczos / Arnoldi action of exp(-i H dt) on a vector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import PropagationError


@dataclass
class KrylovStats:
    steps: int = 0
    matvecs: int = 0
    max_error: float = 0.0


def _small_propagator(h_small, tau, hermitian):
    if hermitian:
        e, s = np.linalg.eigh(h_small)
        return (s * np.exp(-1j * tau * e)) @ s.conj().T
    return scipy.linalg.expm(-1j * tau * h_small)


def _error(h_small, beta_next, tau, hermitian):
    """A posteriori estimate beta_m |[exp(-i tau H_m) e_1]_m| and the step vector."""
    col = _small_propagator(h_small, tau, hermitian)[:, 0]
    return beta_next * abs(col[-1]), col


def krylov_step(matvec, v, dt, hermitian=True, tol=1e-12, max_dim=40, min_dim=4, stats=None):
    """Advance ``v`` by at most ``dt`` under exp(-i H t).

    Returns ``(v_new, dt_taken)``.  The Krylov space grows until the error
    estimate for the full ``dt`` drops below ``tol`` (relative to |v|); if
    ``max_dim`` is reached first, the longest sub-step meeting ``tol`` is taken.
    """
    shape = v.shape
    norm = np.linalg.norm(v)
    if norm == 0.0:
        return v.copy(), dt
    basis = np.empty((max_dim + 1, v.size), dtype=complex)
    basis[0] = v.ravel() / norm
    h = np.zeros((max_dim + 1, max_dim + 1), dtype=complex)
    n_mv = 0
    m = 0
    col = None
    happy = False
    for j in range(max_dim):
        w = matvec(basis[j].reshape(shape)).ravel().astype(complex, copy=False)
        n_mv += 1
        q = basis[: j + 1]
        if hermitian:
            # three-term recurrence, then one full reorthogonalisation pass
            if j > 0:
                w -= h[j, j - 1] * basis[j - 1]
            alpha = np.vdot(basis[j], w).real
            w -= alpha * basis[j]
            c = (q @ w.conj()).conj()
            w -= c @ q
            h[j, j] = alpha + c[j].real
            if j > 0:
                h[j - 1, j] = h[j, j - 1]
        else:
            # classical Gram-Schmidt, applied twice
            c = (q @ w.conj()).conj()
            w = w - c @ q
            c2 = (q @ w.conj()).conj()
            w -= c2 @ q
            h[: j + 1, j] = c + c2
        beta = np.linalg.norm(w)
        h[j + 1, j] = beta
        m = j + 1
        if not np.isfinite(beta):
            raise PropagationError("non-finite value in Krylov recursion")
        if beta < 1e-14 * max(1.0, abs(h[j, j])):
            happy = True
            break
        if m >= min_dim:
            err, col = _error(h[:m, :m], beta, dt, hermitian)
            if err < tol:
                break
        basis[j + 1] = w / beta
    h_small = h[:m, :m]
    if happy:
        tau = dt
        col = _small_propagator(h_small, tau, hermitian)[:, 0]
        err = 0.0
    else:
        beta = h[m, m - 1].real
        err, col = _error(h_small, beta, dt, hermitian)
        tau = dt
        if err >= tol:
            lo, hi = 0.0, dt
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                e_mid, _ = _error(h_small, beta, mid, hermitian)
                if e_mid < tol:
                    lo = mid
                else:
                    hi = mid
                if hi - lo < 1e-3 * hi:
                    break
            tau = lo
            if tau <= 0.0:
                raise PropagationError("Krylov step size collapsed to zero")
            err, col = _error(h_small, beta, tau, hermitian)
    out = col @ basis[:m]
    if stats is not None:
        stats.steps += 1
        stats.matvecs += n_mv
        stats.max_error = max(stats.max_error, err)
    return (norm * out).reshape(shape), tau


def krylov_propagate(matvec, v, t, hermitian=True, tol=1e-12, max_dim=40, stats=None):
    """exp(-i H t) v with as many adaptive Krylov steps as needed."""
    done = 0.0
    while t - done > 1e-14 * max(1.0, abs(t)):
        v, tau = krylov_step(matvec, v, t - done, hermitian, tol, max_dim, stats=stats)
        done += tau
    return v
