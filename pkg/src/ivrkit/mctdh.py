"""Low-rank MCTDH propagation: core tensor times per-mode single-particle functions.

The equations of motion are integrated with a constant-mean-field splitting:
the core is advanced for half a step with the SPFs held fixed (Krylov), the
SPFs for a full step with mean fields and density matrices frozen (adaptive
Runge-Kutta), then the core for the second half-step in the new SPF basis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import InvalidParameterError, PropagationError
from .hamiltonian import SopOperator, Term
from .krylov import KrylovStats, krylov_propagate
from .propagator import GridWavefunction, TrajectoryRecord, _Recorder, operator_fingerprint, output_times
from .units import AU_TIME_FS


@dataclass(eq=False)
class MctdhWavefunction:
    core: np.ndarray  # (n1, n2, n3)
    spfs: tuple  # three (N_k, n_k) matrices with orthonormal columns
    time: float = 0.0  # fs
    regularization_eps: float = 1e-8

    def __post_init__(self):
        self.core = np.asarray(self.core, dtype=complex)
        self.spfs = tuple(np.asarray(p, dtype=complex) for p in self.spfs)
        if self.core.ndim != 3 or len(self.spfs) != 3:
            raise InvalidParameterError("MCTDH state needs a rank-3 core and three SPF stacks")
        for k, p in enumerate(self.spfs):
            if p.ndim != 2 or p.shape[1] != self.core.shape[k]:
                raise InvalidParameterError(f"SPF stack {k} has shape {p.shape}, core has {self.core.shape}")
            if p.shape[1] > p.shape[0]:
                raise InvalidParameterError(f"mode {k}: {p.shape[1]} SPFs exceed the grid size {p.shape[0]}")

    @property
    def n_spf(self):
        return self.core.shape

    @property
    def grid_shape(self):
        return tuple(p.shape[0] for p in self.spfs)

    def orthonormality_error(self) -> float:
        return max(np.abs(p.conj().T @ p - np.eye(p.shape[1])).max() for p in self.spfs)

    def to_grid(self) -> GridWavefunction:
        return GridWavefunction(expand(self.core, self.spfs), self.time)


def expand(core, spfs) -> np.ndarray:
    return np.einsum("abc,ia,jb,kc->ijk", core, *spfs, optimize=True)


def _complete_basis(first: np.ndarray, guess: np.ndarray | None, n: int) -> np.ndarray:
    """Orthonormal N x n stack whose first column is ``first``."""
    size = first.shape[0]
    cols = [first / np.linalg.norm(first)]
    cands = [] if guess is None else [guess[:, i] for i in range(guess.shape[1])]
    cands += [np.eye(size)[:, i] for i in range(size)]
    for c in cands:
        if len(cols) == n:
            break
        v = np.asarray(c, dtype=complex)
        for _ in range(2):
            for u in cols:
                v = v - np.vdot(u, v) * u
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            cols.append(v / nv)
    return np.stack(cols, axis=1)


def mctdh_from_product(psi0: GridWavefunction, n_spf, spf_guess=None, eps: float = 1e-8) -> MctdhWavefunction:
    """Exact MCTDH representation of a product state.

    The occupied SPF is the factor of ``psi0``; the unoccupied ones come from
    ``spf_guess`` (e.g. the zero-order eigenvectors) and are orthonormalised.
    """
    amp = psi0.amplitudes
    n_spf = tuple(int(n) for n in n_spf)
    if len(n_spf) != 3 or min(n_spf) < 1:
        raise InvalidParameterError(f"n_spf must be three positive integers, got {n_spf}")
    for k, (n, size) in enumerate(zip(n_spf, amp.shape)):
        if n > size:
            raise InvalidParameterError(f"mode {k}: {n} SPFs exceed the grid size {size}")
    spfs = []
    for k in range(3):
        unfold = np.moveaxis(amp, k, 0).reshape(amp.shape[k], -1)
        u, s, _ = np.linalg.svd(unfold, full_matrices=False)
        if s.size > 1 and s[1] > 1e-8 * s[0]:
            raise InvalidParameterError("initial state is not a product state")
        guess = None if spf_guess is None else np.asarray(spf_guess[k])
        spfs.append(_complete_basis(u[:, 0], guess, n_spf[k]))
    core = np.einsum("ijk,ia,jb,kc->abc", amp, *(p.conj() for p in spfs), optimize=True)
    return MctdhWavefunction(core, tuple(spfs), psi0.time, eps)


def _project(factor, phi):
    """<phi_j| h |phi_l> for one mode (identity -> None)."""
    if factor is None:
        return None
    if factor.ndim == 1:
        return phi.conj().T @ (factor[:, None] * phi)
    return phi.conj().T @ (factor @ phi)


def _act(factor, phi):
    if factor is None:
        return phi
    if factor.ndim == 1:
        return factor[:, None] * phi
    return factor @ phi


def _core_operator(h: SopOperator, spfs) -> SopOperator:
    terms = tuple(
        Term(t.coeff, tuple(_project(f, p) for f, p in zip(t.factors, spfs)), t.label) for t in h.terms
    )
    return SopOperator(terms, tuple(p.shape[1] for p in spfs), h.hermitian)


def _apply_small(mats, core, skip):
    out = core
    for axis, m in enumerate(mats):
        if axis == skip or m is None:
            continue
        out = np.moveaxis(np.tensordot(m, out, axes=(1, axis)), 0, axis)
    return out


def _mean_fields(h: SopOperator, core, spfs, mode):
    """Density matrix and one mean-field matrix per term for ``mode``."""
    a = np.moveaxis(core, mode, 0).reshape(core.shape[mode], -1)
    rho = a.conj() @ a.T
    fields = []
    for t in h.terms:
        mats = [_project(f, p) for f, p in zip(t.factors, spfs)]
        b = _apply_small(mats, core, mode)
        b = np.moveaxis(b, mode, 0).reshape(core.shape[mode], -1)
        fields.append(a.conj() @ b.T)
    return rho, fields


def _regularized_inverse(rho, eps):
    w, v = np.linalg.eigh(rho)
    return (v / (w + eps)) @ v.conj().T


def _spf_rhs_factory(h: SopOperator, mode, fields, rho_inv, shape):
    # terms sharing the same factor on this mode are merged
    grouped = {}
    for t, hmf in zip(h.terms, fields):
        f = t.factors[mode]
        key = id(f)
        g = t.coeff * (rho_inv @ hmf).T
        if key in grouped:
            grouped[key][1] += g
        else:
            grouped[key] = [f, g]
    active = [(f, g) for f, g in grouped.values() if np.any(g)]

    def rhs(_t, y):
        phi = y.reshape(shape)
        acc = np.zeros_like(phi)
        for f, gt in active:
            acc += _act(f, phi) @ gt
        acc -= phi @ (phi.conj().T @ acc)
        return (-1j * acc).ravel()

    return rhs


class _Integrator:
    def __init__(self, h, cmf_step_au, tol, rtol, atol, max_retries):
        self.h = h
        self.tau = cmf_step_au
        self.tol = tol
        self.rtol = rtol
        self.atol = atol
        self.max_retries = max_retries
        self.stats = KrylovStats()
        self.ode_evals = 0

    def core_half(self, core, spfs, tau):
        op = _core_operator(self.h, spfs)
        return krylov_propagate(op.apply, core, tau, op.hermitian, self.tol, stats=self.stats)

    def spf_step(self, core, spfs, tau, eps):
        new_spfs = []
        for mode in range(3):
            phi = spfs[mode]
            if phi.shape[1] == phi.shape[0]:
                # complete basis: the projected SPF motion vanishes identically
                new_spfs.append(phi)
                continue
            rho, fields = _mean_fields(self.h, core, spfs, mode)
            rhs = _spf_rhs_factory(self.h, mode, fields, _regularized_inverse(rho, eps), phi.shape)
            sol = None
            rtol = self.rtol
            for _ in range(self.max_retries):
                sol = solve_ivp(rhs, (0.0, tau), phi.ravel(), method="DOP853", rtol=rtol, atol=self.atol)
                if sol.success and np.all(np.isfinite(sol.y[:, -1])):
                    break
                rtol *= 0.1
            if sol is None or not sol.success:
                raise PropagationError(f"SPF integration failed for mode {mode}: {sol.message if sol else ''}")
            self.ode_evals += sol.nfev
            new_spfs.append(sol.y[:, -1].reshape(phi.shape))
        # re-orthonormalise; absorb the triangular factors into the core
        out = []
        for mode, phi in enumerate(new_spfs):
            q, r = np.linalg.qr(phi)
            core = np.moveaxis(np.tensordot(r, core, axes=(1, mode)), 0, mode)
            out.append(q)
        return core, tuple(out)

    def step(self, core, spfs, tau, eps):
        core = self.core_half(core, spfs, 0.5 * tau)
        core, spfs = self.spf_step(core, spfs, tau, eps)
        core = self.core_half(core, spfs, 0.5 * tau)
        return core, spfs


def propagate_mctdh(psi0, h: SopOperator, n_spf, dt_out: float = 0.25, t_final: float = 800.0, spf_guess=None,
                    cmf_step: float | None = None, eps: float = 1e-8, observers=None, store_every: int = 1,
                    tol: float = 1e-12, rtol: float = 1e-10, atol: float = 1e-12,
                    max_retries: int = 3) -> TrajectoryRecord:
    """MCTDH propagation; outputs are expanded onto the full grid.

    ``psi0`` is a product GridWavefunction or an MctdhWavefunction.  Times in
    fs; ``cmf_step`` defaults to a quarter of ``dt_out``.
    """
    if isinstance(psi0, GridWavefunction):
        if psi0.shape != tuple(h.shape):
            raise InvalidParameterError(f"initial state shape {psi0.shape} != grid {h.shape}")
        state = mctdh_from_product(psi0, n_spf, spf_guess, eps)
    else:
        state = psi0
        if state.grid_shape != tuple(h.shape):
            raise InvalidParameterError(f"SPF grid {state.grid_shape} != operator grid {h.shape}")
    times = output_times(dt_out, t_final)
    cmf_step = 0.25 * dt_out if cmf_step is None else cmf_step
    if not cmf_step > 0:
        raise InvalidParameterError("cmf_step must be positive")
    n_sub = max(1, int(np.ceil(dt_out / cmf_step - 1e-9)))
    tau = dt_out / n_sub / AU_TIME_FS

    grid0 = state.to_grid().amplitudes
    rec = _Recorder(grid0, times, observers, store_every)
    integ = _Integrator(h, tau, tol, rtol, atol, max_retries)
    core, spfs = state.core, state.spfs
    rec(0, grid0)
    for k in range(1, len(times)):
        for _ in range(n_sub):
            try:
                core, spfs = integ.step(core, spfs, tau, state.regularization_eps)
            except PropagationError as exc:
                raise PropagationError(str(exc), time_fs=times[k - 1]) from exc
        if not np.all(np.isfinite(core)):
            raise PropagationError("core tensor contains NaN or Inf", time_fs=times[k])
        rec(k, expand(core, spfs))
    final = MctdhWavefunction(core, spfs, times[-1], state.regularization_eps)
    return TrajectoryRecord(
        times=times,
        norms=rec.norms,
        autocorrelation=rec.autocorr,
        snapshots=rec.snapshots,
        cap_active=not h.hermitian,
        fingerprint=operator_fingerprint(h, grid0, dt_out, t_final, "mctdh", state.n_spf, cmf_step, eps),
        observables={k: np.asarray(v) for k, v in rec.observables.items()},
        final=final.to_grid(),
        stats={"krylov_steps": integ.stats.steps, "matvecs": integ.stats.matvecs, "ode_evals": integ.ode_evals,
               "n_spf": list(state.n_spf), "final_mctdh": final},
    )
