"""Wavefunctions, trajectories and the full-grid Krylov propagator."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateStateError, InvalidParameterError, PropagationError
from .hamiltonian import SopOperator
from .krylov import KrylovStats, krylov_step
from .units import AU_TIME_FS


@dataclass(eq=False)
class GridWavefunction:
    amplitudes: np.ndarray  # (n_cs, n_oc, n_theta), sqrt-weights absorbed
    time: float = 0.0  # fs

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.ndim != 3:
            raise InvalidParameterError("grid wavefunction must be a rank-3 tensor")
        if self.time < 0:
            raise InvalidParameterError("time must be non-negative")

    @property
    def shape(self):
        return self.amplitudes.shape

    @property
    def norm_sq(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    @property
    def norm(self) -> float:
        return float(np.sqrt(self.norm_sq))


def renormalized_view(psi: GridWavefunction) -> GridWavefunction:
    """Unit-norm copy used for averages after absorption."""
    nrm = psi.norm
    if nrm <= 1e-12:
        raise DegenerateStateError(f"wavefunction norm {nrm:.3e} is too small to renormalise")
    if abs(nrm - 1.0) <= 4 * np.finfo(float).eps:
        return GridWavefunction(psi.amplitudes.copy(), psi.time)
    return GridWavefunction(psi.amplitudes / nrm, psi.time)


def make_initial_state(label, spectra) -> GridWavefunction:
    """Zero-order product state |n m l> on the grid."""
    n, m, l = label
    for q, s in zip((n, m, l), spectra):
        if not 0 <= q < len(s):
            raise InvalidParameterError(f"label {tuple(label)} exceeds the {s.mode.value} spectrum ({len(s)} states)")
    a, b, c = (s.vectors[:, q] for q, s in zip((n, m, l), spectra))
    psi = np.einsum("i,j,k->ijk", a, b, c).astype(complex)
    psi /= np.linalg.norm(psi)
    return GridWavefunction(psi, 0.0)


@dataclass(eq=False)
class TrajectoryRecord:
    """Output of a propagation: time grid, norms, autocorrelation, optional snapshots.

    ``observables`` collects whatever the observer callbacks returned at each
    output time; ``snapshots`` holds every ``store_every``-th wavefunction.
    """

    times: np.ndarray
    norms: np.ndarray
    autocorrelation: np.ndarray
    snapshots: list
    cap_active: bool
    fingerprint: str = ""
    observables: dict = field(default_factory=dict)
    final: GridWavefunction | None = None
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise InvalidParameterError("trajectory times must be strictly increasing")

    def series(self, name: str) -> np.ndarray:
        return np.asarray(self.observables[name])

    @property
    def snapshot_times(self):
        return np.array([s.time for s in self.snapshots])


def operator_fingerprint(h: SopOperator, psi0: np.ndarray, *extra) -> str:
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(psi0).tobytes())
    for term in h.terms:
        digest.update(term.label.encode())
        digest.update(np.complex128(term.coeff).tobytes())
        for f in term.factors:
            digest.update(b"I" if f is None else np.ascontiguousarray(f).tobytes())
    for item in extra:
        digest.update(repr(item).encode())
    return digest.hexdigest()[:16]


def output_times(dt_out: float, t_final: float) -> np.ndarray:
    if not dt_out > 0 or not t_final >= dt_out:
        raise InvalidParameterError(f"need t_final >= dt_out > 0, got dt_out={dt_out}, t_final={t_final}")
    n = int(np.floor(t_final / dt_out + 1e-9))
    return dt_out * np.arange(n + 1)


class _Recorder:
    def __init__(self, psi0, times, observers, store_every):
        self.psi0 = psi0.ravel().conj()
        self.times = times
        self.observers = list(observers or [])
        self.store_every = store_every
        self.norms = np.empty(len(times))
        self.autocorr = np.empty(len(times), dtype=complex)
        self.snapshots = []
        self.observables = {}

    def __call__(self, k, amplitudes):
        t = self.times[k]
        nrm2 = np.vdot(amplitudes, amplitudes).real
        if not np.isfinite(nrm2):
            raise PropagationError("wavefunction contains NaN or Inf", time_fs=t)
        self.norms[k] = np.sqrt(nrm2)
        self.autocorr[k] = self.psi0 @ amplitudes.ravel()
        psi = GridWavefunction(amplitudes, t)
        if self.store_every and (k % self.store_every == 0 or k == len(self.times) - 1):
            self.snapshots.append(GridWavefunction(amplitudes.copy(), t))
        for obs in self.observers:
            for name, value in obs(psi).items():
                self.observables.setdefault(name, []).append(value)


def propagate_exact(psi0: GridWavefunction, h: SopOperator, dt_out: float = 0.25, t_final: float = 800.0,
                    observers=None, store_every: int = 1, tol: float = 1e-12, max_krylov: int = 40) -> TrajectoryRecord:
    """Numerically exact propagation on the full grid.

    Short-iterative Lanczos when ``h`` is Hermitian, Arnoldi otherwise (CAP
    present).  Times are in fs; observers are called with the wavefunction at
    every output time and return dicts of scalars.
    """
    if psi0.shape != tuple(h.shape):
        raise InvalidParameterError(f"initial state shape {psi0.shape} != grid {h.shape}")
    times = output_times(dt_out, t_final)
    rec = _Recorder(psi0.amplitudes, times, observers, store_every)
    stats = KrylovStats()
    psi = psi0.amplitudes.copy()
    rec(0, psi)
    dt_au = dt_out / AU_TIME_FS
    for k in range(1, len(times)):
        done = 0.0
        while dt_au - done > 1e-12 * dt_au:
            try:
                psi, tau = krylov_step(h.apply, psi, dt_au - done, h.hermitian, tol, max_krylov, stats=stats)
            except PropagationError as exc:
                raise PropagationError(str(exc), time_fs=times[k - 1] + done * AU_TIME_FS) from exc
            done += tau
        rec(k, psi)
    return TrajectoryRecord(
        times=times,
        norms=rec.norms,
        autocorrelation=rec.autocorr,
        snapshots=rec.snapshots,
        cap_active=not h.hermitian,
        fingerprint=operator_fingerprint(h, psi0.amplitudes, dt_out, t_final, "exact"),
        observables={k: np.asarray(v) for k, v in rec.observables.items()},
        final=GridWavefunction(psi, times[-1]),
        stats={"krylov_steps": stats.steps, "matvecs": stats.matvecs, "max_step_error": stats.max_error},
    )
