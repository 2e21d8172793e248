"""Observables computed from wavefunctions and trajectories."""

from __future__ import annotations

import csv
import enum
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .eigensolver import StateLabel
from .errors import InsufficientDataError, InvalidParameterError, InvalidStateError
from .hamiltonian import ZeroOrderSet
from .propagator import GridWavefunction, renormalized_view
from .units import AU_TIME_FS, KB_HARTREE

ENERGY_KEYS = ("E_cs", "E_oc", "E_theta", "E_I", "E_total")
ENTROPY_KEYS = ("S_cs", "S_oc", "S_theta")


class CoverageWarning(UserWarning):
    pass


def _amps(psi):
    return psi.amplitudes if isinstance(psi, GridWavefunction) else np.asarray(psi)


def _along(mat, psi, axis):
    return np.moveaxis(np.tensordot(mat, psi, axes=(1, axis)), 0, axis)


# ---------------------------------------------------------------- energies

def mode_energies(psi, zero_order: ZeroOrderSet) -> dict:
    """<H0_cs>, <H0_oc>, <H0_theta>, <H_I> and <H>, each divided by the norm squared."""
    a = _amps(psi)
    n2 = np.vdot(a, a).real
    out = {}
    for key, mat, axis in zip(ENERGY_KEYS[:3], zero_order.matrices, range(3)):
        out[key] = np.vdot(a, _along(mat, a, axis)).real / n2
    out["E_I"] = zero_order.h_I.expectation(a).real / n2
    out["E_total"] = zero_order.full.expectation(a).real / n2
    return out


def sum_rule_residual(energies: dict) -> float:
    return abs(energies["E_cs"] + energies["E_oc"] + energies["E_theta"] + energies["E_I"] - energies["E_total"])


# ---------------------------------------------------------- populations

def zero_order_coefficients(psi, spectra) -> np.ndarray:
    """c_nml = <n m l|psi> on the retained zero-order product basis."""
    c = _amps(psi)
    for axis, s in enumerate(spectra):
        c = _along(s.vectors.T, c, axis)
    return c


def product_populations(psi, spectra, labels) -> dict:
    """|<n m l|psi>|^2 for each requested label."""
    a = _amps(psi)
    out = {}
    for lab in labels:
        n, m, l = lab
        for q, s in zip((n, m, l), spectra):
            if not 0 <= q < len(s):
                raise InvalidParameterError(
                    f"label {tuple(lab)} outside the {len(s)} retained {s.mode.value} states "
                    "(a finer grid retains more bound states)"
                )
        v = np.tensordot(spectra[0].vectors[:, n], a, axes=(0, 0))
        v = spectra[1].vectors[:, m] @ v
        out[StateLabel(n, m, l)] = float(abs(spectra[2].vectors[:, l] @ v) ** 2)
    return out


def trapezoid_average(times, values, t_end=None) -> np.ndarray:
    """(1/T) integral_0^T of a sampled series, trapezoid rule on the sample grid."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values)
    if t_end is None:
        t_end = times[-1]
    sel = times <= t_end * (1 + 1e-12)
    t, v = times[sel], values[sel]
    if t.size < 2 or not np.isclose(t[-1], t_end, rtol=1e-9, atol=1e-12):
        raise InvalidParameterError(f"averaging window {t_end} fs is not covered by the samples")
    span = t[-1] - t[0]
    return np.trapezoid(v, t, axis=0) / span


class RunningAverage:
    """Streaming trapezoid accumulator for time averages of arrays."""

    def __init__(self):
        self.integral = None
        self.t0 = None
        self.t_last = None
        self.last = None

    def add(self, t, value):
        value = np.asarray(value, dtype=float)
        if self.t_last is None:
            self.t0 = t
            self.integral = np.zeros_like(value)
        else:
            if t <= self.t_last:
                raise InvalidParameterError("samples must arrive in increasing time order")
            self.integral = self.integral + 0.5 * (t - self.t_last) * (value + self.last)
        self.t_last, self.last = t, value

    @property
    def mean(self):
        if self.t_last is None or self.t_last == self.t0:
            raise InsufficientDataError("need at least two samples for a time average")
        return self.integral / (self.t_last - self.t0)


def sparse_populations(table: np.ndarray, prune: float = 1e-8) -> dict:
    idx = np.argwhere(table >= prune)
    return {StateLabel(*map(int, i)): float(table[tuple(i)]) for i in idx}


def time_average_populations(traj, spectra, labels=None, t_avg: float | None = None, prune: float = 1e-8) -> dict:
    """Trapezoid time average of zero-order populations over [0, t_avg] from stored snapshots.

    ``labels=None`` averages the full retained QNS table and returns the
    entries above ``prune``.
    """
    snaps = traj.snapshots
    if not snaps:
        raise InsufficientDataError("trajectory holds no snapshots")
    times = np.array([s.time for s in snaps])
    t_avg = times[-1] if t_avg is None else t_avg
    if t_avg > times[-1] * (1 + 1e-12):
        raise InvalidParameterError(f"t_avg = {t_avg} fs exceeds the trajectory length {times[-1]} fs")
    sel = times <= t_avg * (1 + 1e-12)
    if labels is None:
        vals = [np.abs(zero_order_coefficients(s, spectra)) ** 2 for s, k in zip(snaps, sel) if k]
        return sparse_populations(trapezoid_average(times[sel], np.array(vals), t_avg), prune)
    labels = [StateLabel(*lab) for lab in labels]
    vals = [[product_populations(s, spectra, labels)[lab] for lab in labels] for s, k in zip(snaps, sel) if k]
    avg = trapezoid_average(times[sel], np.array(vals), t_avg)
    return dict(zip(labels, map(float, avg)))


@dataclass(frozen=True)
class ModePopulations:
    cs: np.ndarray
    oc: np.ndarray
    theta: np.ndarray
    spillover: tuple
    warning: str | None = None

    def __iter__(self):
        return iter((self.cs, self.oc, self.theta))


def mode_populations(psi, spectra, spill_tol: float = 1e-3, renormalize: bool = True) -> ModePopulations:
    """p_n = <n|rho_mode|n> for each mode and the population missing from the retained states."""
    a = _amps(psi)
    n2 = np.vdot(a, a).real
    if renormalize:
        a = a / np.sqrt(n2)
        n2 = 1.0
    dists, spill = [], []
    for axis, s in enumerate(spectra):
        proj = _along(s.vectors.T, a, axis)
        p = (np.abs(proj) ** 2).sum(axis=tuple(i for i in range(3) if i != axis))
        dists.append(p)
        spill.append(float(n2 - p.sum()))
    msg = None
    worst = max(spill)
    if worst > spill_tol:
        mode = spectra[int(np.argmax(spill))].mode.value
        msg = f"{worst:.3e} of the population lies outside the retained {mode} states"
        warnings.warn(msg, CoverageWarning, stacklevel=2)
    return ModePopulations(*dists, tuple(spill), msg)


# -------------------------------------------------------------- entropy

def reduced_density_matrix(psi, mode: int) -> np.ndarray:
    a = _amps(psi)
    unfold = np.moveaxis(a, mode, 0).reshape(a.shape[mode], -1)
    rho = unfold @ unfold.conj().T
    return rho / np.trace(rho).real


def von_neumann(p) -> float:
    p = np.clip(np.asarray(p, dtype=float), 0.0, None)
    p = p / p.sum()
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def entanglement_entropy(psi) -> dict:
    """Von Neumann entropy of each mode's reduced density matrix."""
    a = _amps(psi)
    out = {}
    for key, mode in zip(ENTROPY_KEYS, range(3)):
        unfold = np.moveaxis(a, mode, 0).reshape(a.shape[mode], -1)
        s = np.linalg.svd(unfold, compute_uv=False)
        out[key] = von_neumann(s**2)
    return out


# ------------------------------------------------------ spectral function

class Window(enum.Enum):
    TRIANGLE = "triangle"
    COS2 = "cos2"


def window_values(t, t_max, kind: Window | str = Window.TRIANGLE):
    kind = Window(kind)
    x = np.abs(np.asarray(t, dtype=float)) / t_max
    if kind is Window.TRIANGLE:
        return np.clip(1.0 - x, 0.0, None)
    return np.where(x <= 1.0, np.cos(0.5 * np.pi * x) ** 2, 0.0)


@dataclass(frozen=True)
class SpectralFunction:
    energies: np.ndarray
    sigma: np.ndarray
    window: Window
    t_used: float  # fs

    def integral(self, lo=None, hi=None) -> float:
        sel = np.ones(self.energies.size, dtype=bool)
        if lo is not None:
            sel &= self.energies >= lo
        if hi is not None:
            sel &= self.energies <= hi
        return float(np.trapezoid(self.sigma[sel], self.energies[sel]))

    def centroid(self) -> float:
        return float(np.trapezoid(self.energies * self.sigma, self.energies) / self.integral())


def default_energy_grid(t_max_fs: float, e_max: float) -> np.ndarray:
    """Uniform grid on [0, e_max] with spacing at most pi/(4T)."""
    t_au = t_max_fs / AU_TIME_FS
    de = np.pi / (4.0 * t_au)
    n = int(np.ceil(e_max / de)) + 1
    return np.linspace(0.0, e_max, n)


def spectral_function(times, autocorr=None, e_grid=None, window: Window | str = Window.TRIANGLE,
                      t_max: float | None = None, e_max: float = 0.26) -> SpectralFunction:
    """sigma(E) = (1/2pi) int_{-T}^{T} W(t) C(t) exp(iEt) dt using C(-t) = C(t)*.

    ``times`` (fs) may be a TrajectoryRecord, in which case its
    autocorrelation is used.  With this normalisation int sigma dE = C(0).
    """
    if autocorr is None:
        times, autocorr = times.times, times.autocorrelation
    t = np.asarray(times, dtype=float)
    c = np.asarray(autocorr, dtype=complex)
    if t.size < 2 or t.shape != c.shape:
        raise InvalidParameterError("need matching time and autocorrelation samples")
    dt = np.diff(t)
    if abs(t[0]) > 1e-12 or np.abs(dt - dt[0]).max() > 1e-9 * dt[0]:
        raise InvalidParameterError("autocorrelation must be sampled uniformly from t = 0")
    t_max = t[-1] if t_max is None else t_max
    sel = t <= t_max * (1 + 1e-12)
    t, c = t[sel], c[sel]
    if e_grid is None:
        e_grid = default_energy_grid(t_max, e_max)
    e_grid = np.asarray(e_grid, dtype=float)
    t_au = t / AU_TIME_FS
    w = window_values(t, t_max, window) * c
    # trapezoid weights on [0, T]; the negative half is the complex conjugate
    quad = np.full(t.size, t_au[1] - t_au[0])
    quad[0] *= 0.5
    quad[-1] *= 0.5
    phase = np.exp(1j * np.outer(e_grid, t_au))
    sigma = (phase @ (quad * w)).real / np.pi
    return SpectralFunction(e_grid, sigma, Window(window), float(t_max))


# ------------------------------------------------------ dissociation

@dataclass(frozen=True)
class ObservableSeries:
    name: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if len(self.times) != len(self.values):
            raise InvalidParameterError(f"{self.name}: {len(self.times)} times but {len(self.values)} values")


def dissociation_probability(traj) -> ObservableSeries:
    """P_D(t) = 1 - <psi(t)|psi(t)>^2, with norms taken relative to the initial norm."""
    if not traj.cap_active:
        raise InvalidStateError("dissociation probability needs a run with the absorbing potential")
    rel = (np.asarray(traj.norms) / traj.norms[0]) ** 2
    return ObservableSeries("P_D", np.asarray(traj.times), 1.0 - rel**2)


# ---------------------------------------------------------- Boltzmann

@dataclass(frozen=True)
class BoltzmannFit:
    kT: float  # hartree
    temperature: float  # K
    residual: float
    slope: float
    thermal: bool


def boltzmann_fit(populations, energies, min_population: float = 1e-6, slope_tol: float = 1e-8) -> BoltzmannFit:
    """Fit ln p = a - E/kT with weights p over states above ``min_population``."""
    p = np.asarray(populations, dtype=float)
    e = np.asarray(energies, dtype=float)[: p.size]
    use = p > min_population
    if use.sum() < 3:
        raise InsufficientDataError(f"only {int(use.sum())} states above {min_population}; need 3")
    p, e = p[use], e[use]
    y = np.log(p)
    w = p / p.sum()
    e_bar = (w * e).sum()
    y_bar = (w * y).sum()
    slope = (w * (e - e_bar) * (y - y_bar)).sum() / (w * (e - e_bar) ** 2).sum()
    resid = y - (y_bar + slope * (e - e_bar))
    rms = float(np.sqrt(np.mean(resid**2)))
    scale = max(1.0, np.abs(y).max()) / max(np.ptp(e), 1e-300)
    if slope >= -slope_tol * scale:
        return BoltzmannFit(np.inf, np.inf, rms, float(slope), False)
    kT = -1.0 / slope
    return BoltzmannFit(float(kT), float(kT / KB_HARTREE), rms, float(slope), True)


# --------------------------------------------------------------- observers

class EnergyObserver:
    def __init__(self, zero_order: ZeroOrderSet):
        self.zero_order = zero_order

    def __call__(self, psi):
        return mode_energies(psi, self.zero_order)


class EntropyObserver:
    def __call__(self, psi):
        return entanglement_entropy(psi)


class PopulationObserver:
    """Tracks selected product-state populations and the running QNS average."""

    def __init__(self, spectra, labels=(), qns_average: bool = False, renormalize: bool = True):
        self.spectra = spectra
        self.labels = [StateLabel(*lab) for lab in labels]
        self.renormalize = renormalize
        self.qns = RunningAverage() if qns_average else None

    def __call__(self, psi):
        if self.renormalize:
            psi = renormalized_view(psi)
        out = {}
        if self.labels:
            pops = product_populations(psi, self.spectra, self.labels)
            out = {f"P[{lab}]": pops[lab] for lab in self.labels}
        if self.qns is not None:
            self.qns.add(psi.time, np.abs(zero_order_coefficients(psi, self.spectra)) ** 2)
        return out


# ---------------------------------------------------------------- CSV output

def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return "%.15g" % x
    return str(x)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([_fmt(v) for v in row])
    return path


def write_energies(path, times, series: dict):
    rows = zip(times, *(series[k] for k in ENERGY_KEYS))
    return write_csv(path, ("t_fs",) + ENERGY_KEYS, rows)


def write_entropy(path, times, series: dict):
    return write_csv(path, ("t_fs",) + ENTROPY_KEYS, zip(times, *(series[k] for k in ENTROPY_KEYS)))


def write_populations(path, times, series: dict, labels):
    rows = []
    for i, t in enumerate(times):
        for lab in labels:
            rows.append((t, str(lab), series[f"P[{lab}]"][i]))
    return write_csv(path, ("t_fs", "label", "P"), rows)


def write_pd(path, pd: ObservableSeries):
    return write_csv(path, ("t_fs", "P_D"), zip(pd.times, pd.values))


def write_spectrum(path, spec: SpectralFunction):
    return write_csv(path, ("E_hartree", "sigma"), zip(spec.energies, spec.sigma))


def write_qns(path, table: dict):
    rows = [(lab.n, lab.m, lab.l, p) for lab, p in sorted(table.items())]
    return write_csv(path, ("n", "m", "l", "P_avg"), rows)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        return header, [row for row in rd]
