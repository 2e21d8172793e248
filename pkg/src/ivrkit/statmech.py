"""Microcanonical averages in the zero-order basis and thermalization checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diagnostics import trapezoid_average
from .eigensolver import Mode, enumerate_states
from .errors import DegenerateWindowError, InvalidParameterError

DEFAULT_DELTA_E = 0.025
MODE_KEYS = ("E_cs", "E_oc", "E_theta")


@dataclass(frozen=True)
class MicroWindow:
    center: float
    half_width: float
    members: tuple  # StateLabel, sorted by zero-order energy
    energies: np.ndarray  # E0 of each member

    @property
    def omega(self) -> int:
        return len(self.members)


def _mode_index(which) -> int:
    if isinstance(which, int):
        if which not in (0, 1, 2):
            raise InvalidParameterError(f"mode index {which} outside 0..2")
        return which
    return list(Mode).index(Mode(which))


def build_window(spectra, e_total: float, h_i_longtime: float = 0.0,
                 delta_e: float = DEFAULT_DELTA_E) -> MicroWindow:
    """All zero-order product states with |E0 - (E_total - <H_I>)| <= delta_e (closed window)."""
    if not delta_e > 0:
        raise InvalidParameterError(f"delta_e must be positive, got {delta_e}")
    center = e_total - h_i_longtime
    states = enumerate_states(spectra, center + delta_e)
    members = [(lab, e) for lab, e in states if abs(e - center) <= delta_e]
    if not members:
        raise DegenerateWindowError(
            f"no zero-order state within {delta_e} hartree of {center:.6g}; try a larger delta_e"
        )
    labels, energies = zip(*members)
    return MicroWindow(float(center), float(delta_e), tuple(labels), np.array(energies))


def microcanonical_average(window: MicroWindow, spectra, which_mode) -> float:
    """Equal-weight mean of the chosen mode's zero-order energy over the window."""
    k = _mode_index(which_mode)
    e = spectra[k].energies
    return float(np.mean([e[tuple(lab)[k]] for lab in window.members]))


def tail_average(times, values, tail_fraction: float = 0.25) -> float:
    """Time average over the final ``tail_fraction`` of a series."""
    if not 0 < tail_fraction <= 1:
        raise InvalidParameterError("tail_fraction must lie in (0, 1]")
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    start = t[-1] - tail_fraction * (t[-1] - t[0])
    sel = t >= start - 1e-9 * max(1.0, abs(t[-1]))
    if sel.sum() < 2:
        return float(v[-1])
    return float(trapezoid_average(t[sel] - t[sel][0], v[sel]))


def long_time_coupling(traj, tail_fraction: float = 0.25) -> dict:
    """<H_I> averaged over the tail of a run, and its last sample."""
    e_i = traj.series("E_I")
    return {"mean": tail_average(traj.times, e_i, tail_fraction), "final": float(e_i[-1])}


@dataclass(frozen=True)
class ModeComparison:
    mode: str
    e_timeavg: float
    e_mic: float

    @property
    def abs_dev(self) -> float:
        return abs(self.e_timeavg - self.e_mic)

    @property
    def rel_dev(self) -> float:
        return self.abs_dev / abs(self.e_mic) if self.e_mic else np.inf


@dataclass(frozen=True)
class ThermalizationReport:
    rows: tuple  # ModeComparison per mode (of the first trajectory)
    window: MicroWindow
    spread: dict  # mode -> max - min of long-time averages across trajectories
    per_trajectory: tuple  # per trajectory: dict mode -> long-time average

    def row(self, mode) -> ModeComparison:
        return self.rows[_mode_index(mode)]


def thermalization_report(trajs, window: MicroWindow, spectra, tail_fraction: float = 0.25) -> ThermalizationReport:
    """Long-time mode energies against microcanonical averages.

    ``trajs`` is one trajectory or a sequence of them; the spread across
    trajectories measures mode specificity.
    """
    if not isinstance(trajs, (list, tuple)):
        trajs = [trajs]
    per = []
    for tr in trajs:
        per.append({m.value: tail_average(tr.times, tr.series(key), tail_fraction) for m, key in zip(Mode, MODE_KEYS)})
    rows = tuple(
        ModeComparison(m.value, per[0][m.value], microcanonical_average(window, spectra, m)) for m in Mode
    )
    spread = {m.value: max(p[m.value] for p in per) - min(p[m.value] for p in per) for m in Mode}
    return ThermalizationReport(rows, window, spread, tuple(per))
