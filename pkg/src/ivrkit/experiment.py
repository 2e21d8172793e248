"""Run orchestration: build, solve, propagate, analyse, write outputs and a manifest."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import __version__
from .checkpoint import read_checkpoint, write_checkpoint
from .config import RunConfig, serialize_config
from .diagnostics import (
    ENERGY_KEYS,
    ENTROPY_KEYS,
    EnergyObserver,
    EntropyObserver,
    PopulationObserver,
    dissociation_probability,
    entanglement_entropy,
    mode_energies,
    mode_populations,
    read_csv,
    sparse_populations,
    spectral_function,
    write_csv,
    write_energies,
    write_entropy,
    write_pd,
    write_populations,
    write_qns,
    write_spectrum,
)
from .eigensolver import dos_histogram, enumerate_states, retain_states, solve_zero_order
from .errors import ConfigError, IvrError
from .grid import default_bases
from .hamiltonian import build_cap, build_full_h, build_kinetic, build_zero_order, with_cap
from .pes import load_pes
from .propagator import make_initial_state, propagate_exact
from .statmech import build_window, tail_average, thermalization_report

MANIFEST = "manifest.json"


@dataclass
class System:
    """Everything derived from a config before propagation."""

    config: RunConfig
    model: object
    bases: tuple
    full_h: object
    zero_order: object
    spectra: tuple  # full 1-D spectra on the grid
    retained: tuple  # bound, CAP-free subset used for analysis

    @property
    def threshold(self) -> float:
        return self.model.dissociation_threshold or self.model.dissociation_energy()

    @property
    def e_max(self) -> float:
        return self.config.e_max if self.config.e_max is not None else self.threshold

    def propagation_h(self):
        if not self.config.cap_enabled:
            return self.full_h
        return with_cap(self.full_h, build_cap(self.config.cap_eta, self.config.cap_r_abs, self.bases[0]))


def build_system(cfg: RunConfig, base_dir: Path | None = None) -> System:
    path = cfg.resolved_pes_path(base_dir)
    if not path.exists():
        raise ConfigError(f"PES file {path} not found", key="pes_path")
    model = load_pes(path)
    bases = default_bases(model, cfg.n_cs, cfg.n_oc, cfg.n_theta, cfg.cs_range, cfg.oc_range)
    full_h = build_full_h(build_kinetic(bases, model, coupled=cfg.coupled), model, bases)
    zero_order = build_zero_order(model, bases, full_h)
    spectra = solve_zero_order(zero_order)
    e_lim = cfg.e_max if cfg.e_max is not None else (model.dissociation_threshold or model.dissociation_energy())
    r_abs = cfg.cap_r_abs if cfg.cap_enabled else None
    retained = tuple(
        retain_states(s, e_lim, cfg.margin, grid_points=b.points if k == 0 else None, r_abs=r_abs if k == 0 else None)
        for k, (s, b) in enumerate(zip(spectra, bases))
    )
    return System(cfg, model, bases, full_h, zero_order, spectra, retained)


@dataclass
class RunManifest:
    config: str
    version: str
    started: str
    finished: str = ""
    status: str = "RUNNING"
    files: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    error: str = ""

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))

    def verify(self, out_dir) -> bool:
        return all(sha256(Path(out_dir) / name) == digest for name, digest in self.files.items())


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _stamp():
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


class _Run:
    """Collects written files and always leaves a manifest behind."""

    def __init__(self, cfg, out_dir, command="propagate"):
        self.name = MANIFEST if command == "propagate" else f"manifest_{command}.json"
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(serialize_config(cfg), __version__, _stamp())

    def add(self, path):
        path = Path(path)
        self.manifest.files[path.name] = sha256(path)
        return path

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.manifest.finished = _stamp()
        if exc is None:
            self.manifest.status = "OK"
        else:
            self.manifest.status = "FAILED"
            self.manifest.error = f"{type(exc).__name__}: {exc}"
        (self.out / self.name).write_text(self.manifest.to_json() + "\n", encoding="utf-8")
        return False


def _out_dir(cfg, out_dir):
    return Path(out_dir if out_dir is not None else cfg.out_dir)


# ------------------------------------------------------------------ subcommands

def run_eigen1d(cfg: RunConfig, out_dir=None, base_dir=None) -> RunManifest:
    with _Run(cfg, _out_dir(cfg, out_dir), "eigen1d") as run:
        sysm = build_system(cfg, base_dir)
        for s in sysm.retained:
            rows = [(i, e, e / sysm.threshold) for i, e in enumerate(s.energies)]
            run.add(write_csv(run.out / f"eigen_{s.mode.value}.csv",
                              ("index", "energy_hartree", "energy_fraction_of_threshold"), rows))
        run.manifest.summary = {f"n_{s.mode.value}": len(s) for s in sysm.retained}
    return run.manifest


def run_dos(cfg: RunConfig, out_dir=None, base_dir=None) -> RunManifest:
    with _Run(cfg, _out_dir(cfg, out_dir), "dos") as run:
        sysm = build_system(cfg, base_dir)
        states = enumerate_states(sysm.retained, sysm.e_max)
        hist = dos_histogram(states, cfg.bin_width)
        rows = zip(hist.edges[:-1], hist.edges[1:], hist.counts)
        run.add(write_csv(run.out / "dos.csv", ("E_lo", "E_hi", "count"), rows))
        run.manifest.summary = {"n_states": len(states), "e_max": sysm.e_max}
    return run.manifest


def _checkpoint_observer(out, every, dt_out, written):
    def observe(psi):
        k = int(round(psi.time / dt_out))
        if every and k % every == 0:
            written.append(write_checkpoint(out / f"psi_{k:06d}.ivrw", psi))
        return {}

    return observe


def run_experiment(cfg: RunConfig, out_dir=None, base_dir=None) -> RunManifest:
    """Full pipeline: build, eigen, initial state, propagation, diagnostics, statmech."""
    with _Run(cfg, _out_dir(cfg, out_dir)) as run:
        sysm = build_system(cfg, base_dir)
        psi0 = make_initial_state(cfg.label, sysm.spectra)
        h = sysm.propagation_h()
        observers = []
        if cfg.do_energies or cfg.do_micro:
            observers.append(EnergyObserver(sysm.zero_order))
        if cfg.do_entropy:
            observers.append(EntropyObserver())
        pops = PopulationObserver(sysm.retained, cfg.populations, qns_average=cfg.do_qns)
        if cfg.populations or cfg.do_qns:
            observers.append(pops)
        checkpoints = []
        if cfg.checkpoint_every:
            observers.append(_checkpoint_observer(run.out, cfg.checkpoint_every, cfg.dt_out, checkpoints))

        if cfg.backend == "exact":
            traj = propagate_exact(psi0, h, cfg.dt_out, cfg.t_final, observers, store_every=0, tol=cfg.tol)
        else:
            from .mctdh import propagate_mctdh

            traj = propagate_mctdh(psi0, h, cfg.n_spf, cfg.dt_out, cfg.t_final,
                                   spf_guess=[s.vectors for s in sysm.spectra], cmf_step=cfg.cmf_step,
                                   eps=cfg.eps if cfg.eps is not None else 1e-8, observers=observers,
                                   store_every=0, tol=cfg.tol)
        for path in checkpoints:
            run.add(path)
        t = traj.times
        summary = {"fingerprint": traj.fingerprint, "final_norm": float(traj.norms[-1]),
                   "n_outputs": int(t.size)}
        c = traj.autocorrelation
        run.add(write_csv(run.out / "autocorr.csv", ("t_fs", "re", "im"), zip(t, c.real, c.imag)))
        if cfg.do_energies or cfg.do_micro:
            series = {k: traj.series(k) for k in ENERGY_KEYS}
            run.add(write_energies(run.out / "energies.csv", t, series))
            resid = np.abs(sum(series[k] for k in ENERGY_KEYS[:4]) - series["E_total"])
            summary["max_sum_rule_residual"] = float(resid.max())
            summary["energy_drift"] = float(np.abs(series["E_total"] - series["E_total"][0]).max())
        if cfg.do_entropy:
            run.add(write_entropy(run.out / "entropy.csv", t, {k: traj.series(k) for k in ENTROPY_KEYS}))
        if cfg.populations:
            series = {f"P[{lab}]": traj.series(f"P[{lab}]") for lab in cfg.populations}
            run.add(write_populations(run.out / "populations.csv", t, series, cfg.populations))
        if cfg.do_qns:
            run.add(write_qns(run.out / "qns_avg.csv", sparse_populations(pops.qns.mean)))
        if traj.cap_active:
            pd = dissociation_probability(traj)
            run.add(write_pd(run.out / "pd.csv", pd))
            summary["final_P_D"] = float(pd.values[-1])
        if cfg.do_spectrum:
            run.add(write_spectrum(run.out / "spectrum.csv", _stored_spectrum(run.out, cfg, sysm)))
        if cfg.do_micro:
            # from the stored CSV so that a later 'micro' run reproduces it byte for byte
            cols = _read_columns(run.out / "energies.csv")
            run.add(_write_micro(run.out, sysm, cols["t_fs"].astype(float),
                                 {k: cols[k].astype(float) for k in ENERGY_KEYS}))
        run.manifest.summary = summary
    return run.manifest


def _write_micro(out, sysm, times, series):
    cfg = sysm.config
    h_i = tail_average(times, series["E_I"], cfg.tail_fraction)
    window = build_window(sysm.retained, float(series["E_total"][0]), h_i, cfg.delta_e)

    tr = SimpleNamespace(times=times, series=series.__getitem__)
    report = thermalization_report(tr, window, sysm.retained, cfg.tail_fraction)
    rows = [(r.mode, r.e_timeavg, r.e_mic, r.abs_dev, r.rel_dev, window.omega, window.half_width, window.center)
            for r in report.rows]
    return write_csv(out / "micro.csv",
                     ("mode", "E_timeavg", "E_mic", "abs_dev", "rel_dev", "omega", "delta_E", "center"), rows)


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{path} not found; run '{what}' first", key="output.dir")
    return path


def run_analyze(cfg: RunConfig, out_dir=None, base_dir=None) -> RunManifest:
    """Recompute energies, entropies and coverage from stored checkpoints."""
    out = _out_dir(cfg, out_dir)
    files = sorted(out.glob("psi_*.ivrw"))
    if not files:
        raise ConfigError(f"no checkpoints in {out}; set checkpoint.every and run 'propagate'", key="checkpoint.every")
    with _Run(cfg, out, "analyze") as run:
        sysm = build_system(cfg, base_dir)
        rows = []
        for f in files:
            psi = read_checkpoint(f)
            e = mode_energies(psi, sysm.zero_order)
            s = entanglement_entropy(psi)
            spill = mode_populations(psi, sysm.retained, spill_tol=np.inf).spillover
            rows.append((psi.time, psi.norm_sq, *(e[k] for k in ENERGY_KEYS), *(s[k] for k in ENTROPY_KEYS),
                         max(spill)))
        header = ("t_fs", "norm_sq") + ENERGY_KEYS + ENTROPY_KEYS + ("spillover",)
        run.add(write_csv(run.out / "analysis.csv", header, rows))
    return run.manifest


def _read_columns(path):
    header, rows = read_csv(path)
    cols = {h: np.array([r[i] for r in rows]) for i, h in enumerate(header)}
    return cols


def _stored_spectrum(out, cfg, sysm):
    cols = _read_columns(out / "autocorr.csv")
    t = cols["t_fs"].astype(float)
    c = cols["re"].astype(float) + 1j * cols["im"].astype(float)
    return spectral_function(t, c, window=cfg.window, e_max=cfg.spectrum_e_max or 1.2 * sysm.threshold)


def run_spectrum(cfg: RunConfig, out_dir=None, base_dir=None) -> RunManifest:
    out = _out_dir(cfg, out_dir)
    _require(out / "autocorr.csv", "propagate")
    with _Run(cfg, out, "spectrum") as run:
        spec = _stored_spectrum(out, cfg, build_system(cfg, base_dir))
        run.add(write_spectrum(run.out / "spectrum.csv", spec))
        run.manifest.summary = {"integral": spec.integral(), "centroid": spec.centroid()}
    return run.manifest


def run_micro(cfg: RunConfig, out_dir=None, base_dir=None) -> RunManifest:
    out = _out_dir(cfg, out_dir)
    cols = _read_columns(_require(out / "energies.csv", "propagate"))
    with _Run(cfg, out, "micro") as run:
        sysm = build_system(cfg, base_dir)
        series = {k: cols[k].astype(float) for k in ENERGY_KEYS}
        run.add(_write_micro(run.out, sysm, cols["t_fs"].astype(float), series))
    return run.manifest


def run_report(cfg: RunConfig, out_dir=None, base_dir=None) -> RunManifest:
    """Plain-text digest of the outputs present in the run directory."""
    out = _out_dir(cfg, out_dir)
    lines = [f"configuration\n{serialize_config(cfg)}"]
    for name in ("micro.csv", "eigen_cs.csv", "dos.csv"):
        path = out / name
        if path.exists():
            header, rows = read_csv(path)
            lines.append(f"{name}: {len(rows)} rows")
            if name == "micro.csv":
                lines.extend("  " + ", ".join(f"{h}={v}" for h, v in zip(header, row)) for row in rows)
    for name, keys in (("energies.csv", ("E_total",)), ("pd.csv", ("P_D",)), ("entropy.csv", ENTROPY_KEYS)):
        path = out / name
        if path.exists():
            cols = _read_columns(path)
            for k in keys:
                lines.append(f"{name}: final {k} = {cols[k][-1]}")
    spec = out / "spectrum.csv"
    if spec.exists():
        cols = _read_columns(spec)
        e, s = cols["E_hartree"].astype(float), cols["sigma"].astype(float)
        lines.append(f"spectrum.csv: integral = {'%.15g' % np.trapezoid(s, e)}, peak at {'%.15g' % e[np.argmax(s)]} hartree")
    with _Run(cfg, out, "report") as run:
        path = run.out / "report.txt"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        run.add(path)
    return run.manifest


SUBCOMMANDS = {
    "eigen1d": run_eigen1d,
    "dos": run_dos,
    "propagate": run_experiment,
    "analyze": run_analyze,
    "spectrum": run_spectrum,
    "micro": run_micro,
    "report": run_report,
}

__all__ = ["RunManifest", "System", "build_system", "run_experiment", "SUBCOMMANDS", "IvrError"]
