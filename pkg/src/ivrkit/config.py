"""Run configuration: flat ``key = value`` text with dotted sections."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .eigensolver import StateLabel
from .errors import ConfigError


def _bool(text):
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _int(text):
    value = float(text)
    if value != int(value):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def _float(text):
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"expected a finite number, got {text!r}")
    return value


def _triple(text):
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 3:
        raise ValueError(f"expected three integers, got {text!r}")
    return tuple(_int(p) for p in parts)


def _pair(text):
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 2:
        raise ValueError(f"expected two numbers, got {text!r}")
    return tuple(_float(p) for p in parts)


def _label(text):
    return StateLabel.parse(text)


def _labels(text):
    return tuple(StateLabel.parse(p) for p in text.split(";") if p.strip())


def _str(text):
    return text.strip()


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, StateLabel):
        return str(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], StateLabel):
            return "; ".join(str(v) for v in value)
        return ", ".join(_fmt(v) for v in value)
    return str(value)


# key -> (attribute, parser)
SCHEMA = {
    "pes_path": ("pes_path", _str),
    "grid.n_cs": ("n_cs", _int),
    "grid.n_oc": ("n_oc", _int),
    "grid.n_theta": ("n_theta", _int),
    "grid.cs_range": ("cs_range", _pair),
    "grid.oc_range": ("oc_range", _pair),
    "kinetic.coupled": ("coupled", _bool),
    "initial.label": ("label", _label),
    "propagator.backend": ("backend", _str),
    "propagator.tol": ("tol", _float),
    "mctdh.n_spf": ("n_spf", _triple),
    "mctdh.cmf_step": ("cmf_step", _float),
    "mctdh.eps": ("eps", _float),
    "dt_out": ("dt_out", _float),
    "t_final": ("t_final", _float),
    "cap.enabled": ("cap_enabled", _bool),
    "cap.eta": ("cap_eta", _float),
    "cap.r_abs": ("cap_r_abs", _float),
    "eigen.e_max": ("e_max", _float),
    "eigen.margin": ("margin", _float),
    "dos.bin_width": ("bin_width", _float),
    "diagnostics.energies": ("do_energies", _bool),
    "diagnostics.entropy": ("do_entropy", _bool),
    "diagnostics.populations": ("populations", _labels),
    "diagnostics.qns_average": ("do_qns", _bool),
    "diagnostics.spectrum": ("do_spectrum", _bool),
    "diagnostics.micro": ("do_micro", _bool),
    "spectrum.window": ("window", _str),
    "spectrum.e_max": ("spectrum_e_max", _float),
    "statmech.delta_e": ("delta_e", _float),
    "statmech.tail_fraction": ("tail_fraction", _float),
    "checkpoint.every": ("checkpoint_every", _int),
    "output.dir": ("out_dir", _str),
}
BACKEND_KEYS = {"mctdh": ("mctdh.n_spf", "mctdh.cmf_step", "mctdh.eps")}


@dataclass(frozen=True)
class RunConfig:
    pes_path: str = ""  # empty: bundled synthetic surface
    n_cs: int = 64
    n_oc: int = 32
    n_theta: int = 32
    cs_range: tuple = (-1.2, 6.0)
    oc_range: tuple = (-0.9, 2.5)
    coupled: bool = True
    label: StateLabel = StateLabel(0, 0, 0)
    backend: str = "exact"
    tol: float = 1e-12
    n_spf: tuple | None = None
    cmf_step: float | None = None
    eps: float | None = None
    dt_out: float = 0.25
    t_final: float = 800.0
    cap_enabled: bool = True
    cap_eta: float = 0.075
    cap_r_abs: float = 8.0
    e_max: float | None = None  # default: the surface's dissociation threshold
    margin: float = 0.02
    bin_width: float = 0.01
    do_energies: bool = True
    do_entropy: bool = True
    populations: tuple = ()
    do_qns: bool = True
    do_spectrum: bool = True
    do_micro: bool = True
    window: str = "triangle"
    spectrum_e_max: float | None = None
    delta_e: float = 0.025
    tail_fraction: float = 0.25
    checkpoint_every: int = 0
    out_dir: str = "out"

    def __post_init__(self):
        validate(self)

    def resolved_pes_path(self, base: Path | None = None) -> Path:
        from .pes import synthetic_pes_path

        if not self.pes_path:
            return synthetic_pes_path()
        path = Path(self.pes_path)
        if not path.is_absolute() and base is not None:
            path = base / path
        return path


_ATTR_TO_KEY = {attr: key for key, (attr, _) in SCHEMA.items()}


def validate(cfg: RunConfig):
    def positive(attr):
        value = getattr(cfg, attr)
        if value is not None and not value > 0:
            raise ConfigError(f"must be positive, got {value!r}", key=_ATTR_TO_KEY[attr])

    for attr in ("n_cs", "n_oc", "n_theta", "tol", "dt_out", "t_final", "cap_eta", "bin_width", "delta_e",
                 "cmf_step", "eps", "e_max", "spectrum_e_max"):
        positive(attr)
    if cfg.margin < 0:
        raise ConfigError("must be non-negative", key="eigen.margin")
    if cfg.checkpoint_every < 0:
        raise ConfigError("must be non-negative", key="checkpoint.every")
    if cfg.t_final < cfg.dt_out:
        raise ConfigError(f"t_final {cfg.t_final} fs is shorter than dt_out {cfg.dt_out} fs", key="t_final")
    if not 0 < cfg.tail_fraction <= 1:
        raise ConfigError("must lie in (0, 1]", key="statmech.tail_fraction")
    for key, attr in (("grid.cs_range", "cs_range"), ("grid.oc_range", "oc_range")):
        lo, hi = getattr(cfg, attr)
        if not lo < 0 < hi:
            raise ConfigError(f"offsets must bracket equilibrium, got ({lo}, {hi})", key=key)
    if cfg.window not in ("triangle", "cos2"):
        raise ConfigError(f"unknown window {cfg.window!r} (triangle or cos2)", key="spectrum.window")
    if cfg.backend not in ("exact", "mctdh"):
        raise ConfigError(f"unknown backend {cfg.backend!r} (exact or mctdh)", key="propagator.backend")
    if cfg.backend == "mctdh":
        if cfg.n_spf is None:
            raise ConfigError("required for the mctdh backend", key="mctdh.n_spf")
        if min(cfg.n_spf) < 1:
            raise ConfigError("SPF counts must be positive", key="mctdh.n_spf")
    else:
        for attr in ("n_spf", "cmf_step", "eps"):
            if getattr(cfg, attr) is not None:
                raise ConfigError("only valid with propagator.backend = mctdh", key=_ATTR_TO_KEY[attr])


def parse_config_text(text: str) -> RunConfig:
    values = {}
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'", key=line)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key", key=key)
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key (first on line {seen[key]})", key=key)
        seen[key] = lineno
        attr, parser = SCHEMA[key]
        try:
            values[attr] = parser(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"line {lineno}: {exc}", key=key) from None
    try:
        return RunConfig(**values)
    except ConfigError:
        raise
    except Exception as exc:  # pragma: no cover - defensive
        raise ConfigError(str(exc)) from exc


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}", key="config") from None
    return parse_config_text(text)


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text form; optional fields left unset are omitted."""
    lines = []
    for key, (attr, _) in SCHEMA.items():
        value = getattr(cfg, attr)
        if value is None or (key == "diagnostics.populations" and not value):
            continue
        lines.append(f"{key} = {_fmt(value)}")
    return "\n".join(lines) + "\n"


def with_overrides(cfg: RunConfig, **changes) -> RunConfig:
    return replace(cfg, **changes)


def config_fields():
    return [f.name for f in fields(RunConfig)]
