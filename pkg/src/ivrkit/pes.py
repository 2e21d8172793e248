"""Morse-cosine potential energy surface and molecular constants.

The potential is V = sum_ijk f_ijk y_cs^i y_oc^j y_theta^k with Morse
variables y_l = 1 - exp(-alpha_l (r_l - r_l,e)) for the two bonds and
y_theta = cos(theta) - cos(theta_e) for the bend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidParameterError
from .units import AMU_TO_ME

# 16O, 12C, 32S isotopic masses in u
_ISOTOPE_MASS_U = {"O": 15.99491461957, "C": 12.0, "S": 31.9720711744}

REQUIRED_KEYS = ("alpha_cs", "alpha_oc", "r_cs_e", "r_oc_e", "theta_e_deg", "masses_u")
OPTIONAL_KEYS = ("dissociation_threshold",)


@dataclass(frozen=True)
class Masses:
    m_o: float
    m_c: float
    m_s: float

    @property
    def m_cs(self) -> float:
        return self.m_c * self.m_s / (self.m_c + self.m_s)

    @property
    def m_oc(self) -> float:
        return self.m_o * self.m_c / (self.m_o + self.m_c)


def standard_masses() -> Masses:
    """16O, 12C and 32S masses in electron-mass units."""
    return Masses(*(_ISOTOPE_MASS_U[a] * AMU_TO_ME for a in "OCS"))


@dataclass(frozen=True)
class PesModel:
    f: dict  # (i, j, k) -> hartree
    alpha_cs: float
    alpha_oc: float
    r_cs_e: float
    r_oc_e: float
    theta_e: float
    masses: Masses = field(default_factory=standard_masses)
    dissociation_threshold: float | None = None

    def __post_init__(self):
        for name in ("alpha_cs", "alpha_oc", "r_cs_e", "r_oc_e"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidParameterError(f"{name} must be positive, got {v!r}")
        if not (0.0 < self.theta_e <= math.pi + 1e-12):
            raise InvalidParameterError(f"theta_e must lie in (0, pi], got {self.theta_e!r}")
        for key, value in self.f.items():
            if len(key) != 3 or min(key) < 0:
                raise InvalidParameterError(f"bad coefficient index {key!r}")
            if not np.isfinite(value):
                raise InvalidParameterError(f"non-finite coefficient f{key}")

    @property
    def m_cs(self) -> float:
        return self.masses.m_cs

    @property
    def m_oc(self) -> float:
        return self.masses.m_oc

    @property
    def m_c(self) -> float:
        return self.masses.m_c

    @property
    def equilibrium(self):
        return self.r_cs_e, self.r_oc_e, self.theta_e

    def y_cs(self, r):
        return -np.expm1(-self.alpha_cs * (np.asarray(r, dtype=float) - self.r_cs_e))

    def y_oc(self, r):
        return -np.expm1(-self.alpha_oc * (np.asarray(r, dtype=float) - self.r_oc_e))

    def y_theta(self, theta):
        return np.cos(np.asarray(theta, dtype=float)) - math.cos(self.theta_e)

    def slice_coefficients(self, mode: str) -> dict:
        """Coefficients of the one-mode slice through equilibrium: {power: f}."""
        axis = {"cs": 0, "oc": 1, "theta": 2}[mode]
        out = {}
        for key, value in self.f.items():
            if all(p == 0 for a, p in enumerate(key) if a != axis):
                out[key[axis]] = out.get(key[axis], 0.0) + value
        return out

    def dissociation_energy(self) -> float:
        """V(r_cs -> inf, r_oc_e, theta_e) - V(equilibrium)."""
        return sum(c for p, c in self.slice_coefficients("cs").items() if p > 0)

    def shifted(self, delta: float) -> "PesModel":
        f = dict(self.f)
        f[(0, 0, 0)] = f.get((0, 0, 0), 0.0) + delta
        return replace(self, f=f)


def evaluate_pes(model: PesModel, r_cs, r_oc, theta):
    """V(r_cs, r_oc, theta) in hartree; arguments broadcast."""
    r_cs = np.asarray(r_cs, dtype=float)
    r_oc = np.asarray(r_oc, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(r_cs <= 0) or np.any(r_oc <= 0):
        raise InvalidParameterError("bond lengths must be positive")
    if np.any(theta < 0) or np.any(theta > math.pi):
        raise InvalidParameterError("theta must lie in [0, pi]")
    ycs, yoc, yth = model.y_cs(r_cs), model.y_oc(r_oc), model.y_theta(theta)
    v = np.zeros(np.broadcast(ycs, yoc, yth).shape)
    for (i, j, k), c in sorted(model.f.items()):
        v = v + c * ycs**i * yoc**j * yth**k
    return v if v.ndim else float(v)


def _parse_float(text, key, lineno):
    try:
        value = float(text)
    except ValueError:
        raise FormatError(f"line {lineno}: cannot parse {key} value {text!r}") from None
    if not math.isfinite(value):
        raise FormatError(f"line {lineno}: non-finite value for {key}")
    return value


def parse_pes(text: str, rezero: bool = True) -> PesModel:
    header = {}
    coeffs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in REQUIRED_KEYS + OPTIONAL_KEYS:
                raise FormatError(f"line {lineno}: unknown parameter {key}")
            if key in header:
                raise FormatError(f"line {lineno}: duplicate parameter {key}")
            if key == "masses_u":
                parts = [p for p in value.split(",")]
                if len(parts) != 3:
                    raise FormatError(f"line {lineno}: masses_u needs three comma-separated values")
                header[key] = tuple(_parse_float(p.strip(), key, lineno) for p in parts)
            else:
                header[key] = _parse_float(value, key, lineno)
            continue
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(f"line {lineno}: expected 'i j k f_ijk', got {raw.strip()!r}")
        try:
            idx = tuple(int(p) for p in parts[:3])
        except ValueError:
            raise FormatError(f"line {lineno}: non-integer index in {raw.strip()!r}") from None
        if min(idx) < 0:
            raise FormatError(f"line {lineno}: negative index {idx}")
        if idx in coeffs:
            raise FormatError(f"line {lineno}: duplicate coefficient {idx}")
        coeffs[idx] = _parse_float(parts[3], f"f{idx}", lineno)

    for key in REQUIRED_KEYS:
        if key not in header:
            raise FormatError(f"missing parameter {key}")
    if not coeffs:
        raise FormatError("no coefficients")
    masses = Masses(*(m * AMU_TO_ME for m in header["masses_u"]))
    try:
        model = PesModel(
            f=coeffs,
            alpha_cs=header["alpha_cs"],
            alpha_oc=header["alpha_oc"],
            r_cs_e=header["r_cs_e"],
            r_oc_e=header["r_oc_e"],
            theta_e=math.radians(header["theta_e_deg"]),
            masses=masses,
            dissociation_threshold=header.get("dissociation_threshold"),
        )
    except InvalidParameterError as exc:
        raise FormatError(str(exc)) from None
    if rezero:
        model = model.shifted(-evaluate_pes(model, *model.equilibrium))
    return model


def load_pes(path, rezero: bool = True) -> PesModel:
    """Read a PES file; energies are re-referenced to the equilibrium geometry."""
    return parse_pes(Path(path).read_text(encoding="utf-8"), rezero=rezero)


def format_pes(model: PesModel) -> str:
    m = model.masses
    lines = [
        f"alpha_cs = {model.alpha_cs!r}",
        f"alpha_oc = {model.alpha_oc!r}",
        f"r_cs_e = {model.r_cs_e!r}",
        f"r_oc_e = {model.r_oc_e!r}",
        f"theta_e_deg = {math.degrees(model.theta_e)!r}",
        f"masses_u = {m.m_o / AMU_TO_ME!r}, {m.m_c / AMU_TO_ME!r}, {m.m_s / AMU_TO_ME!r}",
    ]
    if model.dissociation_threshold is not None:
        lines.append(f"dissociation_threshold = {model.dissociation_threshold!r}")
    for (i, j, k), c in sorted(model.f.items()):
        lines.append(f"{i} {j} {k} {c!r}")
    return "\n".join(lines) + "\n"


def synthetic_pes_path() -> Path:
    """Bundled test surface: two Morse bonds, a cos(theta) bend, one f_110 cross term."""
    return Path(str(resources.files("ivrkit") / "data" / "synthetic_ocs.pes"))
