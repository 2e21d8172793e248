"""Binary wavefunction checkpoints.

Layout (little-endian): b"IVRW", u32 version, three u32 grid sizes, f64
time in fs, then complex128 amplitudes in row-major (cs, oc, theta) order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .propagator import GridWavefunction

MAGIC = b"IVRW"
VERSION = 1
_HEADER = struct.Struct("<4sI3Id")


def write_checkpoint(path, psi: GridWavefunction) -> Path:
    path = Path(path)
    amps = np.ascontiguousarray(psi.amplitudes, dtype="<c16")
    header = _HEADER.pack(MAGIC, VERSION, *amps.shape, float(psi.time))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(amps.tobytes(order="C"))
    return path


def read_checkpoint(path) -> GridWavefunction:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated checkpoint header")
    magic, version, n1, n2, n3, t = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: not a wavefunction checkpoint (magic {magic!r})")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    n = n1 * n2 * n3
    body = data[_HEADER.size:]
    if len(body) != 16 * n:
        raise FormatError(f"{path}: expected {16 * n} bytes of amplitudes, found {len(body)}")
    amps = np.frombuffer(body, dtype="<c16").reshape(n1, n2, n3).astype(complex)
    return GridWavefunction(amps, t)
