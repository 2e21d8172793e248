"""Unit conversions. Everything inside the package is in atomic units."""

from scipy import constants as _c

#: electron masses per unified atomic mass unit
AMU_TO_ME = 1.0 / _c.physical_constants["electron mass in u"][0]
#: femtoseconds per atomic unit of time
AU_TIME_FS = _c.physical_constants["atomic unit of time"][0] * 1e15
#: hartree per kelvin
KB_HARTREE = _c.physical_constants["kelvin-hartree relationship"][0]
HARTREE_TO_CM = _c.physical_constants["hartree-inverse meter relationship"][0] / 100.0


def fs_to_au(t):
    return t / AU_TIME_FS


def au_to_fs(t):
    return t * AU_TIME_FS
