import numpy as np
import pytest

from ivrkit.eigensolver import solve_zero_order
from ivrkit.grid import default_bases
from ivrkit.hamiltonian import build_full_h, build_kinetic, build_zero_order
from ivrkit.pes import PesModel, load_pes, synthetic_pes_path


@pytest.fixture(scope="session")
def model():
    return load_pes(synthetic_pes_path())


@pytest.fixture(scope="session")
def separable_model(model):
    """Synthetic surface without the stretch-stretch cross term."""
    f = {k: v for k, v in model.f.items() if k != (1, 1, 0)}
    return PesModel(f, model.alpha_cs, model.alpha_oc, model.r_cs_e, model.r_oc_e, model.theta_e, model.masses,
                    model.dissociation_threshold)


class Small:
    """A coupled system on a coarse grid, cheap enough for unit tests."""

    def __init__(self, model, shape, coupled=True):
        self.model = model
        self.bases = default_bases(model, *shape)
        self.h = build_full_h(build_kinetic(self.bases, model, coupled=coupled), model, self.bases)
        self.zero_order = build_zero_order(model, self.bases, self.h)
        self.spectra = solve_zero_order(self.zero_order)


@pytest.fixture(scope="session")
def small(model):
    return Small(model, (16, 8, 10))


@pytest.fixture(scope="session")
def separable_small(separable_model):
    return Small(separable_model, (16, 8, 10), coupled=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
