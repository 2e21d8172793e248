import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ivrkit.eigensolver import (
    Mode,
    StateLabel,
    ZeroOrderSpectrum,
    count_states,
    dos_histogram,
    enumerate_states,
    lanczos_lowest,
    retain_states,
    solve_mode,
    solve_zero_order,
)
from ivrkit.errors import ConvergenceError, CoverageError, InvalidParameterError
from ivrkit.grid import build_ho_dvr, default_bases, ho_dvr_for_interval
from ivrkit.hamiltonian import build_zero_order, one_mode_potential


def morse_levels(depth, alpha, mass, n):
    w = alpha * np.sqrt(2 * depth / mass)
    v = np.arange(n) + 0.5
    return w * v - (w * v) ** 2 / (4 * depth)


@pytest.fixture(scope="module")
def zero_order_default(model):
    return build_zero_order(model, default_bases(model))


def test_ho_matrix_spectrum():
    m, w = 1000.0, 0.01
    b = build_ho_dvr(40, m, w)
    h = -b.d2 / (2 * m) + np.diag(0.5 * m * w**2 * b.points**2)
    for method in ("dense", "lanczos"):
        s = solve_mode(h, 6, method=method)
        assert np.abs(s.energies - w * (np.arange(6) + 0.5)).max() < 1e-9
        assert np.abs(np.diff(s.energies) - w).max() < 1e-9


@pytest.mark.parametrize("mode", ["cs", "oc"])
def test_morse_stretch_levels(model, mode):
    mass = model.m_cs if mode == "cs" else model.m_oc
    alpha = model.alpha_cs if mode == "cs" else model.alpha_oc
    depth = model.slice_coefficients(mode)[2]
    r_e = model.r_cs_e if mode == "cs" else model.r_oc_e
    lo, hi = (-1.2, 6.0) if mode == "cs" else (-0.9, 2.5)
    b = ho_dvr_for_interval(192, mass, r_e + lo, r_e + hi)
    h = -b.d2 / (2 * mass) + np.diag(one_mode_potential(model, b, mode))
    s = solve_mode(h, 11, Mode(mode))
    assert np.abs(s.energies - morse_levels(depth, alpha, mass, 11)).max() < 1e-8


def test_ground_state_nodeless(zero_order_default):
    for mat in zero_order_default.matrices:
        v = solve_mode(mat, 1).vectors[:, 0]
        # DVR tails alternate in sign at the 1e-4 level; the resolved part must not
        big = np.abs(v) > 1e-3 * np.abs(v).max()
        assert np.all(v[big] > 0)


def test_lanczos_agrees_with_dense(zero_order_default):
    for mat in zero_order_default.matrices:
        k = 12
        d = solve_mode(mat, k, method="dense")
        lz = solve_mode(mat, k, method="lanczos")
        assert np.abs(d.energies - lz.energies).max() < 1e-9
        assert np.abs(np.abs(d.vectors.T @ lz.vectors) - np.eye(k)).max() < 1e-6


def test_residuals_and_orthonormality(zero_order_default):
    for mat, s in zip(zero_order_default.matrices, solve_zero_order(zero_order_default)):
        res = mat @ s.vectors - s.vectors * s.energies
        assert np.linalg.norm(res, axis=0).max() < 1e-9
        assert np.abs(s.vectors.T @ s.vectors - np.eye(len(s))).max() < 1e-10
        assert np.all(np.diff(s.energies) >= 0)


def test_lanczos_reports_non_convergence(rng):
    a = rng.standard_normal((80, 80))
    with pytest.raises(ConvergenceError) as err:
        lanczos_lowest(a + a.T, 5, tol=1e-14, max_iter=6)
    assert err.value.worst_residual > 0


def test_bad_k(zero_order_default):
    with pytest.raises(InvalidParameterError):
        solve_mode(zero_order_default.h_cs, 0)


def test_degenerate_ordering_is_deterministic():
    h = np.diag([1.0, 0.0, 1.0, 2.0])
    s = solve_mode(h, method="dense")
    first = [int(np.argmax(np.abs(s.vectors[:, j]) > 1e-3)) for j in range(4)]
    assert first == [1, 0, 2, 3]
    assert np.all(s.vectors.max(axis=0) > 0)


def _spectra_from(energies):
    return tuple(ZeroOrderSpectrum(m, np.asarray(e, float), np.eye(len(e))) for m, e in zip(Mode, energies))


def brute_force(spectra, e_max):
    out = []
    for (n, a), (m, b), (l, c) in itertools.product(*(enumerate(s.energies) for s in spectra)):
        if a + b + c <= e_max:
            out.append((StateLabel(n, m, l), a + b + c))
    return sorted(out, key=lambda t: (t[1], t[0]))


def test_enumerate_just_above_zero_point(small):
    zp = sum(s.energies[0] for s in small.spectra)
    assert enumerate_states(small.spectra, zp + 1e-9) == [(StateLabel(0, 0, 0), pytest.approx(zp))]


def test_enumeration_matches_brute_force_and_is_monotone(small):
    e_max = 0.12
    fast = enumerate_states(small.spectra, e_max)
    slow = brute_force(small.spectra, e_max)
    assert [lab for lab, _ in fast] == [lab for lab, _ in slow]
    counts = [count_states(small.spectra, e) for e in np.linspace(0.01, e_max, 25)]
    assert np.all(np.diff(counts) >= 0)


def test_enumeration_permutation_invariant(small):
    e_max = 0.1
    base = {(lab.n, lab.m, lab.l) for lab, _ in enumerate_states(small.spectra, e_max)}
    for perm in itertools.permutations(range(3)):
        sp = tuple(small.spectra[p] for p in perm)
        got = {tuple(np.array(tuple(lab))[np.argsort(perm)]) for lab, _ in enumerate_states(sp, e_max)}
        assert got == base


def test_coverage_error_names_mode():
    spectra = _spectra_from([[0.0, 0.1], [0.0, 0.5, 1.0], [0.0, 0.3, 0.9]])
    with pytest.raises(CoverageError) as err:
        enumerate_states(spectra, 0.4)
    assert err.value.mode is Mode.CS


def test_dos_histogram_matches_brute_force(separable_small):
    spectra = separable_small.spectra
    e_max = 0.15
    states = enumerate_states(spectra, e_max)
    hist = dos_histogram(states, 0.01)
    assert hist.total == len(states)
    counts = np.zeros(len(hist.counts), dtype=int)
    for _, e in brute_force(spectra, e_max):
        counts[int(e // 0.01)] += 1
    assert np.array_equal(hist.counts, counts)


def test_synthetic_dos_grows_with_energy(model, zero_order_default):
    spectra = solve_zero_order(zero_order_default)
    e_max = model.dissociation_energy()
    hist = dos_histogram(enumerate_states(spectra, e_max), 0.01)
    full = hist.counts[: int(e_max // 0.01)]  # drop the bin cut by e_max
    smooth = np.convolve(full, np.ones(3) / 3, mode="valid")
    assert np.all(np.diff(smooth) >= 0)


def test_dos_single_state():
    hist = dos_histogram([(StateLabel(0, 0, 0), 0.004)], 0.01)
    assert hist.counts.tolist() == [1]


def test_dos_errors():
    with pytest.raises(InvalidParameterError):
        dos_histogram([], 0.01)
    with pytest.raises(InvalidParameterError):
        dos_histogram([(StateLabel(0, 0, 0), 0.1)], 0.0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.0, 0.3), min_size=1, max_size=40), st.floats(0.001, 0.05))
def test_dos_partition(energies, width):
    states = [(StateLabel(i, 0, 0), e) for i, e in enumerate(energies)]
    assert dos_histogram(states, width).total == len(states)


def test_retain_drops_absorbed_states(model):
    cs = default_bases(model, 64, 8, 8)[0]
    h = -cs.d2 / (2 * model.m_cs) + np.diag(one_mode_potential(model, cs, "cs"))
    full = solve_mode(h)
    kept = retain_states(full, 0.2, grid_points=cs.points, r_abs=8.0)
    assert 1 <= len(kept) < len(full)
    amp = np.abs(kept.vectors)
    assert np.all(amp[cs.points > 8.0].max(axis=0) < 1e-4 * amp.max(axis=0))
    assert len(retain_states(full, 0.05)) == int(np.sum(full.energies <= 0.07))


def test_state_label():
    lab = StateLabel.parse("43 0 0")
    assert tuple(lab) == (43, 0, 0) and str(lab) == "43 0 0"
    with pytest.raises(InvalidParameterError):
        StateLabel(-1, 0, 0)
    with pytest.raises(InvalidParameterError):
        StateLabel.parse("1 2")
