import numpy as np
import pytest
from scipy.stats import unitary_group

from ivrkit.diagnostics import (
    CoverageWarning,
    ObservableSeries,
    RunningAverage,
    Window,
    boltzmann_fit,
    default_energy_grid,
    dissociation_probability,
    entanglement_entropy,
    mode_energies,
    mode_populations,
    product_populations,
    read_csv,
    reduced_density_matrix,
    spectral_function,
    sum_rule_residual,
    time_average_populations,
    trapezoid_average,
    write_csv,
    zero_order_coefficients,
)
from ivrkit.eigensolver import StateLabel
from ivrkit.errors import InsufficientDataError, InvalidParameterError, InvalidStateError
from ivrkit.hamiltonian import build_cap, with_cap
from ivrkit.propagator import GridWavefunction, make_initial_state, propagate_exact
from ivrkit.units import KB_HARTREE, fs_to_au


def _product(spectra, label):
    return make_initial_state(label, spectra)


def _random_state(rng, shape):
    a = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return a / np.linalg.norm(a)


# ---------------------------------------------------------------- energies

def test_energies_of_product_state(small):
    lab = (2, 1, 3)
    e = mode_energies(_product(small.spectra, lab), small.zero_order)
    for key, s, q in zip(("E_cs", "E_oc", "E_theta"), small.spectra, lab):
        assert e[key] == pytest.approx(s.energies[q], abs=1e-12)
    assert sum_rule_residual(e) < 1e-12


def test_sum_rule_for_random_states(small, rng):
    for _ in range(5):
        e = mode_energies(_random_state(rng, small.h.shape), small.zero_order)
        assert sum_rule_residual(e) < 1e-9


def test_energies_scale_free(small, rng):
    a = _random_state(rng, small.h.shape)
    e1 = mode_energies(a, small.zero_order)
    e2 = mode_energies(0.3 * a, small.zero_order)
    assert all(e1[k] == pytest.approx(e2[k], abs=1e-13) for k in e1)


def test_coupling_vanishes_along_separable_run(separable_small):
    sys = separable_small
    psi0 = make_initial_state((2, 1, 1), sys.spectra)
    rng = np.random.default_rng(7)
    psi0 = GridWavefunction(psi0.amplitudes + 0.3 * _random_state(rng, sys.h.shape))

    def e_i(psi):
        return {"E_I": mode_energies(psi, sys.zero_order)["E_I"]}

    traj = propagate_exact(psi0, sys.h, dt_out=1.0, t_final=10.0, observers=[e_i], store_every=0)
    assert np.abs(traj.series("E_I")).max() < 1e-12


# ------------------------------------------------------------- populations

def test_initial_label_population(small):
    psi = _product(small.spectra, (1, 2, 0))
    labels = [(1, 2, 0), (0, 0, 0), (1, 2, 1), (2, 2, 0)]
    pops = product_populations(psi, small.spectra, labels)
    assert pops[StateLabel(1, 2, 0)] == pytest.approx(1.0, abs=1e-12)
    assert max(pops[StateLabel(*lab)] for lab in labels[1:]) < 1e-24
    with pytest.raises(InvalidParameterError, match="retained"):
        product_populations(psi, small.spectra, [(99, 0, 0)])


def test_bessel_and_parseval(small, rng):
    a = _random_state(rng, small.h.shape)
    total = (np.abs(zero_order_coefficients(a, small.spectra)) ** 2).sum()
    assert total == pytest.approx(1.0, abs=1e-12)  # complete 1-D bases
    part = [s.truncated(4) for s in small.spectra]
    assert (np.abs(zero_order_coefficients(a, part)) ** 2).sum() <= 1.0 + 1e-12


def test_time_averages(small):
    psi0 = _product(small.spectra, (0, 0, 1))
    traj = propagate_exact(psi0, small.h, dt_out=0.5, t_final=8.0)
    avg = time_average_populations(traj, small.spectra, labels=[(0, 0, 1), (1, 0, 1)])
    assert 0 < avg[StateLabel(1, 0, 1)] < avg[StateLabel(0, 0, 1)] <= 1

    series = np.array([product_populations(s, small.spectra, [(0, 0, 1)])[StateLabel(0, 0, 1)]
                       for s in traj.snapshots])
    whole = trapezoid_average(traj.times, series)
    half = len(traj.times) // 2
    first = trapezoid_average(traj.times[: half + 1], series[: half + 1])
    second = trapezoid_average(traj.times[half:], series[half:])
    assert whole == pytest.approx(0.5 * (first + second), abs=1e-12)
    assert avg[StateLabel(0, 0, 1)] == pytest.approx(whole, abs=1e-12)

    table = time_average_populations(traj, small.spectra)
    assert sum(table.values()) == pytest.approx(1.0, abs=1e-6)
    assert min(table.values()) >= 1e-8


def test_time_average_of_stationary_and_constant_series(separable_small):
    sys = separable_small
    traj = propagate_exact(_product(sys.spectra, (1, 1, 0)), sys.h, dt_out=1.0, t_final=5.0)
    avg = time_average_populations(traj, sys.spectra, labels=[(1, 1, 0)])
    assert avg[StateLabel(1, 1, 0)] == pytest.approx(1.0, abs=1e-9)
    t = np.linspace(0, 3, 13)
    assert trapezoid_average(t, np.full(13, 0.37)) == pytest.approx(0.37, abs=1e-15)
    with pytest.raises(InvalidParameterError):
        time_average_populations(traj, sys.spectra, t_avg=9.0)


def test_running_average_matches_trapezoid(rng):
    t = np.cumsum(rng.random(20))
    v = rng.random((20, 3))
    acc = RunningAverage()
    for ti, vi in zip(t, v):
        acc.add(ti, vi)
    expect = np.trapezoid(v, t, axis=0) / (t[-1] - t[0])
    assert np.allclose(acc.mean, expect, atol=1e-14)
    with pytest.raises(InvalidParameterError):
        acc.add(t[0], v[0])
    with pytest.raises(InsufficientDataError):
        RunningAverage().mean


# ------------------------------------------------------------ mode populations

def test_mode_populations_of_product_state(small):
    pops = mode_populations(_product(small.spectra, (3, 0, 2)), small.spectra)
    for dist, q in zip(pops, (3, 0, 2)):
        expect = np.zeros(dist.size)
        expect[q] = 1.0
        assert np.abs(dist - expect).max() < 1e-12
    assert max(pops.spillover) < 1e-12 and pops.warning is None


def test_mode_marginals_match_full_table(small, rng):
    a = _random_state(rng, small.h.shape)
    pops = mode_populations(a, small.spectra)
    table = np.abs(zero_order_coefficients(a, small.spectra)) ** 2
    assert np.abs(pops.cs - table.sum(axis=(1, 2))).max() < 1e-12
    assert np.abs(pops.oc - table.sum(axis=(0, 2))).max() < 1e-12
    assert np.abs(pops.theta - table.sum(axis=(0, 1))).max() < 1e-12
    rho = reduced_density_matrix(a, 0)
    direct = np.einsum("in,ij,jn->n", small.spectra[0].vectors, rho, small.spectra[0].vectors).real
    assert np.abs(pops.cs - direct).max() < 1e-12


def test_spillover_warning(small, rng):
    part = [s.truncated(3) for s in small.spectra]
    with pytest.warns(CoverageWarning):
        pops = mode_populations(_random_state(rng, small.h.shape), part)
    assert pops.warning is not None and max(pops.spillover) > 1e-3
    for dist, spill in zip(pops, pops.spillover):
        assert dist.sum() + spill == pytest.approx(1.0, abs=1e-12)


# ----------------------------------------------------------------- entropy

def test_entropy_of_product_state_is_zero(small):
    s = entanglement_entropy(_product(small.spectra, (4, 1, 2)))
    assert max(s.values()) < 1e-10


def test_entropy_of_bell_state():
    a = np.zeros((4, 3, 2), dtype=complex)
    a[0, 0, 0] = a[1, 1, 0] = 1 / np.sqrt(2)
    s = entanglement_entropy(a)
    assert s["S_cs"] == pytest.approx(np.log(2), abs=1e-12)
    assert s["S_oc"] == pytest.approx(np.log(2), abs=1e-12)
    assert s["S_theta"] == pytest.approx(0.0, abs=1e-12)


def test_entropy_bounds_and_local_unitary_invariance(rng):
    shape = (6, 4, 3)
    for _ in range(5):
        a = _random_state(rng, shape)
        s = entanglement_entropy(a)
        for key, k in zip(("S_cs", "S_oc", "S_theta"), range(3)):
            other = np.prod(shape) // shape[k]
            assert -1e-12 <= s[key] <= np.log(min(shape[k], other)) + 1e-12
        u = unitary_group.rvs(4, random_state=rng)
        rotated = np.einsum("ij,ajc->aic", u, a)
        s2 = entanglement_entropy(rotated)
        assert abs(s2["S_cs"] - s["S_cs"]) < 1e-10 and abs(s2["S_theta"] - s["S_theta"]) < 1e-10


def test_reduced_density_matrix_properties(rng):
    a = 0.4 * _random_state(rng, (5, 4, 3))
    for mode in range(3):
        rho = reduced_density_matrix(a, mode)
        assert np.abs(rho - rho.conj().T).max() < 1e-14
        assert np.trace(rho).real == pytest.approx(1.0, abs=1e-12)
        assert np.linalg.eigvalsh(rho).min() > -1e-12


# ------------------------------------------------------- spectral function

def _autocorr(energies, weights, t_fs):
    t_au = fs_to_au(t_fs)
    return (np.asarray(weights)[:, None] * np.exp(-1j * np.outer(energies, t_au))).sum(axis=0)


def _fwhm(spec):
    s = spec.sigma
    above = np.where(s >= 0.5 * s.max())[0]
    return spec.energies[above[-1]] - spec.energies[above[0]]


def test_eigenstate_gives_single_peak(separable_small):
    sys = separable_small
    psi0 = _product(sys.spectra, (1, 0, 1))
    e0 = sum(s.energies[q] for s, q in zip(sys.spectra, (1, 0, 1)))
    traj = propagate_exact(psi0, sys.h, dt_out=0.5, t_final=200.0, store_every=0)
    spec = spectral_function(traj, e_max=0.2)
    de = spec.energies[1] - spec.energies[0]
    assert abs(spec.energies[np.argmax(spec.sigma)] - e0) <= de
    assert spec.integral() == pytest.approx(1.0, abs=0.01)
    assert spec.sigma.min() >= -1e-10 * spec.sigma.max()


def test_two_state_superposition_has_equal_weights():
    t = np.arange(0, 400.25, 0.25)
    c = _autocorr([0.05, 0.09], [0.5, 0.5], t)
    spec = spectral_function(t, c, e_max=0.15)
    assert spec.integral(0.0, 0.07) == pytest.approx(0.5, abs=0.01)
    assert spec.integral(0.07, 0.15) == pytest.approx(0.5, abs=0.01)


def test_doubling_time_halves_width():
    t = np.arange(0, 800.25, 0.25)
    c = _autocorr([0.07], [1.0], t)
    grid = np.linspace(0.066, 0.074, 16001)
    w1 = _fwhm(spectral_function(t, c, grid, t_max=200.0))
    w2 = _fwhm(spectral_function(t, c, grid, t_max=400.0))
    assert w1 / w2 == pytest.approx(2.0, rel=0.02)


def test_windows():
    t = np.arange(0, 300.25, 0.25)
    c = _autocorr([0.03, 0.08, 0.11], [0.2, 0.5, 0.3], t)
    tri = spectral_function(t, c, e_max=0.2)
    assert tri.window is Window.TRIANGLE
    assert tri.sigma.min() >= -1e-10 * tri.sigma.max()
    cos2 = spectral_function(t, c, e_max=0.2, window="cos2")
    assert cos2.integral() == pytest.approx(1.0, abs=0.01)
    # the cos^2 lineshape has small negative side lobes
    assert cos2.sigma.min() < -1e-4 * cos2.sigma.max()


def test_spectral_function_rejects_bad_sampling():
    t = np.array([0.0, 0.25, 0.5, 1.0])
    with pytest.raises(InvalidParameterError):
        spectral_function(t, np.ones(4))
    with pytest.raises(InvalidParameterError):
        spectral_function(t[1:] - 0.0, np.ones(3))
    with pytest.raises(InvalidParameterError):
        spectral_function(t, np.ones(3))


def test_default_energy_grid_spacing():
    grid = default_energy_grid(800.0, 0.26)
    assert grid[0] == 0.0 and grid[-1] == pytest.approx(0.26)
    assert np.diff(grid).max() <= np.pi / (4 * fs_to_au(800.0)) * (1 + 1e-12)


# ----------------------------------------------------------- dissociation

def test_dissociation_probability(small):
    h = with_cap(small.h, build_cap(0.075, 5.0, small.bases[0]))
    traj = propagate_exact(_product(small.spectra, (6, 0, 0)), h, dt_out=0.5, t_final=10.0, store_every=0)
    pd = dissociation_probability(traj)
    assert pd.values[0] == 0.0
    assert np.all(np.diff(pd.values) >= 0)
    assert pd.values[-1] > 0
    free = propagate_exact(_product(small.spectra, (6, 0, 0)), small.h, dt_out=0.5, t_final=1.0)
    with pytest.raises(InvalidStateError):
        dissociation_probability(free)
    with pytest.raises(InvalidParameterError):
        ObservableSeries("x", np.arange(3.0), np.arange(2.0))


# --------------------------------------------------------------- Boltzmann

def test_boltzmann_recovers_temperature():
    e = 0.012 * np.arange(12) + 0.003
    p = np.exp(-e / 0.06)
    fit = boltzmann_fit(p / p.sum(), e)
    assert fit.thermal
    assert fit.kT == pytest.approx(0.06, abs=1e-10)
    assert fit.temperature == pytest.approx(0.06 / KB_HARTREE, rel=1e-10)
    assert fit.residual < 1e-12


def test_boltzmann_uniform_is_non_thermal():
    fit = boltzmann_fit(np.full(8, 0.125), 0.01 * np.arange(8))
    assert not fit.thermal and np.isinf(fit.kT)


def test_boltzmann_needs_three_points():
    with pytest.raises(InsufficientDataError):
        boltzmann_fit([0.9, 0.1, 1e-9, 0.0], [0.0, 0.01, 0.02, 0.03])


# --------------------------------------------------------------------- CSV

def test_csv_has_fifteen_significant_digits(tmp_path):
    path = write_csv(tmp_path / "x.csv", ("t_fs", "v"), [(0.25, np.pi), (0.5, 1.0 / 3.0)])
    header, rows = read_csv(path)
    assert header == ["t_fs", "v"]
    assert rows[0][1] == "3.14159265358979"
    assert abs(float(rows[1][1]) - 1 / 3) < 1e-15
    assert path.read_text().endswith("\n")
