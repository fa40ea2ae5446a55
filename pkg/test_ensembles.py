import math

import numpy as np
import pytest
from scipy import stats

from services.ensembles import (
    HamiltonianSpec,
    central_window,
    curve_distance,
    default_grid,
    eig_dense_sym,
    eig_tridiagonal,
    empirical_density,
    goe_matrix,
    permuted_principal_block,
    realization_seed,
    run_ensemble,
    sample_hamiltonian,
    sample_semicircle,
    scale_spectra,
    semicircle_cdf,
    semicircle_inverse_cdf,
)
from services.errors import DimensionMismatch, EmptyInput, GridMismatch
from services.measures import AnalyticMeasure
from services.transforms import DensityCurve, Spectrum, density_curve


# Random streams and samplers

def test_realization_seeds_are_pure():
    assert realization_seed(7, 3) == realization_seed(7, 3)
    assert realization_seed(7, 3) != realization_seed(7, 4)
    assert realization_seed(7, 3) != realization_seed(8, 3)
    assert realization_seed(7, 3, stream=1) != realization_seed(7, 3)


def test_hamiltonian_spec_validation():
    with pytest.raises(ValueError):
        HamiltonianSpec("anderson", 1)
    with pytest.raises(ValueError):
        HamiltonianSpec("anderson", 10, J=-1.0)
    with pytest.raises(ValueError):
        HamiltonianSpec("rp", 10, seed=2 ** 64)
    with pytest.raises(ValueError):
        HamiltonianSpec("lattice", 10)
    assert HamiltonianSpec("rp", 100).rp_sigma == pytest.approx(0.2)


def test_samples_are_reproducible():
    spec = HamiltonianSpec("anderson", 50, seed=42)
    first, again = sample_hamiltonian(spec, 5), sample_hamiltonian(spec, 5)
    assert np.array_equal(first.diag, again.diag)
    assert not np.array_equal(first.diag, sample_hamiltonian(spec, 6).diag)


def test_anderson_sample_shape():
    spec = HamiltonianSpec("anderson", 200, seed=1, J=0.3, diag_dist="semicircle", sigma=0.5)
    sample = sample_hamiltonian(spec, 0)
    assert sample.is_tridiagonal and sample.size == 200
    assert np.all(sample.offdiag == 0.3)
    assert np.all(np.abs(sample.diag) <= 1.0)
    assert sample.trace() == pytest.approx(float(np.sum(sample.diag)))


def test_chain_spectrum():
    sample = sample_hamiltonian(HamiltonianSpec("chain", 3), 0)
    assert sample.spectrum().eigenvalues == pytest.approx([-math.sqrt(2), 0.0, math.sqrt(2)], abs=1e-14)


def test_rp_sample_is_dense_and_symmetric():
    sample = sample_hamiltonian(HamiltonianSpec("rp", 60, seed=3, gamma=2.0), 0)
    assert not sample.is_tridiagonal
    assert np.array_equal(sample.dense, sample.dense.T)


def test_semicircle_quantiles():
    u = np.linspace(0.001, 0.999, 199)
    x = semicircle_inverse_cdf(u, radius=2.0)
    assert semicircle_cdf(x) == pytest.approx(u, abs=1e-10)
    assert semicircle_cdf(np.linspace(-2, 2, 9)) == pytest.approx(
        stats.semicircular.cdf(np.linspace(-2, 2, 9), scale=2.0), abs=1e-12)
    assert semicircle_inverse_cdf(np.array([0.0, 0.5, 1.0])) == pytest.approx([-2.0, 0.0, 2.0], abs=1e-9)


def test_semicircle_samples_follow_the_law():
    samples = sample_semicircle(np.random.default_rng(5), 20000, radius=2.0)
    assert np.all(np.abs(samples) <= 2.0)
    assert stats.kstest(samples, lambda x: semicircle_cdf(x, 2.0)).statistic < 0.015


def test_goe_spectrum_follows_semicircle():
    run = run_ensemble(HamiltonianSpec("goe", 400, seed=9), 5)
    pooled = run.pooled()
    assert pooled.size == 2000
    assert pooled.max() < 2.3 and pooled.min() > -2.3
    grid = np.linspace(-2.4, 2.4, 49)
    empirical = empirical_density(run.spectra, grid)
    assert curve_distance(empirical, density_curve(AnalyticMeasure.semicircle(1.0), grid)) < 0.1


def test_goe_matrix_variances():
    m = goe_matrix(300, np.random.default_rng(0))
    off = m[np.triu_indices(300, 1)]
    assert np.var(off) == pytest.approx(1 / 300, rel=0.05)
    assert np.var(np.diag(m)) == pytest.approx(2 / 300, rel=0.25)


# Eigensolvers and principal blocks

def test_eigensolver_input_checks():
    with pytest.raises(DimensionMismatch):
        eig_tridiagonal([0.0, 1.0, 2.0], [1.0])
    assert eig_tridiagonal([3.0], []).eigenvalues.tolist() == [3.0]
    with pytest.raises(DimensionMismatch):
        eig_dense_sym(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        eig_dense_sym(np.array([[0.0, 1.0], [0.5, 0.0]]))


def test_dense_and_tridiagonal_solvers_agree():
    sample = sample_hamiltonian(HamiltonianSpec("anderson", 40, seed=4), 0)
    assert eig_dense_sym(sample.to_dense()).eigenvalues == pytest.approx(sample.spectrum().eigenvalues, abs=1e-10)


def test_principal_block_of_tridiagonal_matches_dense_block():
    sample = sample_hamiltonian(HamiltonianSpec("anderson", 7, seed=2, J=0.7), 0)
    block = permuted_principal_block(sample, 0.5, seed=11)
    index = np.random.default_rng(11).permutation(7)[:4]
    assert block.size == 4
    assert np.array_equal(block.dense, sample.to_dense()[np.ix_(index, index)])
    with pytest.raises(ValueError):
        permuted_principal_block(sample, 0.0, seed=11)


def test_full_block_keeps_the_spectrum():
    sample = sample_hamiltonian(HamiltonianSpec("goe", 30, seed=2), 0)
    block = permuted_principal_block(sample, 1.0, seed=3)
    assert block.spectrum().eigenvalues == pytest.approx(sample.spectrum().eigenvalues, abs=1e-10)


def test_ensembles_are_independent_of_thread_count():
    spec = HamiltonianSpec("rp", 80, seed=123)
    serial = run_ensemble(spec, 6, threads=1, block_alpha=0.5)
    parallel = run_ensemble(spec, 6, threads=3, block_alpha=0.5)
    assert serial.seeds == parallel.seeds
    assert all(np.array_equal(a.eigenvalues, b.eigenvalues) for a, b in zip(serial.spectra, parallel.spectra))
    assert serial.spectra[0].n == 40


def test_scale_spectra():
    scaled = scale_spectra([Spectrum(np.array([-1.0, 2.0]))], 0.5)
    assert scaled[0].eigenvalues.tolist() == [-0.5, 1.0]


# Empirical densities and distances

def test_histogram_normalized_by_pooled_count():
    curve = empirical_density([Spectrum(np.array([-1.0, 1.0]))], grid=np.array([-1.0, 1.0]))
    assert curve.values.tolist() == [0.25, 0.25]


def test_default_grid_covers_every_eigenvalue():
    spectra = [Spectrum(np.random.default_rng(i).normal(size=100)) for i in range(3)]
    curve = empirical_density(spectra, bins=50)
    assert curve.grid.size == 50
    assert curve.mass == pytest.approx(1.0, abs=0.05)
    pooled = np.concatenate([s.eigenvalues for s in spectra])
    grid = default_grid(pooled, 50)
    assert grid[0] < pooled.min() and grid[-1] > pooled.max()


def test_kde_estimate():
    spectra = [Spectrum(np.random.default_rng(0).normal(size=2000))]
    curve = empirical_density(spectra, grid=np.linspace(-5, 5, 201), method="kde")
    assert curve.mass == pytest.approx(1.0, abs=1e-2)
    assert curve.values[100] == pytest.approx(1 / math.sqrt(2 * math.pi), abs=0.03)


def test_empirical_density_errors():
    with pytest.raises(EmptyInput):
        empirical_density([])
    with pytest.raises(GridMismatch):
        empirical_density([Spectrum(np.array([0.0]))], grid=np.array([0.0, 0.1, 0.3]))
    with pytest.raises(ValueError):
        empirical_density([Spectrum(np.array([0.0]))], grid=np.array([0.0, 0.1]), method="spline")


def test_curve_distances():
    grid = np.linspace(0.0, 1.0, 11)
    ones = DensityCurve(grid=grid, values=np.ones(11))
    zeros = DensityCurve(grid=grid, values=np.zeros(11))
    assert curve_distance(ones, ones) == 0.0
    assert curve_distance(ones, zeros, "l1") == pytest.approx(1.0)
    assert curve_distance(ones, zeros, "linf") == pytest.approx(1.0)
    assert curve_distance(ones, zeros, "KS") == pytest.approx(1.0)
    assert curve_distance(ones, zeros, window=(0.0, 0.5)) == pytest.approx(0.5)
    with pytest.raises(GridMismatch):
        curve_distance(ones, zeros, window=(0.42, 0.48))
    far = DensityCurve(grid=grid + 5.0, values=np.ones(11))
    with pytest.raises(GridMismatch):
        curve_distance(ones, far)


def test_invalid_points_are_ignored():
    grid = np.linspace(0.0, 1.0, 11)
    valid = np.ones(11, dtype=bool)
    valid[5] = False
    spiky = DensityCurve(grid=grid, values=np.where(np.arange(11) == 5, 9.0, 1.0), valid=valid)
    flat = DensityCurve(grid=grid, values=np.ones(11))
    assert curve_distance(spiky, flat, "linf") == 0.0


def test_central_window():
    curve = DensityCurve(grid=np.linspace(0.0, 1.0, 101), values=np.ones(101))
    assert central_window(curve, 0.9) == pytest.approx((0.05, 0.95))
    with pytest.raises(EmptyInput):
        central_window(DensityCurve(grid=np.linspace(0, 1, 5), values=np.zeros(5)))
