import numpy as np
import pytest

from fsbridge.datasets import (DENSITY_BOUNDS, density_coupling, density_pair_2d, draw_hyper, gaussian_reference,
                               gp_draw, jittered_cholesky, kernel_matrix, quadratic_coupling, quadratic_curve,
                               quadratic_dataset, quadratic_grid, sample_gp_task)
from fsbridge.errors import InvalidParameterError, NumericalError
from fsbridge.models import CouplingKind, GPTask, GridSpec, KernelKind
from fsbridge.spectral_basis import build_kernel_basis_1d


def test_kernel_matrix_values():
    p = np.array([0.0, 0.5])
    rbf = kernel_matrix(KernelKind.RBF, p, p, {'l1': 2.0, 'l2': 0.5})
    np.testing.assert_allclose(rbf, 4.0 * np.exp(-np.array([[0, 1], [1, 0]])))
    matern = kernel_matrix('matern52', p, p, {'l1': 1.0, 'l2': 1.0})
    r = np.sqrt(5.0) * 0.5
    assert matern[0, 1] == pytest.approx((1 + r + r * r / 3) * np.exp(-r))
    periodic = kernel_matrix(KernelKind.PERIODIC, p, p, {'l1': 1.0, 'l2': 0.5, 'period': 0.25})
    assert periodic[0, 1] == pytest.approx(np.exp(-2.0 * np.sin(np.pi * 0.25 / 0.25) ** 2 / 0.5))
    np.testing.assert_allclose(np.diag(periodic), 1.0)


def test_jittered_cholesky_handles_singular_matrices():
    ones = np.ones((3, 3))
    L = jittered_cholesky(ones)
    np.testing.assert_allclose(L @ L.T, ones, atol=1e-4)


def test_jittered_cholesky_gives_up_on_indefinite_matrices():
    with pytest.raises(NumericalError):
        jittered_cholesky(-np.eye(2))


def test_draw_hyper_respects_ranges(rng):
    task = GPTask(kernel=KernelKind.PERIODIC)
    for _ in range(20):
        hyper = draw_hyper(task, rng)
        assert 0.1 <= hyper['l1'] <= 1.0
        assert 0.1 <= hyper['l2'] <= 0.6
        assert 0.1 <= hyper['period'] <= 0.5
    assert 'period' not in draw_hyper(GPTask(), rng)


def test_gp_draw_empirical_covariance():
    points = np.array([0.0, 0.3, 1.0])
    hyper = {'l1': 1.0, 'l2': 0.5}
    draws = gp_draw(points, KernelKind.RBF, hyper, 20000, np.random.default_rng(2), noise_var=0.0)
    expected = kernel_matrix(KernelKind.RBF, points, points, hyper)
    np.testing.assert_allclose(np.cov(draws.T), expected, atol=0.05)


def test_sample_gp_task_disjoint_sorted_points(rng):
    task = GPTask()
    sample = sample_gp_task(task, rng)
    assert task.n_context_range[0] <= sample.observed_idx.size <= task.n_context_range[1]
    assert sample.target_idx.size >= 3
    assert sample.observed_idx.size + sample.target_idx.size <= task.max_points
    assert not set(sample.observed_idx) & set(sample.target_idx)
    assert np.all(np.diff(sample.observed_idx) > 0)
    assert np.all(np.diff(sample.target_idx) > 0)
    assert sample.observed_y.shape == sample.observed_idx.shape


def test_sample_gp_task_fixed_sizes_and_hyper(rng):
    hyper = {'l1': 0.8, 'l2': 0.4}
    sample = sample_gp_task(GPTask(), rng, hyper=hyper, n_context=10, n_target=20)
    assert sample.observed_idx.size == 10
    assert sample.target_idx.size == 20
    assert sample.hyper == hyper
    with pytest.raises(InvalidParameterError):
        sample_gp_task(GPTask(), rng, hyper=hyper, n_context=40, n_target=20)


def test_sample_gp_task_is_reproducible():
    a = sample_gp_task(GPTask(), np.random.default_rng(5))
    b = sample_gp_task(GPTask(), np.random.default_rng(5))
    np.testing.assert_array_equal(a.observed_idx, b.observed_idx)
    np.testing.assert_array_equal(a.observed_y, b.observed_y)


def test_gp_task_validation():
    with pytest.raises(InvalidParameterError):
        GPTask(grid=GridSpec.square(8))
    with pytest.raises(InvalidParameterError):
        GPTask(grid=GridSpec.line(20), max_points=50)
    with pytest.raises(InvalidParameterError):
        GPTask(n_context_range=(3, 49))


def test_quadratic_dataset(rng):
    data = quadratic_dataset(200, rng, noise=0.0)
    assert data.grid == quadratic_grid()
    assert set(np.unique(data.labels)) <= {-1.0, 1.0}
    points = data.grid.axes()[0]
    np.testing.assert_allclose(data.values, data.labels[:, None] * points[None, :] ** 2)
    np.testing.assert_allclose(quadratic_curve(-1.0, points), -points ** 2)


def test_quadratic_noise_level(rng):
    data = quadratic_dataset(500, rng, noise=0.05)
    resid = data.values - data.labels[:, None] * data.grid.axes()[0] ** 2
    assert resid.std() == pytest.approx(0.05, rel=0.05)


def test_gaussian_reference_lives_in_the_span(rng):
    eigs = build_kernel_basis_1d(quadratic_grid(20), 0.2)
    fields = gaussian_reference(eigs, 4, rng)
    coeffs = fields.values @ eigs.basis.T * eigs.weight
    np.testing.assert_allclose(coeffs @ eigs.basis, fields.values, atol=1e-10)


def test_quadratic_coupling_shapes(rng):
    eigs = build_kernel_basis_1d(quadratic_grid(20), 0.2)
    coupling = quadratic_coupling(eigs)
    x0, xT = coupling.sample(6, rng)
    assert coupling.kind == CouplingKind.INDEPENDENT
    assert x0.shape == xT.shape == (6, 20)


def test_density_pair_is_normalized():
    p0, pT = density_pair_2d(res=32)
    assert p0.grid == GridSpec.square(32, *DENSITY_BOUNDS)
    for f in (p0, pT):
        assert np.all(f.values >= 0)
        assert f.grid.cell_volume * f.values.sum() == pytest.approx(1.0)


def test_density_targets_peak_near_centres():
    _, pT = density_pair_2d(res=70)
    peak = pT.grid.points()[np.argmax(pT.values)]
    assert min(np.linalg.norm(peak - c) for c in ((1.0, 1.0), (3.0, 3.0), (5.0, 5.0))) < 0.2


def test_density_coupling_is_dirac(rng):
    x0, xT = density_coupling(res=16).sample(3, rng)
    np.testing.assert_array_equal(x0[0], x0[2])
    np.testing.assert_array_equal(xT[0], xT[1])
