import numpy as np
import pytest

from fsbridge.errors import GridMismatchError, InvalidParameterError
from fsbridge.models import BasisKind, GridField, GridSpec, SpectralField
from fsbridge.spectral_basis import (ResampleMethod, SpectralTransform, build_cosine_basis, build_cosine_basis_2d,
                                     build_kernel_basis_1d, evaluate_basis, from_spectral, rbf_gram,
                                     resample_initial, spectral_resample, to_spectral)


def test_cosine_basis_is_orthonormal_and_sorted(square_grid):
    eigs = build_cosine_basis(square_grid, 4)
    assert eigs.K == 16
    assert eigs.kind == BasisKind.ANALYTIC_COSINE
    assert eigs.gram_error() < 1e-10
    assert np.all(np.diff(eigs.a) >= 0)
    np.testing.assert_array_equal(eigs.lam, np.ones(16))


def test_cosine_decay_floor_clamps_constant_mode(line_grid):
    eigs = build_cosine_basis(line_grid, 4, decay_floor=0.01)
    assert eigs.a[0] == pytest.approx(0.01)
    # Neumann eigenvalue (pi n / L)^2 on [-1, 1]
    assert eigs.a[1] == pytest.approx((np.pi / 2.0) ** 2)


def test_cosine_basis_rejects_bad_arguments(line_grid):
    with pytest.raises(InvalidParameterError):
        build_cosine_basis(line_grid, 0)
    with pytest.raises(InvalidParameterError):
        build_cosine_basis(line_grid, 33)
    with pytest.raises(InvalidParameterError):
        build_cosine_basis(line_grid, 4, decay_floor=0.0)
    with pytest.raises(InvalidParameterError):
        build_cosine_basis_2d(line_grid, 4)


def test_kernel_basis_properties(kernel_eigs, line_grid):
    assert kernel_eigs.kind == BasisKind.NUMERICAL_KERNEL
    assert kernel_eigs.gram_error() < 1e-8
    np.testing.assert_array_equal(kernel_eigs.a, 0.5)
    assert np.all(np.diff(kernel_eigs.lam) <= 0)
    assert 1 <= kernel_eigs.K <= line_grid.size


def test_kernel_basis_trace_matches_weighted_gram(line_grid, kernel_eigs):
    # retained eigenvalues carry almost all of trace(w G) = w N
    eigs = kernel_eigs
    assert eigs.trace == pytest.approx(line_grid.cell_volume * line_grid.size, rel=1e-6)


def test_very_wide_kernel_gives_rank_one_system(line_grid):
    # the Gram matrix is constant up to rounding
    eigs = build_kernel_basis_1d(line_grid, 1e12)
    assert eigs.K == 1
    assert eigs.lam[0] == pytest.approx(line_grid.size * line_grid.cell_volume, rel=1e-9)
    np.testing.assert_allclose(eigs.basis[0], 1.0 / np.sqrt(2.0), rtol=1e-6)


def test_kernel_spectrum_matches_dense_eigensolver():
    grid = GridSpec.line(50, -2.0, 2.0)
    eigs = build_kernel_basis_1d(grid, 0.2)
    points = grid.points()
    reference = np.linalg.eigvalsh(grid.cell_volume * rbf_gram(points, points, 0.2))[::-1]
    np.testing.assert_allclose(eigs.lam, reference[:eigs.K], rtol=1e-8, atol=1e-12)
    assert np.all(np.diff(eigs.lam) <= 0)


def test_kernel_trace_matches_integral_of_the_diagonal():
    grid = GridSpec.line(50, -2.0, 2.0)
    eigs = build_kernel_basis_1d(grid, 0.2)
    # k(p, p) = 1, so the diagonal integrates to the domain length
    assert np.sum(eigs.lam) == pytest.approx(4.0, rel=0.02)


def test_leading_kernel_eigenvalues_agree_across_resolutions():
    coarse = build_kernel_basis_1d(GridSpec.line(50, -2.0, 2.0), 0.2)
    fine = build_kernel_basis_1d(GridSpec.line(100, -2.0, 2.0), 0.2)
    np.testing.assert_allclose(coarse.lam[:5], fine.lam[:5], rtol=0.02)


def test_kernel_basis_mode_cap(line_grid):
    capped = build_kernel_basis_1d(line_grid, 0.2, max_modes=5)
    assert capped.K == 5
    full = build_kernel_basis_1d(line_grid, 0.2)
    np.testing.assert_array_equal(capped.basis, full.basis[:5])


def test_kernel_basis_rejects_bad_arguments(square_grid, line_grid):
    with pytest.raises(InvalidParameterError):
        build_kernel_basis_1d(square_grid, 0.2)
    with pytest.raises(InvalidParameterError):
        build_kernel_basis_1d(line_grid, 0.0)
    with pytest.raises(InvalidParameterError):
        build_kernel_basis_1d(line_grid, 0.2, jitter=-1.0)


@pytest.mark.parametrize("fixture", ["cosine_eigs", "kernel_eigs"])
def test_synthesis_then_analysis_recovers_coefficients(fixture, request, rng):
    eigs = request.getfixturevalue(fixture)
    coeffs = rng.standard_normal((3, eigs.K))
    transform = SpectralTransform(eigs)
    np.testing.assert_allclose(transform.analysis(transform.synthesis(coeffs)), coeffs, atol=1e-9)


def test_fast_cosine_transform_matches_dense_basis(square_grid, rng):
    eigs = build_cosine_basis(square_grid, 4)
    values = rng.standard_normal((2, square_grid.size))
    fast = SpectralTransform(eigs)
    dense = square_grid.cell_volume * values @ eigs.basis.T
    np.testing.assert_allclose(fast.analysis(values), dense, atol=1e-12)
    coeffs = rng.standard_normal((2, eigs.K))
    np.testing.assert_allclose(fast.synthesis(coeffs), coeffs @ eigs.basis, atol=1e-12)


def test_transform_adjoints(cosine_eigs, rng):
    transform = SpectralTransform(cosine_eigs)
    v = rng.standard_normal(cosine_eigs.grid.size)
    c = rng.standard_normal(cosine_eigs.K)
    assert np.dot(transform.analysis(v), c) == pytest.approx(np.dot(v, transform.analysis_adjoint(c)))
    assert np.dot(transform.synthesis(c), v) == pytest.approx(np.dot(c, transform.synthesis_adjoint(v)))


def test_to_spectral_requires_matching_grid(cosine_eigs):
    with pytest.raises(GridMismatchError):
        to_spectral(GridField.zeros(GridSpec.line(16, -1.0, 1.0)), cosine_eigs)


def test_cosine_field_evaluates_at_any_resolution(cosine_eigs):
    c = SpectralField.unit(cosine_eigs, 2)
    fine = GridSpec.line(128, -1.0, 1.0)
    values = from_spectral(c, fine).values
    n = cosine_eigs.modes[2, 0]
    expected = np.cos(np.pi * n * (fine.axes()[0] + 1.0) / 2.0)
    np.testing.assert_allclose(values, expected, atol=1e-12)


def test_evaluate_basis_rejects_other_domain(cosine_eigs):
    with pytest.raises(GridMismatchError):
        evaluate_basis(cosine_eigs, GridSpec.line(32, 0.0, 1.0))


def test_spectral_resample_preserves_smooth_fields():
    coarse, fine = GridSpec.line(16), GridSpec.line(64)
    f = GridField.from_function(coarse, lambda p: np.cos(np.pi * p))
    up = spectral_resample(f.values, coarse, fine)
    np.testing.assert_allclose(up, np.cos(np.pi * fine.axes()[0]), atol=1e-12)
    down = spectral_resample(up, fine, coarse)
    np.testing.assert_allclose(down, f.values, atol=1e-12)


def test_resample_initial_bilinear_and_spectral(square_grid):
    f = GridField.from_function(square_grid, lambda x, y: x + 2.0 * y)
    fine = square_grid.with_resolution((16, 16))
    up = resample_initial(f, fine)
    assert up.grid == fine
    inner = (fine.points() >= square_grid.axes()[0][0]).all(axis=1) & \
            (fine.points() <= square_grid.axes()[0][-1]).all(axis=1)
    np.testing.assert_allclose(up.values[inner], (fine.points() @ [1.0, 2.0])[inner], atol=1e-12)

    with pytest.raises(InvalidParameterError):
        resample_initial(up, square_grid)
    down = resample_initial(up, square_grid, ResampleMethod.SPECTRAL)
    assert down.grid == square_grid


def test_resample_initial_rejects_other_domain(square_grid):
    with pytest.raises(GridMismatchError):
        resample_initial(GridField.zeros(square_grid), GridSpec.square(8, 0.0, 2.0))


def test_kernel_system_needs_nystrom_off_grid(kernel_eigs):
    with pytest.raises(GridMismatchError):
        evaluate_basis(kernel_eigs, GridSpec.line(64, -1.0, 1.0))


def test_nystrom_extension_agrees_on_shared_points(kernel_eigs):
    # every third centre of the 96-point grid is a centre of the 32-point grid
    fine = GridSpec.line(96, -1.0, 1.0)
    extended = evaluate_basis(kernel_eigs, fine, nystrom=True)
    np.testing.assert_allclose(extended[:5, 1::3], kernel_eigs.basis[:5], atol=1e-8)
