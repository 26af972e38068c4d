import numpy as np
import pytest

from fsbridge.control_net import (ControlNet, _spectral_conv, _spectral_matrices, deserialize, forward, init, serialize,
                                  time_embedding, vjp)
from fsbridge.errors import GridMismatchError, SerializationError
from fsbridge.models import ControlArch, GridField, GridSpec
from fsbridge.spectral_basis import build_cosine_basis, build_cosine_basis_2d, from_spectral, to_spectral


def _perturbed(arch, seed=0):
    params = init(arch, seed, zero_final=False)
    noise = np.random.default_rng(seed).standard_normal(params.theta.size)
    return params.with_theta(params.theta + 0.1 * noise)


def test_zero_initialized_head_gives_zero_control(small_arch, line_grid):
    x = GridField.from_function(line_grid, np.cos)
    out = forward(init(small_arch, seed=1), 0.3, x)
    assert out.grid == line_grid
    np.testing.assert_array_equal(out.values, 0.0)


def test_init_is_deterministic(small_arch):
    np.testing.assert_array_equal(init(small_arch, 4).theta, init(small_arch, 4).theta)
    assert not np.array_equal(init(small_arch, 4).theta, init(small_arch, 5).theta)
    np.testing.assert_array_equal(init(small_arch, 4).features.B, init(small_arch, 4).features.B)


@pytest.mark.parametrize("dims,grid", [(1, GridSpec.line(12)), (2, GridSpec.square(6))])
def test_backward_matches_finite_differences(dims, grid):
    rng = np.random.default_rng(dims)
    net = ControlNet(_perturbed(ControlArch.preset('small', dims)))
    t = rng.uniform(0.0, 1.0, size=2)
    x = rng.standard_normal((2, grid.size))
    c = rng.standard_normal((2, grid.size))
    _, cache = net.evaluate(t, x, grid)
    g_theta, g_x = net.backward(cache, c)
    base = net.params
    h = 1e-5

    def loss(theta, inputs):
        net.params = base.with_theta(theta)
        return float(np.sum(c * net.evaluate(t, inputs, grid)[0]))

    for _ in range(5):
        v = rng.standard_normal(base.theta.size)
        v /= np.linalg.norm(v)
        fd = (loss(base.theta + h * v, x) - loss(base.theta - h * v, x)) / (2 * h)
        assert g_theta @ v == pytest.approx(fd, rel=1e-4, abs=1e-8)

        u = rng.standard_normal(x.shape)
        u /= np.linalg.norm(u)
        fd = (loss(base.theta, x + h * u) - loss(base.theta, x - h * u)) / (2 * h)
        assert np.sum(g_x * u) == pytest.approx(fd, rel=1e-4, abs=1e-8)


def test_vjp_wraps_backward(small_arch, line_grid, rng):
    params = _perturbed(small_arch)
    x = GridField(grid=line_grid, values=rng.standard_normal(line_grid.size))
    cot = GridField(grid=line_grid, values=rng.standard_normal(line_grid.size))
    g_theta, g_x = vjp(params, 0.5, x, cot)
    net = ControlNet(params)
    _, cache = net.evaluate(np.array([0.5]), x.values[None, :], line_grid)
    expected_theta, expected_x = net.backward(cache, cot.values[None, :])
    np.testing.assert_allclose(g_theta, expected_theta)
    np.testing.assert_allclose(g_x.values, expected_x[0])

    with pytest.raises(GridMismatchError):
        vjp(params, 0.5, x, GridField.zeros(GridSpec.line(8, -1.0, 1.0)))


def test_same_weights_apply_at_any_resolution():
    # without point features a constant input stays constant through every layer
    arch = ControlArch(dims=1, n_layers=2, width=4, n_spectral_modes=3, fourier_features_m=0, time_embed_dim=8)
    params = _perturbed(arch, seed=3)
    outputs = []
    for n in (16, 64):
        grid = GridSpec.line(n, -1.0, 1.0)
        outputs.append(forward(params, 0.25, GridField(grid=grid, values=np.full(n, 0.7))).values)
    np.testing.assert_allclose(outputs[0], outputs[0][0], atol=1e-10)
    np.testing.assert_allclose(outputs[1], outputs[0][0], atol=1e-10)


def test_network_runs_on_finer_grid(small_arch):
    params = _perturbed(small_arch)
    for n in (8, 40):
        grid = GridSpec.line(n)
        out = forward(params, 0.1, GridField.zeros(grid))
        assert out.values.shape == (n,)
        assert np.all(np.isfinite(out.values))


def test_grid_dimension_must_match_arch(small_arch, square_grid):
    with pytest.raises(GridMismatchError):
        forward(init(small_arch, 0), 0.0, GridField.zeros(square_grid))
    with pytest.raises(GridMismatchError):
        ControlNet(init(small_arch, 0)).evaluate(np.zeros(1), np.zeros((1, 5)), GridSpec.line(4))


def test_time_embedding_shape_and_values():
    emb = time_embedding(np.array([0.0, 0.5]), 8, 1000.0)
    assert emb.shape == (2, 8)
    np.testing.assert_allclose(emb[0], [0, 0, 0, 0, 1, 1, 1, 1])


def test_serialize_round_trip(small_arch):
    params = _perturbed(small_arch)
    back = deserialize(serialize(params))
    np.testing.assert_array_equal(back.theta, params.theta)
    assert back.arch == params.arch
    with pytest.raises(SerializationError):
        deserialize("{not json")


@pytest.mark.parametrize("grid,n_modes", [(GridSpec.line(64, -1.0, 1.0), 2), (GridSpec.square(16, 0.0, 1.0), 3)])
def test_spectral_layer_output_stays_in_retained_cosines(grid, n_modes):
    rng = np.random.default_rng(7)
    h = rng.standard_normal((3, 2, grid.size))
    W = rng.standard_normal((2, 2) + (n_modes,) * grid.dims)
    y, _ = _spectral_conv(h, W, _spectral_matrices(grid, n_modes), grid.shape)

    eigs = build_cosine_basis(grid, n_modes) if grid.dims == 1 else build_cosine_basis_2d(grid, n_modes)
    assert eigs.K == n_modes ** grid.dims
    for row in y.reshape(-1, grid.size):
        projected = from_spectral(to_spectral(GridField(grid=grid, values=row), eigs)).values
        assert np.sum((row - projected) ** 2) <= 1e-8 * np.sum(row ** 2)


def test_vjp_is_linear_in_the_cotangent(small_arch, line_grid, rng):
    params = _perturbed(small_arch, seed=2)
    x = GridField(grid=line_grid, values=rng.standard_normal(line_grid.size))
    c1, c2 = (GridField(grid=line_grid, values=rng.standard_normal(line_grid.size)) for _ in range(2))

    t1, x1 = vjp(params, 0.4, x, c1)
    t2, x2 = vjp(params, 0.4, x, c2)
    t12, x12 = vjp(params, 0.4, x, GridField(grid=line_grid, values=c1.values + c2.values))

    np.testing.assert_allclose(t12, t1 + t2, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(x12.values, x1.values + x2.values, rtol=1e-10, atol=1e-12)
