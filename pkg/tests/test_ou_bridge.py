import numpy as np
import pytest
from scipy.special import roots_hermitenorm

from fsbridge.errors import InvalidParameterError
from fsbridge.evaluation import marginal_check
from fsbridge.models import OUBridgeParams, SpectralField
from fsbridge.spectral_basis import build_cosine_basis
from fsbridge.ou_bridge import (bridge_drift, bridge_marginal, bridge_marginal_arrays, h_correction,
                                integrated_decay, log_rn_density, log_rn_density_arrays, log_rn_density_grad_x,
                                log_rn_density_grad_y, phi1, sample_bridge_path, sample_bridge_states,
                                single_mode_process, transition_moments)


@pytest.fixture
def mode():
    return single_mode_process(a=0.8, lam=0.6, sigma=1.3, T=2.0)


def test_phi1_series_branch_is_continuous():
    z = np.array([0.0, 1e-8, 1e-6 * 0.999, 1e-6 * 1.001, 2.0])
    expected = np.array([1.0, 1.0 - 5e-9, *(-np.expm1(-z[2:4]) / z[2:4]), (1.0 - np.exp(-2.0)) / 2.0])
    np.testing.assert_allclose(phi1(z), expected, rtol=1e-13)


def test_integrated_decay_limits():
    assert integrated_decay(1e-12, 1.5) == pytest.approx(1.5)
    assert integrated_decay(2.0, 50.0) == pytest.approx(0.25)


def test_transition_moments(mode):
    g = transition_moments(mode, 0, 0.5)
    assert g.mean == pytest.approx(np.exp(-0.4))
    assert g.var == pytest.approx(1.3 ** 2 * 0.6 * (1.0 - np.exp(-0.8)) / 1.6)
    zero = transition_moments(mode, 0, 0.0)
    assert zero.mean == 1.0 and zero.var == 0.0


def test_transition_moments_rejects_bad_arguments(mode):
    with pytest.raises(InvalidParameterError):
        transition_moments(mode, 0, 2.5)
    with pytest.raises(InvalidParameterError):
        transition_moments(mode, 1, 0.5)


def test_chapman_kolmogorov(mode):
    g1, g2 = transition_moments(mode, 0, 0.3), transition_moments(mode, 0, 0.9)
    g = transition_moments(mode, 0, 1.2)
    assert g.mean == pytest.approx(g1.mean * g2.mean, abs=1e-14)
    assert g.var == pytest.approx(g2.mean ** 2 * g1.var + g2.var, abs=1e-14)


@pytest.mark.parametrize("t,x", [(0.4, 0.0), (1.0, 0.7), (2.0, -1.2)])
def test_rn_density_integrates_to_one(mode, t, x):
    nodes, weights = roots_hermitenorm(200)
    s_inf = mode.stationary_var[0]
    q = np.exp([log_rn_density(mode, 0, t, x, np.sqrt(s_inf) * z) for z in nodes])
    assert float(weights @ q) / np.sqrt(2.0 * np.pi) == pytest.approx(1.0, abs=1e-8)


def test_rn_density_rejects_degenerate_arguments(mode):
    with pytest.raises(InvalidParameterError):
        log_rn_density(mode, 0, 0.0, 0.0, 0.0)
    with pytest.raises(InvalidParameterError):
        log_rn_density(single_mode_process(0.8, 0.6, 0.0, 2.0), 0, 1.0, 0.0, 0.0)


def test_rn_density_gradients_match_finite_differences(cosine_process, rng):
    t, h = 0.6, 1e-6
    x = rng.standard_normal(cosine_process.K)
    y = rng.standard_normal(cosine_process.K)
    fd_x = (log_rn_density_arrays(cosine_process, t, x + h, y) - log_rn_density_arrays(cosine_process, t, x - h, y)) / (2 * h)
    fd_y = (log_rn_density_arrays(cosine_process, t, x, y + h) - log_rn_density_arrays(cosine_process, t, x, y - h)) / (2 * h)
    np.testing.assert_allclose(log_rn_density_grad_x(cosine_process, t, x, y), fd_x, rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(log_rn_density_grad_y(cosine_process, t, x, y), fd_y, rtol=1e-6, atol=1e-6)


def test_bridge_drift_equals_score_form(mode, rng):
    for _ in range(25):
        t = rng.uniform(0.0, 1.8)
        x, x_T = rng.standard_normal(2)
        score = log_rn_density_grad_x(mode, mode.T - t, np.array([x]), np.array([x_T]))[0]
        expected = -0.8 * x + 1.3 ** 2 * 0.6 * score
        assert bridge_drift(mode, 0, t, x, x_T) == pytest.approx(expected, rel=1e-10)


def test_bridge_drift_is_singular_at_T(mode):
    with pytest.raises(InvalidParameterError):
        bridge_drift(mode, 0, 2.0, 0.0, 1.0)


def test_h_correction_does_not_depend_on_noise():
    tau, x, x_T = 0.3, 0.2, -1.0
    m = np.exp(-0.5 * tau)
    assert h_correction(0.5, tau, x, x_T) == pytest.approx(m / integrated_decay(0.5, tau) * (x_T - m * x))


def test_brownian_bridge_limit():
    p = single_mode_process(a=1e-10, lam=1.0, sigma=0.9, T=1.5)
    t, x0, x, x_T = 0.6, 0.3, -0.2, 1.1
    assert bridge_drift(p, 0, t, x, x_T) == pytest.approx((x_T - x) / (1.5 - t), rel=1e-6)
    law = bridge_marginal(p, 0, t, x0, x_T)
    assert law.mean == pytest.approx((1 - t / 1.5) * x0 + t / 1.5 * x_T, rel=1e-6)
    assert law.var == pytest.approx(0.81 * t * (1.5 - t) / 1.5, rel=1e-6)


def test_bridge_marginal_is_pinned_at_both_ends(mode):
    start = bridge_marginal(mode, 0, 0.0, 0.4, -0.7)
    end = bridge_marginal(mode, 0, 2.0, 0.4, -0.7)
    assert start.mean == pytest.approx(0.4) and start.var == pytest.approx(0.0, abs=1e-15)
    assert end.mean == pytest.approx(-0.7) and end.var == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(InvalidParameterError):
        bridge_marginal(mode, 0, 2.5, 0.0, 0.0)


def test_bridge_marginal_arrays_match_scalar(cosine_process, rng):
    x0 = rng.standard_normal(cosine_process.K)
    xT = rng.standard_normal(cosine_process.K)
    mean, var = bridge_marginal_arrays(cosine_process, 0.35, x0, xT)
    for k in range(cosine_process.K):
        law = bridge_marginal(cosine_process, k, 0.35, x0[k], xT[k])
        assert mean[k] == pytest.approx(law.mean)
        assert var[k] == pytest.approx(law.var)


def test_sample_bridge_path_shapes_and_endpoints(cosine_process, rng):
    K = cosine_process.K
    x0 = SpectralField(eigs=cosine_process.eigs, coeffs=rng.standard_normal(K))
    xT = SpectralField(eigs=cosine_process.eigs, coeffs=rng.standard_normal(K))
    times = np.linspace(0.0, 1.0, 11)

    traj = sample_bridge_path(cosine_process, x0, xT, times, rng, batch=4)

    assert traj.states.shape == (11, 4, K)
    assert traj.noises.shape == (10, 4, K)
    np.testing.assert_array_equal(traj.states[0], np.tile(x0.coeffs, (4, 1)))
    np.testing.assert_array_equal(traj.states[-1], np.tile(xT.coeffs, (4, 1)))


def test_sequential_bridge_sampling_has_exact_marginals(cosine_process):
    rng = np.random.default_rng(7)
    K = cosine_process.K
    x0 = np.linspace(-1.0, 1.0, K)
    xT = np.linspace(2.0, 0.0, K)
    times = np.linspace(0.0, 1.0, 11)
    n = 4000

    states, _ = sample_bridge_states(cosine_process, np.tile(x0, (n, 1)), np.tile(xT, (n, 1)), times, rng)

    mean, var = bridge_marginal_arrays(cosine_process, times[4], x0, xT)
    report = marginal_check(states[4], (mean, var))
    assert report.passed(z_tol=4.5)


@pytest.mark.parametrize("times", [
    np.array([0.0, 0.5, 0.5, 1.0]),
    np.array([0.1, 0.5, 1.0]),
    np.array([0.0, 0.5, 0.9]),
    np.array([0.0]),
])
def test_sample_bridge_states_rejects_bad_time_grids(cosine_process, rng, times):
    x = np.zeros((1, cosine_process.K))
    with pytest.raises(InvalidParameterError):
        sample_bridge_states(cosine_process, x, x, times, rng)


def test_sample_bridge_path_rejects_foreign_endpoints(cosine_process, line_grid, rng):
    coarse = build_cosine_basis(line_grid, 4)
    other = SpectralField(eigs=coarse, coeffs=np.zeros(coarse.K))
    mine = SpectralField(eigs=cosine_process.eigs, coeffs=np.zeros(cosine_process.K))
    with pytest.raises(InvalidParameterError):
        sample_bridge_path(cosine_process, other, mine, np.linspace(0.0, 1.0, 3), rng)


def test_process_rejects_bad_constants(cosine_eigs):
    with pytest.raises(InvalidParameterError):
        OUBridgeParams(eigs=cosine_eigs, sigma=-1.0, T=1.0)
    with pytest.raises(InvalidParameterError):
        OUBridgeParams(eigs=cosine_eigs, sigma=1.0, T=0.0)
