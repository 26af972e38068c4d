import numpy as np
import pytest

from fsbridge.bayesian_learning import (GP_REGRESSION_GAMMA, IMPUTATION_GAMMA, IMPUTATION_SIGMA_OBS, affine_deviation,
                                        bayes_loss, bayes_train, energy_arrays, posterior_preset, posterior_sample,
                                        terminal_cost, terminal_cost_arrays)
from fsbridge.control_net import ControlNet, LinearControl, ZeroControl, forward, init
from fsbridge.datasets import sample_gp_task
from fsbridge.errors import GridMismatchError, InvalidParameterError
from fsbridge.evaluation import gp_posterior_oracle, marginal_check, matched_process, posterior_errors
from fsbridge.models import (BayesConfig, ControlArch, EnergyFunctional, GPTask, GridField, GridSpec,
                             OUBridgeParams, SchemeKind, SpectralField, StepScheme)
from fsbridge.ou_bridge import log_rn_density_arrays, transition_arrays
from fsbridge.sde_engine import simulate_coeffs
from fsbridge.spectral_basis import SpectralTransform, build_kernel_basis_1d


@pytest.fixture
def energy(line_grid):
    return EnergyFunctional(grid=line_grid, observed_idx=[3, 10, 20], observed_y=[0.5, -0.2, 0.1],
                            target_idx=[5, 25], sigma_obs=0.5)


@pytest.fixture
def scheme():
    return StepScheme(SchemeKind.EXPONENTIAL, 4)


class SquareControl:
    n_params = 0

    def evaluate(self, t, x, grid):
        return np.atleast_2d(x) ** 2, None


def _fd(fn, x, direction, h=1e-6):
    return (fn(x + h * direction) - fn(x - h * direction)) / (2.0 * h)


def test_energy_values_and_gradients(energy, rng):
    values = rng.standard_normal((2, energy.grid.size))

    U, g_values, g_log_sigma = energy_arrays(values, energy)

    resid = values[:, [3, 10, 20]] - np.array([0.5, -0.2, 0.1])
    np.testing.assert_allclose(U, np.sum(resid ** 2, axis=1) / (2.0 * 0.25))
    np.testing.assert_allclose(g_values[:, [3, 10, 20]], resid / 0.25)
    assert np.count_nonzero(g_values) == 6
    np.testing.assert_allclose(g_log_sigma, -np.sum(resid ** 2, axis=1) / 0.25)


def test_energy_log_sigma_gradient_with_learnable_sigma(energy, rng):
    energy.learnable_sigma = True
    values = rng.standard_normal((1, energy.grid.size))
    _, _, g_log_sigma = energy_arrays(values, energy, sigma_obs=0.3)

    def U(log_sigma):
        return energy_arrays(values, energy, sigma_obs=float(np.exp(log_sigma)))[0][0]

    assert g_log_sigma[0] == pytest.approx(_fd(U, np.log(0.3), 1.0), rel=1e-6)


def test_energy_uses_targets_when_values_are_known(line_grid):
    energy = EnergyFunctional(grid=line_grid, observed_idx=[3], observed_y=[1.0], target_idx=[5, 6],
                              target_y=[2.0, 2.0], sigma_obs=1.0)
    U, _, _ = energy_arrays(np.zeros(line_grid.size), energy)
    assert U[0] == pytest.approx(4.0)


def test_terminal_cost_with_tied_prior_is_the_energy(kernel_process, energy, rng):
    transform = SpectralTransform(kernel_process.eigs)
    xT = GridField(grid=energy.grid, values=transform.synthesis(rng.standard_normal(kernel_process.K)))
    x0 = GridField.zeros(energy.grid)

    cost = terminal_cost(xT, energy, kernel_process, x0)

    assert cost == pytest.approx(energy_arrays(xT.values, energy)[0][0], rel=1e-10)
    # an explicit prior equal to x0 cancels the density terms
    assert terminal_cost(xT, energy, kernel_process, x0, prior_x0=x0) == pytest.approx(cost, rel=1e-10)


def test_terminal_cost_with_a_separate_prior(kernel_process, energy, rng):
    transform = SpectralTransform(kernel_process.eigs)
    xT_c, x0_c, prior_c = (rng.standard_normal(kernel_process.K) for _ in range(3))

    cost = terminal_cost_arrays(xT_c, energy, kernel_process, transform, x0_c, prior_c)

    expected = (energy_arrays(transform.synthesis(xT_c), energy)[0][0]
                + np.sum(log_rn_density_arrays(kernel_process, kernel_process.T, prior_c, xT_c))
                - np.sum(log_rn_density_arrays(kernel_process, kernel_process.T, x0_c, xT_c)))
    assert cost.value[0] == pytest.approx(expected, rel=1e-10)


def test_terminal_cost_gradients_match_finite_differences(kernel_process, energy, rng):
    transform = SpectralTransform(kernel_process.eigs)
    K = kernel_process.K
    xT, x0, prior = (0.3 * rng.standard_normal(K) for _ in range(3))
    cost = terminal_cost_arrays(xT, energy, kernel_process, transform, x0, prior)

    def value(**kw):
        args = {'xT': xT, 'x0': x0, 'prior': prior}
        args.update(kw)
        return terminal_cost_arrays(args['xT'], energy, kernel_process, transform, args['x0'], args['prior']).value[0]

    v = rng.standard_normal(K)
    v /= np.linalg.norm(v)
    assert float(cost.grad_xT[0] @ v) == pytest.approx(_fd(lambda z: value(xT=z), xT, v), rel=1e-5, abs=1e-7)
    assert float(cost.grad_x0[0] @ v) == pytest.approx(_fd(lambda z: value(x0=z), x0, v), rel=1e-5, abs=1e-7)
    assert float(cost.grad_prior[0] @ v) == pytest.approx(_fd(lambda z: value(prior=z), prior, v),
                                                          rel=1e-5, abs=1e-7)


def test_terminal_cost_rejects_foreign_grid(kernel_process, energy):
    other = GridSpec.line(16, -1.0, 1.0)
    with pytest.raises(GridMismatchError):
        terminal_cost(GridField.zeros(other), energy, kernel_process, GridField.zeros(other))


def test_bayes_loss_is_running_plus_terminal_cost(kernel_process, energy, scheme, rng):
    transform = SpectralTransform(kernel_process.eigs)
    control = LinearControl(0.4)
    traj = simulate_coeffs(kernel_process, rng.standard_normal((3, kernel_process.K)), control, scheme, transform, rng)

    loss, grad = bayes_loss(traj, control, energy, kernel_process, scheme)

    U = energy_arrays(transform.synthesis(traj.terminal()), energy)[0]
    running = 0.5 * np.sum(traj.control_evals ** 2, axis=(0, 2)) * (kernel_process.T / scheme.n_steps)
    assert loss == pytest.approx(np.mean(running + U), rel=1e-10)
    assert grad.theta.shape == (1,)
    assert grad.x0.shape == (kernel_process.K,)


def test_bayes_loss_gradients_match_finite_differences(kernel_process, energy, scheme):
    transform = SpectralTransform(kernel_process.eigs)
    arch = ControlArch.preset('small', 1)
    base = init(arch, 3, zero_final=False)
    base = base.with_theta(base.theta + 0.1 * np.random.default_rng(3).standard_normal(base.theta.size))
    net = ControlNet(base)
    B = 3
    x0 = 0.5 * np.random.default_rng(4).standard_normal(kernel_process.K)
    noises = np.random.default_rng(5).standard_normal((scheme.n_steps, B, kernel_process.K))

    def loss(theta=base.theta, start=x0, log_sigma=np.log(0.5)):
        net.params = base.with_theta(theta)
        traj = simulate_coeffs(kernel_process, np.tile(start, (B, 1)), net, scheme, transform, noises=noises)
        return bayes_loss(traj, net, energy, kernel_process, scheme, sigma_obs=float(np.exp(log_sigma)))

    _, grad = loss()
    directions = np.random.default_rng(6)
    for _ in range(3):
        v = directions.standard_normal(base.theta.size)
        v /= np.linalg.norm(v)
        fd = _fd(lambda th: loss(theta=th)[0], base.theta, v, h=1e-5)
        assert float(grad.theta @ v) == pytest.approx(fd, rel=1e-4, abs=1e-8)
    v = directions.standard_normal(kernel_process.K)
    v /= np.linalg.norm(v)
    fd = _fd(lambda z: loss(start=z)[0], x0, v, h=1e-5)
    assert float(grad.x0 @ v) == pytest.approx(fd, rel=1e-4, abs=1e-8)
    fd = _fd(lambda s: loss(log_sigma=s)[0], np.log(0.5), 1.0, h=1e-5)
    assert grad.log_sigma == pytest.approx(fd, rel=1e-5)


def test_bayes_loss_needs_noise_record(kernel_process, energy, scheme, rng):
    transform = SpectralTransform(kernel_process.eigs)
    traj = simulate_coeffs(kernel_process, np.zeros((2, kernel_process.K)), ZeroControl(), scheme, transform, rng)
    traj.noises = None
    with pytest.raises(InvalidParameterError):
        bayes_loss(traj, ZeroControl(), energy, kernel_process, scheme)


def test_bayes_train_learns_initial_condition_and_sigma(kernel_process, energy, scheme, small_arch, tmp_path):
    energy.learnable_sigma = True
    config = BayesConfig(batch_size=4, n_iters=5, lr=1e-2, scheme=scheme, learnable_x0=True, seed=2,
                         checkpoint_every=5, log_every=0)

    params, x0, history = bayes_train(config, energy, kernel_process, arch=small_arch,
                                      checkpoint_dir=str(tmp_path), log_path=str(tmp_path / "log.jsonl"))

    assert isinstance(x0, SpectralField)
    assert np.any(x0.coeffs != 0.0)
    np.testing.assert_array_equal(params.extras['x0'], x0.coeffs)
    assert params.extras['log_sigma_obs'][0] != pytest.approx(np.log(0.5))
    assert history[-1]['sigma_obs'] == pytest.approx(np.exp(params.extras['log_sigma_obs'][0]))
    assert params.train_step == 5
    assert [r['iter'] for r in history] == [1, 2, 3, 4, 5]
    assert (tmp_path / "checkpoint_000005.json").exists()


def test_bayes_train_is_deterministic(kernel_process, energy, scheme, small_arch):
    config = BayesConfig(batch_size=4, n_iters=3, scheme=scheme, seed=1, log_every=0)

    one, x0_one, hist_one = bayes_train(config, energy, kernel_process, arch=small_arch)
    two, _, hist_two = bayes_train(config, energy, kernel_process, arch=small_arch)

    np.testing.assert_array_equal(one.theta, two.theta)
    assert [r['loss'] for r in hist_one] == [r['loss'] for r in hist_two]
    # fixed initial condition and observation scale
    np.testing.assert_array_equal(x0_one.coeffs, 0.0)
    assert one.extras['log_sigma_obs'][0] == pytest.approx(np.log(0.5))


def test_posterior_sample_with_zero_control(kernel_process, scheme, small_arch):
    params = init(small_arch, 0)
    params.extras['x0'] = np.linspace(-1.0, 1.0, kernel_process.K)
    transform = SpectralTransform(kernel_process.eigs)

    samples = posterior_sample(params, None, kernel_process, scheme, 5, rng=8)
    reference = simulate_coeffs(kernel_process, np.tile(params.extras['x0'], (5, 1)), ZeroControl(), scheme,
                                transform, rng=8)

    assert samples.values.shape == (5, kernel_process.eigs.grid.size)
    np.testing.assert_allclose(samples.values, transform.synthesis(reference.terminal()), atol=1e-12)


def test_posterior_sample_accepts_grid_initial_condition(cosine_process, scheme, small_arch):
    x0 = GridField.from_function(cosine_process.eigs.grid, np.cos)
    fine = cosine_process.eigs.grid.with_resolution((48,))

    samples = posterior_sample(init(small_arch, 0), x0, cosine_process, scheme, 3, rng=1, target_grid=fine)

    assert samples.grid == fine
    assert samples.values.shape == (3, 48)


def test_posterior_sample_rejects_empty_request(kernel_process, scheme, small_arch):
    with pytest.raises(InvalidParameterError):
        posterior_sample(init(small_arch, 0), None, kernel_process, scheme, 0, rng=1)


def test_affine_deviation(line_grid):
    x_a, x_b = np.zeros(line_grid.size), np.ones(line_grid.size)

    assert affine_deviation(LinearControl(2.0), 0.5, x_a, x_b, line_grid) < 1e-12
    assert affine_deviation(ZeroControl(), 0.5, x_a, x_b, line_grid) == 0.0
    # least-squares line through s^2 on [0, 1] misses by 1/6 at the ends
    assert affine_deviation(SquareControl(), 0.5, x_a, x_b, line_grid) == pytest.approx(1.0 / 6.0, abs=0.02)


@pytest.mark.slow
def test_posterior_samples_fit_the_context(kernel_process):
    assert kernel_process.eigs.gamma == pytest.approx(GP_REGRESSION_GAMMA)
    task = GPTask(grid=kernel_process.eigs.grid, max_points=30, n_context_range=(3, 20))
    sample = sample_gp_task(task, np.random.default_rng(0), hyper={'l1': 0.795, 'l2': 0.447},
                            n_context=8, n_target=10)
    energy = EnergyFunctional.from_sample(sample, sigma_obs=0.1)
    config = BayesConfig(batch_size=16, n_iters=1500, lr=1e-3, scheme=StepScheme(SchemeKind.EXPONENTIAL, 20),
                         seed=0, log_every=0)

    params, _, _ = bayes_train(config, energy, kernel_process, arch=ControlArch.preset('small', 1))
    samples = posterior_sample(params, None, kernel_process, config.scheme, 200, rng=1)

    mean = samples.values.mean(axis=0)[sample.observed_idx]
    fitted = np.sqrt(np.mean((mean - sample.observed_y) ** 2))
    assert fitted < 0.5 * np.sqrt(np.mean(sample.observed_y ** 2))


def test_uninformative_likelihood_leaves_the_prior_unchanged(kernel_process):
    energy = EnergyFunctional(grid=kernel_process.eigs.grid, observed_idx=[4, 16, 28], observed_y=[2.0, -1.0, 3.0],
                              target_idx=[10], sigma_obs=1e8)
    config = BayesConfig(batch_size=8, n_iters=30, lr=1e-3, scheme=StepScheme(SchemeKind.EXPONENTIAL, 4),
                         seed=0, log_every=0)

    params, x0, _ = bayes_train(config, energy, kernel_process, arch=ControlArch.preset('small', 1))

    np.testing.assert_array_equal(x0.coeffs, 0.0)
    field = GridField.from_function(kernel_process.eigs.grid, np.sin)
    assert np.max(np.abs(forward(params, 0.5, field).values)) < 1e-6

    samples = posterior_sample(params, x0, kernel_process, config.scheme, 4000, rng=np.random.default_rng(3))
    coeffs = SpectralTransform(kernel_process.eigs).analysis(samples.values)
    _, var = transition_arrays(kernel_process, kernel_process.T)
    assert marginal_check(coeffs, (np.zeros(kernel_process.K), var)).passed(z_tol=4.5)


@pytest.mark.slow
def test_posterior_matches_the_gp_oracle():
    hyper = {'l1': 1.0, 'l2': 0.447}
    grid = GridSpec.line(50, -2.0, 2.0)
    gamma, sigma = matched_process(hyper, T=1.0)
    p = OUBridgeParams(eigs=build_kernel_basis_1d(grid, gamma), sigma=sigma, T=1.0)
    task = GPTask(grid=grid, max_points=30, n_context_range=(3, 20))
    sample = sample_gp_task(task, np.random.default_rng(0), hyper=hyper, n_context=10, n_target=20)
    energy = EnergyFunctional.from_sample(sample, sigma_obs=0.1)
    config = BayesConfig(batch_size=32, n_iters=10000, lr=5e-4, scheme=StepScheme(SchemeKind.EXPONENTIAL, 20),
                         seed=0, log_every=0)

    params, x0, _ = bayes_train(config, energy, p)
    samples = posterior_sample(params, x0, p, config.scheme, 512, rng=1)

    errors = posterior_errors(samples, sample, gp_posterior_oracle(sample, noise_var=0.01))
    assert errors['mean_rmse'] <= 0.1
    assert errors['std_within_30pct'] >= 0.8


def test_posterior_presets():
    imputation = posterior_preset('imputation')
    assert imputation.gamma == IMPUTATION_GAMMA == 0.02
    assert imputation.sigma_obs ** 2 == pytest.approx(0.5)
    assert imputation.sigma_obs == IMPUTATION_SIGMA_OBS
    regression = posterior_preset('gp_regression')
    assert regression.gamma == GP_REGRESSION_GAMMA
    assert regression.sigma_obs is None
    with pytest.raises(InvalidParameterError):
        posterior_preset('nope')
