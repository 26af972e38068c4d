'''
MIT License

Copyright (c) 2024 fsbridge contributors

Permission is hereby granted, free of charge, to any person obtaining a copy
of this software and associated documentation files (the "Software"), to deal
in the Software without restriction, including without limitation the rights
to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
copies of the Software, and to permit persons to whom the Software is
furnished to do so, subject to the following conditions:

The above copyright notice and this permission notice shall be included in all
copies or substantial portions of the Software.

THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
SOFTWARE.
'''

"""Posterior sampling by relative-entropy control.

The controlled SDE is trained so that its terminal law is the posterior
pi_T proportional to exp(-U) mu_prior. The loss per path is the kinetic
running cost sum 1/2 |alpha_k|^2 dt plus the terminal cost

    U(x) + log dmu_prior/dN(0, Q_inf)(x) - log dmu_T/dN(0, Q_inf)(x)

and its gradient is taken pathwise by replaying the stored noises.
"""
import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np

from fsbridge.control_net import ControlNet, init
from fsbridge.errors import GridMismatchError, InvalidParameterError, NumericalError, log_error
from fsbridge.models.control_params import ControlArch, ControlParams
from fsbridge.models.fields import FieldSet, GridField, GridSpec, SpectralField
from fsbridge.models.process import OUBridgeParams
from fsbridge.models.tasks import EnergyFunctional
from fsbridge.models.training import BayesConfig
from fsbridge.models.trajectory import StepScheme, Trajectory
from fsbridge.optim import Adam, learning_rate
from fsbridge.ou_bridge import log_rn_density_arrays, log_rn_density_grad_x, log_rn_density_grad_y
from fsbridge.rng import RNGStreams
from fsbridge.sde_engine import kinetic_running_grad, replay_gradient, running_cost, simulate_coeffs
from fsbridge.spectral_basis import SpectralTransform, to_spectral

logger = logging.getLogger(__name__)

GP_REGRESSION_GAMMA = 0.2
IMPUTATION_GAMMA = 0.02
IMPUTATION_SIGMA_OBS = float(np.sqrt(0.5))


@dataclass(frozen=True)
class PosteriorPreset:
    """Kernel width of the prior and observation noise of a task family.

    ``sigma_obs=None`` leaves the noise level to the task (or to learning).
    """
    gamma: float
    sigma_obs: Optional[float] = None


PRESETS = {
    'gp_regression': PosteriorPreset(gamma=GP_REGRESSION_GAMMA),
    'imputation': PosteriorPreset(gamma=IMPUTATION_GAMMA, sigma_obs=IMPUTATION_SIGMA_OBS),
}


def posterior_preset(name: str) -> PosteriorPreset:
    """Look up a named preset.

    Raises:
        InvalidParameterError: If the name is unknown.
    """
    try:
        return PRESETS[name]
    except KeyError:
        raise InvalidParameterError("Unknown posterior preset", f"{name}; known: {', '.join(PRESETS)}")


def energy_arrays(values: np.ndarray, energy: EnergyFunctional, sigma_obs: Optional[float] = None):
    """U for a batch of grid values (B, N).

    Returns:
        (U (B,), dU/dvalues (B, N), dU/dlog(sigma_obs) (B,))
    """
    values = np.atleast_2d(values)
    sigma = energy.sigma_obs if sigma_obs is None else sigma_obs
    idx, y = energy.likelihood_set()
    resid = values[:, idx] - y
    sq = np.sum(resid ** 2, axis=1)
    U = sq / (2.0 * sigma ** 2)
    g_values = np.zeros_like(values)
    np.add.at(g_values, (slice(None), idx), resid / sigma ** 2)
    g_log_sigma = -sq / sigma ** 2
    if energy.learnable_sigma:
        U = U + idx.size * np.log(sigma)
        g_log_sigma = g_log_sigma + idx.size
    return U, g_values, g_log_sigma


@dataclass
class TerminalCost:
    value: np.ndarray         # (B,)
    grad_xT: np.ndarray       # (B, K)
    grad_x0: np.ndarray       # (B, K)
    grad_prior: np.ndarray    # (B, K)
    grad_log_sigma: np.ndarray  # (B,)


def terminal_cost_arrays(xT: np.ndarray, energy: EnergyFunctional, p: OUBridgeParams, transform: SpectralTransform,
                         x0: np.ndarray, prior: Optional[np.ndarray] = None,
                         sigma_obs: Optional[float] = None) -> TerminalCost:
    """Batched terminal cost on spectral coefficients with its gradients.

    ``prior`` is the prior mean's initial condition; ``None`` ties it to
    ``x0``, in which case only the energy is evaluated.
    """
    if energy.grid != transform.grid:
        raise GridMismatchError("Energy grid differs from the simulation grid",
                                f"{energy.grid.resolution} vs {transform.grid.resolution}")
    xT = np.atleast_2d(xT)
    x0 = np.broadcast_to(x0, xT.shape)
    U, g_values, g_log_sigma = energy_arrays(transform.synthesis(xT), energy, sigma_obs)
    grad_xT = transform.synthesis_adjoint(g_values)
    grad_x0 = np.zeros_like(xT)
    grad_prior = np.zeros_like(xT)
    value = U
    if prior is not None:
        prior = np.broadcast_to(prior, xT.shape)
        value = value + np.sum(log_rn_density_arrays(p, p.T, prior, xT)
                               - log_rn_density_arrays(p, p.T, x0, xT), axis=1)
        grad_xT = grad_xT + log_rn_density_grad_y(p, p.T, prior, xT) - log_rn_density_grad_y(p, p.T, x0, xT)
        grad_prior = log_rn_density_grad_x(p, p.T, prior, xT)
        grad_x0 = -log_rn_density_grad_x(p, p.T, x0, xT)
    return TerminalCost(value, grad_xT, grad_x0, grad_prior, g_log_sigma)


def terminal_cost(xT: GridField, energy: EnergyFunctional, p: OUBridgeParams, x0: GridField,
                  prior_x0: Optional[GridField] = None, sigma_obs: Optional[float] = None) -> float:
    """-log dpi_T/dmu_T at ``xT``.

    Args:
        xT: Terminal field.
        energy: Likelihood energy U.
        p: Process constants.
        x0: Initial condition of the simulated (reference) process.
        prior_x0: Initial condition defining the prior mean; defaults to
            ``x0``, which cancels the two density terms.
        sigma_obs: Observation scale overriding the energy's own.

    Raises:
        GridMismatchError: If the fields are not on the eigen-system grid.
    """
    for f in (xT, x0) + ((prior_x0,) if prior_x0 is not None else ()):
        if f.grid != p.eigs.grid:
            raise GridMismatchError("Field not on the eigen-system grid", f"{f.grid.resolution}")
    transform = SpectralTransform(p.eigs)
    prior = None if prior_x0 is None else to_spectral(prior_x0, p.eigs).coeffs
    cost = terminal_cost_arrays(to_spectral(xT, p.eigs).coeffs, energy, p, transform,
                                to_spectral(x0, p.eigs).coeffs, prior, sigma_obs)
    return float(cost.value[0])


@dataclass
class BayesGradient:
    theta: np.ndarray
    x0: np.ndarray          # (K,) for an initial condition shared by the batch
    log_sigma: float


def bayes_loss(traj: Trajectory, control, energy: EnergyFunctional, p: OUBridgeParams,
               scheme: Optional[StepScheme] = None, sigma_obs: Optional[float] = None,
               prior: Optional[np.ndarray] = None) -> Tuple[float, BayesGradient]:
    """Batch mean of running + terminal cost and its pathwise gradient.

    Raises:
        InvalidParameterError: If the trajectory has no noise record.
    """
    if traj.noises is None:
        raise InvalidParameterError("Trajectory has no noise record", "bayes_loss needs the simulated noises")
    B = traj.batch
    transform = SpectralTransform(p.eigs)
    term = terminal_cost_arrays(traj.terminal(), energy, p, transform, traj.states[0], prior, sigma_obs)
    loss = float(np.mean(running_cost(traj) + term.value))

    def running_grad(i, alpha, dt):
        return kinetic_running_grad(i, alpha, dt) / B

    grads = replay_gradient(traj, p, control, term.grad_xT / B, running_grad, scheme=scheme)
    g_x0 = (grads.x0.sum(axis=0) + term.grad_x0.sum(axis=0) / B)
    return loss, BayesGradient(theta=grads.theta, x0=g_x0, log_sigma=float(np.mean(term.grad_log_sigma)))


@dataclass
class BayesState:
    net: ControlNet
    x0: np.ndarray
    log_sigma: float
    adam: Adam
    step: int = 0
    history: List[dict] = field(default_factory=list)

    def result(self) -> ControlParams:
        params = self.net.params.with_theta(self.net.params.theta, train_step=self.step)
        params.extras['x0'] = self.x0.copy()
        params.extras['log_sigma_obs'] = np.array([self.log_sigma])
        return params


def bayes_step(state: BayesState, config: BayesConfig, energy: EnergyFunctional, p: OUBridgeParams,
               transform: SpectralTransform, rng: np.random.Generator) -> BayesState:
    """simulate -> loss/gradient -> Adam update of [theta, x0?, log sigma?]."""
    start = time.perf_counter()
    B = config.batch_size
    traj = simulate_coeffs(p, np.tile(state.x0, (B, 1)), state.net, config.scheme, transform, rng)
    sigma = float(np.exp(state.log_sigma))
    loss, grad = bayes_loss(traj, state.net, energy, p, config.scheme, sigma_obs=sigma)
    parts = [grad.theta]
    if config.learnable_x0:
        parts.append(grad.x0)
    if energy.learnable_sigma:
        parts.append(np.array([grad.log_sigma]))
    flat_grad = np.concatenate(parts)
    grad_norm = float(np.linalg.norm(flat_grad))
    if not (np.isfinite(loss) and np.isfinite(grad_norm)):
        error = NumericalError("Non-finite posterior loss", f"loss={loss}, grad_norm={grad_norm}", step=state.step)
        log_error(logger, error, "Bayesian learning")
        raise error
    flat = np.concatenate([state.net.params.theta]
                          + ([state.x0] if config.learnable_x0 else [])
                          + ([np.array([state.log_sigma])] if energy.learnable_sigma else []))
    flat = state.adam.update(flat, flat_grad, learning_rate(config.lr, state.step, config.n_iters, config.lr_schedule))
    n_theta = state.net.params.theta.size
    state.net.params = state.net.params.with_theta(flat[:n_theta], train_step=state.step + 1)
    offset = n_theta
    if config.learnable_x0:
        state.x0 = flat[offset:offset + p.K]
        offset += p.K
    if energy.learnable_sigma:
        state.log_sigma = float(flat[offset])
    state.step += 1
    state.history.append({
        'iter': state.step,
        'loss': loss,
        'grad_norm': grad_norm,
        'sigma_obs': float(np.exp(state.log_sigma)),
        'wall_ms': (time.perf_counter() - start) * 1e3,
    })
    return state


def bayes_train(config: BayesConfig, energy: EnergyFunctional, p: OUBridgeParams,
                arch: Optional[ControlArch] = None, x0: Optional[GridField] = None,
                checkpoint_dir: Optional[str] = None,
                log_path: Optional[str] = None) -> Tuple[ControlParams, SpectralField, List[dict]]:
    """Train the posterior-sampling control.

    Args:
        config: Training settings.
        energy: Likelihood energy on the eigen-system grid.
        p: Process constants.
        arch: Network architecture (default preset for the grid dimension).
        x0: Initial condition (default zero); learned when ``config.learnable_x0``.
        checkpoint_dir: Directory for periodic checkpoints.
        log_path: JSON-lines file receiving one record per iteration.

    Returns:
        (parameters with ``x0`` and ``log_sigma_obs`` extras, initial condition, log records)
    """
    arch = arch or ControlArch.preset('default', p.eigs.grid.dims)
    transform = SpectralTransform(p.eigs)
    start = np.zeros(p.K) if x0 is None else to_spectral(x0, p.eigs).coeffs
    params = init(arch, config.seed)
    n_extra = (p.K if config.learnable_x0 else 0) + (1 if energy.learnable_sigma else 0)
    state = BayesState(net=ControlNet(params), x0=start.copy(), log_sigma=float(np.log(energy.sigma_obs)),
                       adam=Adam(size=params.theta.size + n_extra))
    rng = RNGStreams(config.seed).stream('bayes.noise')
    logger.info(f"Posterior training: {config.n_iters} iterations, {config.batch_size} paths, "
                f"{config.scheme.n_steps} steps, K={p.K}")
    log_handle = open(log_path, 'w') if log_path else None
    try:
        for _ in range(config.n_iters):
            bayes_step(state, config, energy, p, transform, rng)
            record = state.history[-1]
            if log_handle:
                log_handle.write(json.dumps(record) + '\n')
            if config.log_every and state.step % config.log_every == 0:
                logger.info(f"iter {state.step}: loss={record['loss']:.6g} grad_norm={record['grad_norm']:.4g} "
                            f"sigma_obs={record['sigma_obs']:.4g}")
            if checkpoint_dir and config.checkpoint_every and state.step % config.checkpoint_every == 0:
                state.result().save(os.path.join(checkpoint_dir, f"checkpoint_{state.step:06d}.json"))
    finally:
        if log_handle:
            log_handle.close()
    return state.result(), SpectralField(eigs=p.eigs, coeffs=state.x0), state.history


def posterior_sample(params: ControlParams, x0: Union[GridField, SpectralField, None], p: OUBridgeParams,
                     scheme: StepScheme, n: int, rng, target_grid: Optional[GridSpec] = None) -> FieldSet:
    """Draw ``n`` terminal fields of the controlled SDE.

    ``x0=None`` uses the initial condition stored with the parameters (zero
    if none was stored).
    """
    if n < 1:
        raise InvalidParameterError("n must be positive", f"n={n}")
    if x0 is None:
        coeffs = params.extras.get('x0', np.zeros(p.K))
    elif isinstance(x0, SpectralField):
        coeffs = x0.coeffs
    else:
        coeffs = to_spectral(x0, p.eigs).coeffs
    grid = target_grid or p.eigs.grid
    transform = SpectralTransform(p.eigs, grid)
    traj = simulate_coeffs(p, np.tile(coeffs, (n, 1)), ControlNet(params), scheme, transform, rng)
    return FieldSet(grid=grid, values=transform.synthesis(traj.terminal()))


def affine_deviation(control, t: float, x_a: np.ndarray, x_b: np.ndarray, grid: GridSpec, n: int = 21) -> float:
    """Max deviation of the control along the segment x_a -> x_b from its
    least-squares affine fit in the segment parameter, relative to its range."""
    s = np.linspace(0.0, 1.0, n)
    xs = (1.0 - s)[:, None] * x_a + s[:, None] * x_b
    out, _ = control.evaluate(np.full(n, t), xs, grid)
    design = np.stack([np.ones(n), s], axis=1)
    coef, *_ = np.linalg.lstsq(design, out, rcond=None)
    span = np.ptp(out)
    return float(np.max(np.abs(out - design @ coef)) / span) if span > 0 else 0.0
