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

"""Bridge Matching: regress the control onto the bridge drift correction.

For endpoint pairs (x0, xT) drawn from a coupling, a time t and a state
X*_t of the pinned bridge are sampled, and the network is fit to the
per-mode control whose drift contribution sigma sqrt(lam) alpha equals the
Doob correction of the bridge at (t, X*_t).
"""
import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from fsbridge.control_net import ControlNet, init
from fsbridge.errors import InvalidParameterError, NumericalError, log_error
from fsbridge.models.control_params import ControlArch, ControlParams
from fsbridge.models.fields import FieldSet, GridSpec, SpectralField
from fsbridge.models.process import OUBridgeParams
from fsbridge.models.training import BMConfig, Coupling
from fsbridge.models.trajectory import StepScheme
from fsbridge.optim import EMA, Adam, learning_rate
from fsbridge.ou_bridge import bridge_marginal_arrays, h_correction, phi1, sample_bridge_states
from fsbridge.rng import RNGStreams
from fsbridge.sde_engine import simulate
from fsbridge.spectral_basis import SpectralTransform

logger = logging.getLogger(__name__)


def _require_noise(p: OUBridgeParams):
    if not p.sigma > 0:
        raise InvalidParameterError("Bridge Matching needs sigma > 0", f"sigma={p.sigma}")


def regression_target_arrays(p: OUBridgeParams, t, x_t: np.ndarray, x_T: np.ndarray,
                             clamp: Optional[float] = None) -> np.ndarray:
    """Batched target (B, K); ``t`` is a scalar or (B,) vector. Rows are
    rescaled to norm at most ``clamp`` when given."""
    _require_noise(p)
    t = np.asarray(t, dtype=np.float64)
    if np.any(t >= p.T):
        raise InvalidParameterError("Regression target is singular at t >= T", f"T={p.T}")
    tau = (p.T - t).reshape(-1, 1) if t.ndim else p.T - t
    target = h_correction(p.a, tau, x_t, x_T) / p.noise_scale
    if clamp is not None:
        norms = np.linalg.norm(np.atleast_2d(target), axis=-1, keepdims=True)
        factor = np.minimum(1.0, clamp / np.maximum(norms, 1e-300))
        target = target * (factor if target.ndim > 1 else factor[0])
    return target


def regression_target(p: OUBridgeParams, t: float, x_t: SpectralField, x_T: SpectralField) -> SpectralField:
    """Optimal control coefficients at (t, x_t) for the bridge pinned at ``x_T``.

    Raises:
        InvalidParameterError: If ``t >= T`` or ``sigma == 0``.
    """
    return SpectralField(eigs=p.eigs, coeffs=regression_target_arrays(p, t, x_t.coeffs, x_T.coeffs))


class BridgeOracleControl:
    """The exact bridge control toward fixed terminal coefficients; no parameters."""
    n_params = 0

    def __init__(self, p: OUBridgeParams, x_T: np.ndarray, transform: SpectralTransform):
        self.p = p
        self.x_T = np.asarray(x_T, dtype=np.float64)
        self.transform = transform

    def evaluate(self, t, x, grid: GridSpec):
        coeffs = self.transform.analysis(np.atleast_2d(x))
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (coeffs.shape[0],))
        return self.transform.synthesis(regression_target_arrays(self.p, t, coeffs, self.x_T)), t

    def backward(self, cache, cotangent):
        tau = (self.p.T - cache).reshape(-1, 1)
        m = np.exp(-self.p.a * tau)
        slope = -m * m / (tau * phi1(2.0 * self.p.a * tau) * self.p.noise_scale)
        g = slope * self.transform.synthesis_adjoint(np.atleast_2d(cotangent))
        return np.zeros(0), self.transform.analysis_adjoint(g)


@dataclass
class BMBatch:
    t: np.ndarray        # (B,)
    x_t: np.ndarray      # (B, K)
    x_T: np.ndarray      # (B, K)


def sample_bm_batch(p: OUBridgeParams, coupling: Coupling, config: BMConfig, transform: SpectralTransform,
                    rng: np.random.Generator) -> BMBatch:
    """Draw endpoint pairs, times and bridge states for one regression batch."""
    if coupling.grid != transform.grid:
        raise InvalidParameterError("Coupling grid differs from the training grid",
                                    f"{coupling.grid.resolution} vs {transform.grid.resolution}")
    B = config.batch_size
    x0g, xTg = coupling.sample(B, rng)
    x0, xT = transform.analysis(x0g), transform.analysis(xTg)
    if config.simulate_paths:
        times = config.scheme.times(p.T)
        states, _ = sample_bridge_states(p, x0, xT, times, rng)
        idx = rng.integers(0, config.scheme.n_steps, size=B)
        return BMBatch(t=times[idx], x_t=states[idx, np.arange(B)], x_T=xT)
    t = rng.uniform(0.0, p.T * (1.0 - config.terminal_margin), size=B)
    mean, var = bridge_marginal_arrays(p, t[:, None], x0, xT)
    x_t = mean + np.sqrt(var) * rng.standard_normal(mean.shape)
    return BMBatch(t=t, x_t=x_t, x_T=xT)


def bm_loss(control, p: OUBridgeParams, batch: BMBatch, transform: SpectralTransform,
            clamp: Optional[float] = None) -> Tuple[float, np.ndarray]:
    """Batch mean of 1/2 |alpha(t, x_t) - target|^2 in the grid quadrature norm, with its gradient."""
    B = batch.t.size
    grid = transform.grid
    out, cache = control.evaluate(batch.t, transform.synthesis(batch.x_t), grid)
    target = transform.synthesis(regression_target_arrays(p, batch.t, batch.x_t, batch.x_T, clamp))
    resid = out - target
    loss = 0.5 * transform.weight * float(np.sum(resid ** 2)) / B
    g_theta, _ = control.backward(cache, transform.weight * resid / B)
    return loss, g_theta


@dataclass
class BMState:
    """Mutable training state of one Bridge Matching run."""
    net: ControlNet
    adam: Adam
    ema: EMA
    step: int = 0
    history: List[dict] = field(default_factory=list)

    @property
    def params(self) -> ControlParams:
        return self.net.params

    def ema_params(self) -> ControlParams:
        theta = self.params.theta if self.ema.value is None else self.ema.value
        return self.params.with_theta(theta, train_step=self.step)


def bm_step(state: BMState, config: BMConfig, coupling: Coupling, p: OUBridgeParams,
            transform: SpectralTransform, rng: np.random.Generator) -> BMState:
    """One regression step: sample, evaluate loss, Adam update, EMA update.

    Raises:
        NumericalError: If the loss or gradient is not finite.
    """
    start = time.perf_counter()
    batch = sample_bm_batch(p, coupling, config, transform, rng)
    loss, grad = bm_loss(state.net, p, batch, transform, config.target_clamp)
    grad_norm = float(np.linalg.norm(grad))
    if not (np.isfinite(loss) and np.isfinite(grad_norm)):
        error = NumericalError("Non-finite Bridge Matching loss", f"loss={loss}, grad_norm={grad_norm}",
                               step=state.step)
        log_error(logger, error, "Bridge Matching")
        raise error
    lr = learning_rate(config.lr, state.step, config.n_iters, config.lr_schedule)
    theta = state.adam.update(state.params.theta, grad, lr)
    state.net.params = state.params.with_theta(theta, train_step=state.step + 1)
    state.ema.update(theta)
    state.step += 1
    state.history.append({
        'iter': state.step,
        'loss': loss,
        'grad_norm': grad_norm,
        'wall_ms': (time.perf_counter() - start) * 1e3,
    })
    return state


def bm_train(config: BMConfig, coupling: Coupling, p: OUBridgeParams, arch: Optional[ControlArch] = None,
             init_params: Optional[ControlParams] = None, checkpoint_dir: Optional[str] = None,
             log_path: Optional[str] = None) -> Tuple[ControlParams, List[dict]]:
    """Train a control network by Bridge Matching.

    Args:
        config: Training settings.
        coupling: Joint law of the endpoint fields, on the eigen-system grid.
        p: Process constants (eigen-system, sigma, T).
        arch: Network architecture (default preset for the grid dimension).
        init_params: Optional starting parameters; otherwise ``init(arch, config.seed)``.
        checkpoint_dir: Directory for periodic EMA checkpoints.
        log_path: JSON-lines file receiving one record per iteration.

    Returns:
        (EMA parameters, training log records)
    """
    _require_noise(p)
    arch = arch or ControlArch.preset('default', p.eigs.grid.dims)
    params = init_params or init(arch, config.seed)
    transform = SpectralTransform(p.eigs)
    streams = RNGStreams(config.seed)
    rng = streams.stream('bm.data')
    state = BMState(net=ControlNet(params), adam=Adam(size=params.theta.size), ema=EMA(rate=config.ema_rate))
    logger.info(f"Bridge Matching: {config.n_iters} iterations, batch {config.batch_size}, "
                f"{params.theta.size} parameters, K={p.K}")
    log_handle = open(log_path, 'w') if log_path else None
    try:
        for _ in range(config.n_iters):
            bm_step(state, config, coupling, p, transform, rng)
            record = state.history[-1]
            if log_handle:
                log_handle.write(json.dumps(record) + '\n')
            if config.log_every and state.step % config.log_every == 0:
                logger.info(f"iter {state.step}: loss={record['loss']:.6g} grad_norm={record['grad_norm']:.4g}")
            if checkpoint_dir and config.checkpoint_every and state.step % config.checkpoint_every == 0:
                state.ema_params().save(os.path.join(checkpoint_dir, f"checkpoint_{state.step:06d}.json"))
    finally:
        if log_handle:
            log_handle.close()
    return state.ema_params(), state.history


def bm_sample(params: ControlParams, p: OUBridgeParams, x0: FieldSet, scheme: StepScheme,
              rng, target_grid: Optional[GridSpec] = None) -> FieldSet:
    """Push initial fields through the learned SDE; returns terminal fields on ``target_grid``."""
    grid = target_grid or p.eigs.grid
    traj = simulate(p, x0, ControlNet(params), scheme, target_grid=grid, rng=rng)
    values = SpectralTransform(p.eigs, grid).synthesis(traj.terminal())
    return FieldSet(grid=grid, values=values, labels=x0.labels)
