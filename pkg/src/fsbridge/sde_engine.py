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

"""Controlled SDE simulation in eigen coordinates with gradient replay.

Every scheme advances each mode with the same affine rule

    X(i+1) = A * X(i) + Bc * alpha_k(i) + Nz * xi(i)

where ``alpha_k`` is the spectral projection of the control evaluated on
the simulation grid and ``xi`` is standard normal noise drawn directly in
spectral coordinates. ``replay_gradient`` walks this recursion backwards
over the stored states (discretize-then-differentiate).
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Tuple, Union

import numpy as np

from fsbridge.errors import InvalidParameterError, NumericalError, log_error
from fsbridge.models.fields import FieldSet, GridField, GridSpec
from fsbridge.models.process import OUBridgeParams
from fsbridge.models.trajectory import SchemeKind, StepScheme, Trajectory
from fsbridge.ou_bridge import integrated_decay, phi1
from fsbridge.rng import path_rng
from fsbridge.spectral_basis import ResampleMethod, SpectralTransform, resample_initial

logger = logging.getLogger(__name__)

RunningGrad = Callable[[int, np.ndarray, float], np.ndarray]


class ControlFn(Protocol):
    n_params: int

    def evaluate(self, t: np.ndarray, x: np.ndarray, grid: GridSpec): ...

    def backward(self, cache, cotangent: np.ndarray) -> Tuple[np.ndarray, np.ndarray]: ...


@dataclass
class ControlGradient:
    """Gradient of a pathwise objective w.r.t. the control parameters and X(0)."""
    theta: np.ndarray
    x0: np.ndarray  # (B, K) w.r.t. the initial spectral coefficients
    transform: SpectralTransform

    @property
    def x0_grid(self) -> np.ndarray:
        """(B, N) gradient w.r.t. initial grid values on the simulation grid."""
        return self.transform.analysis_adjoint(self.x0)


def step_coefficients(p: OUBridgeParams, scheme: StepScheme, dt: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-mode (A, Bc, Nz) of one step of length ``dt``."""
    a, lam, sigma = p.a, p.lam, p.sigma
    if scheme.kind == SchemeKind.EULER_MARUYAMA:
        return 1.0 - a * dt, sigma * np.sqrt(lam) * dt, sigma * np.sqrt(lam * dt)
    # exact semigroup; the control is held constant over the step
    return (np.exp(-a * dt),
            sigma * np.sqrt(lam) * dt * phi1(a * dt),
            np.sqrt(sigma ** 2 * lam * integrated_decay(a, dt)))


def _initial_values(x0, grid: GridSpec, batch: int) -> np.ndarray:
    if isinstance(x0, FieldSet):
        fields = [x0[i] for i in range(len(x0))]
    elif isinstance(x0, GridField):
        fields = [x0] * batch
    else:
        values = np.atleast_2d(np.asarray(x0, dtype=np.float64))
        if values.shape[1] != grid.size:
            raise InvalidParameterError("Initial values do not match the simulation grid",
                                        f"{values.shape[1]} values for {grid.size} points")
        return values
    out = []
    for f in fields:
        if f.grid != grid:
            upsampling = all(rt >= rs for rs, rt in zip(f.grid.resolution, grid.resolution))
            f = resample_initial(f, grid, ResampleMethod.BILINEAR if upsampling else ResampleMethod.SPECTRAL)
        out.append(f.values)
    return np.stack(out)


def _draw_noises(rng: Union[np.random.Generator, int], n: int, batch: int, K: int) -> np.ndarray:
    if isinstance(rng, np.random.Generator):
        return rng.standard_normal((n, batch, K))
    # integer seed: one stream per path
    return np.stack([path_rng(int(rng), b).standard_normal((n, K)) for b in range(batch)], axis=1)


def _fail(message: str, details: str, step: int):
    error = NumericalError(message, details, step=step)
    log_error(logger, error, "Simulation")
    raise error


def simulate_coeffs(p: OUBridgeParams, coeffs0: np.ndarray, control: ControlFn, scheme: StepScheme,
                    transform: SpectralTransform, rng: Union[np.random.Generator, int, None] = None,
                    noises: Optional[np.ndarray] = None) -> Trajectory:
    """Simulate from spectral initial coefficients (B, K); see ``simulate``."""
    coeffs0 = np.atleast_2d(np.asarray(coeffs0, dtype=np.float64))
    B, K = coeffs0.shape
    times = scheme.times(p.T)
    n = scheme.n_steps
    if noises is None:
        if rng is None:
            raise InvalidParameterError("simulate needs an rng or recorded noises")
        noises = _draw_noises(rng, n, B, K)
    elif noises.shape != (n, B, K):
        raise InvalidParameterError("Noise record has the wrong shape", f"{noises.shape} vs {(n, B, K)}")
    A, Bc, Nz = step_coefficients(p, scheme, p.T / n)
    grid = transform.grid
    states = np.empty((n + 1, B, K))
    controls = np.empty((n, B, K))
    states[0] = coeffs0
    for i in range(n):
        out, _ = control.evaluate(np.full(B, times[i]), transform.synthesis(states[i]), grid)
        if not np.all(np.isfinite(out)):
            _fail("Control produced non-finite values", f"t={times[i]:.6g}", i)
        controls[i] = transform.analysis(out)
        states[i + 1] = A * states[i] + Bc * controls[i] + Nz * noises[i]
        if not np.all(np.isfinite(states[i + 1])):
            _fail("State diverged", f"t={times[i + 1]:.6g}", i)
    return Trajectory(eigs=p.eigs, times=times, states=states, noises=noises, control_evals=controls,
                      scheme=scheme)


def simulate(p: OUBridgeParams, x0, control: ControlFn, scheme: StepScheme,
             target_grid: Optional[GridSpec] = None, rng: Union[np.random.Generator, int, None] = None,
             batch: int = 1, noises: Optional[np.ndarray] = None) -> Trajectory:
    """Simulate dX = (A X + sigma Q^{1/2} alpha) dt + sigma dW^Q in eigen coordinates.

    Args:
        p: Process constants.
        x0: Initial condition: a GridField (repeated ``batch`` times), a
            FieldSet, or a (B, N) array on ``target_grid``. Fields on another
            resolution are upsampled bilinearly or truncated spectrally.
        control: Object with ``evaluate(t, x, grid)`` / ``backward``.
        scheme: Step rule and number of steps.
        target_grid: Grid on which the control is evaluated (default: the
            eigen-system grid).
        rng: Generator shared by the batch, or an integer base seed giving
            each path its own stream.
        batch: Number of paths when ``x0`` is a single field.
        noises: Optional (n, B, K) noise record to replay.

    Returns:
        Trajectory: States, noises and projected control values.

    Raises:
        NumericalError: If the control output or the state stops being finite.
    """
    grid = p.eigs.grid if target_grid is None else target_grid
    transform = SpectralTransform(p.eigs, grid)
    values = _initial_values(x0, grid, batch)
    traj = simulate_coeffs(p, transform.analysis(values), control, scheme, transform, rng, noises)
    logger.debug(f"Simulated {traj.batch} path(s), {scheme.n_steps} {scheme.kind} steps on grid {grid.resolution}")
    return traj


def running_cost(traj: Trajectory) -> np.ndarray:
    """Per-path sum_i 1/2 |alpha_k(i)|^2 dt."""
    if traj.control_evals is None:
        raise InvalidParameterError("Trajectory has no recorded control values")
    return 0.5 * np.einsum('ibk,i->b', traj.control_evals ** 2, traj.dt)


def kinetic_running_grad(i: int, alpha: np.ndarray, dt: float) -> np.ndarray:
    return alpha * dt


def replay_gradient(traj: Trajectory, p: OUBridgeParams, control: ControlFn, terminal_grad: np.ndarray,
                    running_grad_fn: Optional[RunningGrad] = None,
                    target_grid: Optional[GridSpec] = None, scheme: Optional[StepScheme] = None) -> ControlGradient:
    """Reverse-mode pass through a stored trajectory.

    The objective is ``sum_b [sum_i r(alpha(i)) + G(X_b(n))]``; the caller
    supplies dG/dX(n) as ``terminal_grad`` (B, K) and, optionally,
    ``running_grad_fn(i, alpha_k, dt)`` returning dr/dalpha_k.

    Raises:
        InvalidParameterError: If the trajectory carries no noise record.
    """
    if traj.noises is None:
        raise InvalidParameterError("Trajectory has no noise record", "replay needs the simulated noises")
    scheme = scheme or traj.scheme
    if scheme is None:
        raise InvalidParameterError("Unknown step scheme", "pass the scheme the trajectory was simulated with")
    if scheme.n_steps != traj.n_steps:
        raise InvalidParameterError("Scheme does not match trajectory", f"{scheme.n_steps} vs {traj.n_steps} steps")
    grid = p.eigs.grid if target_grid is None else target_grid
    transform = SpectralTransform(p.eigs, grid)
    dt = p.T / traj.n_steps
    A, Bc, _ = step_coefficients(p, scheme, dt)
    g = np.array(terminal_grad, dtype=np.float64).reshape(traj.batch, p.K)
    g_theta = np.zeros(control.n_params)
    for i in reversed(range(traj.n_steps)):
        out, cache = control.evaluate(np.full(traj.batch, traj.times[i]), transform.synthesis(traj.states[i]), grid)
        g_alpha = Bc * g
        if running_grad_fn is not None:
            g_alpha = g_alpha + running_grad_fn(i, transform.analysis(out), dt)
        g_step, g_x = control.backward(cache, transform.analysis_adjoint(g_alpha))
        g_theta += g_step
        g = A * g + transform.synthesis_adjoint(g_x)
    return ControlGradient(theta=g_theta, x0=g, transform=transform)
