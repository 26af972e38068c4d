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

"""Closed-form per-mode analytics of the OU process and its bridge.

In eigen coordinates each mode k evolves independently as

    dX_k = -a_k X_k dt + sigma sqrt(lam_k) dW_k

The scalar operations below take an ``OUBridgeParams`` and a mode index;
the array helpers (``*_arrays`` and the underscore functions) broadcast over
all modes and batch dimensions and are what the simulators use.
"""
import logging
from typing import Optional, Tuple

import numpy as np

from fsbridge.errors import InvalidParameterError
from fsbridge.models.eigen_system import BasisKind, EigenSystem
from fsbridge.models.fields import GridSpec, SpectralField
from fsbridge.models.process import CoordGaussian, OUBridgeParams
from fsbridge.models.trajectory import Trajectory

logger = logging.getLogger(__name__)

SMALL_EXPONENT = 1e-6


def phi1(z):
    """(1 - exp(-z)) / z with its series near zero."""
    z = np.asarray(z, dtype=np.float64)
    small = np.abs(z) < SMALL_EXPONENT
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 - z / 2.0 + z * z / 6.0, -np.expm1(-safe) / safe)


def integrated_decay(a, s):
    """u(s) = (1 - exp(-2 a s)) / (2 a); the transition variance is sigma^2 lam u(s)."""
    a, s = np.asarray(a, dtype=np.float64), np.asarray(s, dtype=np.float64)
    return s * phi1(2.0 * a * s)


def transition_arrays(p: OUBridgeParams, tau) -> Tuple[np.ndarray, np.ndarray]:
    """Mean factors and variances of X(t + tau) | X(t) for every mode."""
    m = np.exp(-p.a * tau)
    return m, p.sigma ** 2 * p.lam * integrated_decay(p.a, tau)


def _check_mode(p: OUBridgeParams, k: int):
    if not 0 <= k < p.K:
        raise InvalidParameterError("Mode index out of range", f"k={k}, K={p.K}")


def transition_moments(p: OUBridgeParams, k: int, tau: float) -> CoordGaussian:
    """Law of the k-th coordinate after time ``tau`` started from 1.

    Returns:
        CoordGaussian: ``mean`` is the decay factor ``exp(-a_k tau)``, ``var``
        is ``sigma^2 lam_k (1 - exp(-2 a_k tau)) / (2 a_k)``.

    Raises:
        InvalidParameterError: If ``tau`` lies outside ``[0, T]``.
    """
    _check_mode(p, k)
    if not 0.0 <= tau <= p.T:
        raise InvalidParameterError("tau must lie in [0, T]", f"tau={tau}, T={p.T}")
    a, lam = p.a[k], p.lam[k]
    return CoordGaussian(mean=float(np.exp(-a * tau)),
                         var=float(p.sigma ** 2 * lam * integrated_decay(a, tau)))


def _log_q(a, lam, sigma, t, x, y):
    m = np.exp(-a * t)
    u = integrated_decay(a, t)
    var = sigma ** 2 * lam * u
    s_inf = sigma ** 2 * lam / (2.0 * a)
    return -0.5 * np.log(2.0 * a * u) - (y - m * x) ** 2 / (2.0 * var) + y ** 2 / (2.0 * s_inf)


def _log_q_grad_x(a, lam, sigma, t, x, y):
    m = np.exp(-a * t)
    return m * (y - m * x) / (sigma ** 2 * lam * integrated_decay(a, t))


def _log_q_grad_y(a, lam, sigma, t, x, y):
    m = np.exp(-a * t)
    var = sigma ** 2 * lam * integrated_decay(a, t)
    return -(y - m * x) / var + y * 2.0 * a / (sigma ** 2 * lam)


def _require_noise(p: OUBridgeParams):
    if not p.sigma > 0:
        raise InvalidParameterError("The Radon-Nikodym density needs sigma > 0", f"sigma={p.sigma}")


def log_rn_density(p: OUBridgeParams, k: int, t: float, x: float, y: float) -> float:
    """log of the density of N(e^{-a t} x, Sigma(t)) w.r.t. N(0, s_inf) at ``y``.

    Raises:
        InvalidParameterError: If ``t <= 0`` or ``sigma == 0``.
    """
    _check_mode(p, k)
    if not t > 0:
        raise InvalidParameterError("The density degenerates at t <= 0", f"t={t}")
    _require_noise(p)
    return float(_log_q(p.a[k], p.lam[k], p.sigma, t, x, y))


def log_rn_density_arrays(p: OUBridgeParams, t: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-mode log q_t(x_k, y_k); ``x`` and ``y`` broadcast against (..., K)."""
    if not t > 0:
        raise InvalidParameterError("The density degenerates at t <= 0", f"t={t}")
    _require_noise(p)
    return _log_q(p.a, p.lam, p.sigma, t, x, y)


def log_rn_density_grad_y(p: OUBridgeParams, t: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    _require_noise(p)
    return _log_q_grad_y(p.a, p.lam, p.sigma, t, x, y)


def log_rn_density_grad_x(p: OUBridgeParams, t: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    _require_noise(p)
    return _log_q_grad_x(p.a, p.lam, p.sigma, t, x, y)


def h_correction(a, tau, x, x_T):
    """Doob correction m / u(tau) (x_T - m x), m = exp(-a tau); free of sigma and lam."""
    m = np.exp(-a * tau)
    return m / (tau * phi1(2.0 * a * tau)) * (x_T - m * x)


def bridge_drift(p: OUBridgeParams, k: int, t: float, x: float, x_T: float) -> float:
    """Total drift of the k-th bridge coordinate at time ``t``.

    Raises:
        InvalidParameterError: If ``t >= T``.
    """
    _check_mode(p, k)
    if not t < p.T:
        raise InvalidParameterError("Bridge drift is singular at t >= T", f"t={t}, T={p.T}")
    a = p.a[k]
    return float(-a * x + h_correction(a, p.T - t, x, x_T))


def _bridge_moments(a, lam, sigma, t, T, x0, xT):
    u_t = integrated_decay(a, t)
    u_tau = integrated_decay(a, T - t)
    u_T = integrated_decay(a, T)
    mean = np.exp(-a * t) * x0 + u_t * np.exp(-a * (T - t)) / u_T * (xT - np.exp(-a * T) * x0)
    var = sigma ** 2 * lam * u_t * u_tau / u_T
    return mean, var


def bridge_marginal(p: OUBridgeParams, k: int, t: float, x0: float, xT: float) -> CoordGaussian:
    """Law of X_k(t) given X_k(0) = x0 and X_k(T) = xT.

    Raises:
        InvalidParameterError: If ``t`` lies outside ``[0, T]``.
    """
    _check_mode(p, k)
    if not 0.0 <= t <= p.T:
        raise InvalidParameterError("t must lie in [0, T]", f"t={t}, T={p.T}")
    mean, var = _bridge_moments(p.a[k], p.lam[k], p.sigma, t, p.T, x0, xT)
    return CoordGaussian(mean=float(mean), var=float(max(var, 0.0)))


def bridge_marginal_arrays(p: OUBridgeParams, t, x0: np.ndarray, xT: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Batched bridge marginal; ``t`` may be a (B, 1) column for per-row times."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0) or np.any(t > p.T):
        raise InvalidParameterError("t must lie in [0, T]", f"T={p.T}")
    mean, var = _bridge_moments(p.a, p.lam, p.sigma, t, p.T, x0, xT)
    return mean, np.maximum(var, 0.0)


def _check_times(times: np.ndarray, T: float) -> np.ndarray:
    times = np.asarray(times, dtype=np.float64)
    if times.ndim != 1 or times.size < 2:
        raise InvalidParameterError("Need at least two time points")
    if np.any(np.diff(times) <= 0):
        raise InvalidParameterError("Degenerate time step", "times must be strictly increasing")
    if times[0] != 0.0 or not np.isclose(times[-1], T, rtol=1e-12, atol=0.0):
        raise InvalidParameterError("Times must start at 0 and end at T", f"[{times[0]}, {times[-1]}], T={T}")
    return times


def sample_bridge_states(p: OUBridgeParams, x0: np.ndarray, xT: np.ndarray, times: np.ndarray,
                         rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Exact sequential bridge sampling for a batch.

    Each step draws X(s + d) from its law given X(s) and X(T), i.e. a bridge
    of horizon ``T - s`` evaluated at elapsed time ``d``.

    Returns:
        (states, noises) of shapes (n+1, B, K) and (n, B, K).
    """
    times = _check_times(times, p.T)
    x0, xT = np.atleast_2d(x0), np.atleast_2d(xT)
    n = times.size - 1
    states = np.empty((n + 1,) + x0.shape)
    noises = rng.standard_normal((n,) + x0.shape)
    states[0] = x0
    for i in range(n):
        s, d = times[i], times[i + 1] - times[i]
        mean, var = _bridge_moments(p.a, p.lam, p.sigma, d, p.T - s, states[i], xT)
        states[i + 1] = mean + np.sqrt(np.maximum(var, 0.0)) * noises[i]
    states[-1] = xT
    return states, noises


def sample_bridge_path(p: OUBridgeParams, x0: SpectralField, xT: SpectralField, times: np.ndarray,
                       rng: np.random.Generator, batch: Optional[int] = None) -> Trajectory:
    """Draw bridge paths pinned at ``x0`` and ``xT``.

    Args:
        p: Process constants.
        x0: Starting coefficients.
        xT: Terminal coefficients.
        times: Strictly increasing times from 0 to T.
        rng: Source of the Gaussian draws.
        batch: Number of independent paths (default 1).

    Returns:
        Trajectory: States of shape (n+1, batch, K) with recorded noises.

    Raises:
        InvalidParameterError: On a degenerate time grid.
    """
    if x0.eigs.K != p.K or xT.eigs.K != p.K:
        raise InvalidParameterError("Endpoints do not use the process eigen-system",
                                    f"K={x0.eigs.K}/{xT.eigs.K}, process K={p.K}")
    n_paths = 1 if batch is None else batch
    start = np.tile(x0.coeffs, (n_paths, 1))
    end = np.tile(xT.coeffs, (n_paths, 1))
    states, noises = sample_bridge_states(p, start, end, times, rng)
    logger.debug(f"Sampled {n_paths} bridge path(s) over {len(times) - 1} steps, K={p.K}")
    return Trajectory(eigs=p.eigs, times=times, states=states, noises=noises)


def single_mode_process(a: float, lam: float, sigma: float, T: float) -> OUBridgeParams:
    """Process with one mode of decay ``a`` and eigenvalue ``lam``, for scalar checks."""
    grid = GridSpec.line(2, 0.0, 1.0)
    eigs = EigenSystem(kind=BasisKind.NUMERICAL_KERNEL, grid=grid, a=np.array([a]), lam=np.array([lam]),
                       basis=np.ones((1, 2)))
    return OUBridgeParams(eigs=eigs, sigma=sigma, T=T)
