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

"""Synthetic function-valued data: GP regression tasks, the quadratic family
and the pair of 2-D densities used for the bridging-field experiment."""
import logging
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cholesky
from scipy.spatial.distance import cdist

from fsbridge.errors import InvalidParameterError, NumericalError, log_error
from fsbridge.models.eigen_system import EigenSystem
from fsbridge.models.fields import FieldSet, GridField, GridSpec
from fsbridge.models.tasks import GPSample, GPTask, KernelKind
from fsbridge.models.training import Coupling
from fsbridge.spectral_basis import SpectralTransform

logger = logging.getLogger(__name__)

JITTER_START = 1e-6
JITTER_ATTEMPTS = 5

QUADRATIC_POINTS = 100
QUADRATIC_NOISE = 0.05

DENSITY_BOUNDS = (-7.0, 7.0)
TARGET_CENTRES = ((1.0, 1.0), (3.0, 3.0), (5.0, 5.0))
TARGET_WIDTH = 0.05
MIXTURE_RADIUS = 5.0
MIXTURE_VAR = float(np.sqrt(0.1))


def kernel_matrix(kind: KernelKind, p: np.ndarray, q: np.ndarray, hyper: Dict[str, float]) -> np.ndarray:
    """Covariance between 1-D point sets ``p`` and ``q``.

    rbf:       l1^2 exp(-d^2 / l2^2)
    matern52:  l1^2 (1 + sqrt5 d / l2 + 5 d^2 / (3 l2^2)) exp(-sqrt5 d / l2)
    periodic:  l1^2 exp(-2 sin^2(pi d^2 / period) / l2)
    """
    d = cdist(np.reshape(p, (-1, 1)), np.reshape(q, (-1, 1)))
    l1, l2 = hyper['l1'], hyper['l2']
    kind = KernelKind(kind)
    if kind == KernelKind.RBF:
        return l1 ** 2 * np.exp(-d ** 2 / l2 ** 2)
    if kind == KernelKind.MATERN52:
        r = np.sqrt(5.0) * d / l2
        return l1 ** 2 * (1.0 + r + r ** 2 / 3.0) * np.exp(-r)
    return l1 ** 2 * np.exp(-2.0 * np.sin(np.pi * d ** 2 / hyper['period']) ** 2 / l2)


def jittered_cholesky(cov: np.ndarray, start: float = JITTER_START, attempts: int = JITTER_ATTEMPTS) -> np.ndarray:
    """Lower Cholesky factor of ``cov + j I`` for j = 0, start, 10 start, ...

    Raises:
        NumericalError: If every attempt fails.
    """
    jitter = 0.0
    for attempt in range(attempts + 1):
        try:
            return cholesky(cov + jitter * np.eye(cov.shape[0]), lower=True)
        except LinAlgError:
            jitter = start if attempt == 0 else jitter * 10.0
            logger.debug(f"Cholesky failed, retrying with jitter {jitter:.1e}")
    error = NumericalError("Cholesky factorization failed", f"after {attempts} jitter escalations up to {jitter:.1e}")
    log_error(logger, error, "GP sampling")
    raise error


def draw_hyper(task: GPTask, rng: np.random.Generator) -> Dict[str, float]:
    hyper = {'l1': float(rng.uniform(*task.l1_range)), 'l2': float(rng.uniform(*task.l2_range))}
    if task.kernel == KernelKind.PERIODIC:
        hyper['period'] = float(rng.uniform(*task.period_range))
    return hyper


def gp_draw(points: np.ndarray, kind: KernelKind, hyper: Dict[str, float], n: int,
            rng: np.random.Generator, noise_var: float = 1e-2) -> np.ndarray:
    """``n`` noisy GP draws at ``points``; (n, len(points))."""
    cov = kernel_matrix(kind, points, points, hyper) + noise_var * np.eye(len(points))
    L = jittered_cholesky(cov)
    return rng.standard_normal((n, len(points))) @ L.T


def sample_gp_task(task: GPTask, rng: np.random.Generator, hyper: Optional[Dict[str, float]] = None,
                   n_context: Optional[int] = None, n_target: Optional[int] = None) -> GPSample:
    """Draw one regression task: disjoint context and target points of the grid
    with values from a single noisy GP draw.

    Args:
        task: Task distribution.
        rng: Source of randomness.
        hyper: Fixed kernel hyper-parameters (drawn from the task ranges otherwise).
        n_context: Fixed context size (drawn from ``n_context_range`` otherwise).
        n_target: Fixed target size (drawn from 3 .. max_points - n_context otherwise).

    Raises:
        NumericalError: If the covariance cannot be factorized.
    """
    hyper = hyper or draw_hyper(task, rng)
    if n_context is None:
        n_context = int(rng.integers(task.n_context_range[0], task.n_context_range[1] + 1))
    if n_target is None:
        n_target = int(rng.integers(3, task.max_points - n_context + 1))
    if n_context < 1 or n_target < 0 or n_context + n_target > task.grid.size:
        raise InvalidParameterError("Invalid task size", f"context={n_context}, target={n_target}")
    chosen = rng.choice(task.grid.size, size=n_context + n_target, replace=False)
    observed_idx, target_idx = np.sort(chosen[:n_context]), np.sort(chosen[n_context:])
    axis = task.grid.axes()[0]
    idx = np.concatenate([observed_idx, target_idx])
    y = gp_draw(axis[idx], task.kernel, hyper, 1, rng, task.noise_var)[0]
    return GPSample(
        grid=task.grid,
        kernel=task.kernel,
        hyper=hyper,
        observed_idx=observed_idx,
        observed_y=y[:n_context],
        target_idx=target_idx,
        target_y=y[n_context:],
    )


def quadratic_curve(a: float, points: np.ndarray, noise: float = 0.0,
                    rng: Optional[np.random.Generator] = None) -> np.ndarray:
    y = a * np.asarray(points, dtype=np.float64) ** 2
    if noise > 0:
        y = y + noise * rng.standard_normal(y.shape)
    return y


def quadratic_grid(n_points: int = QUADRATIC_POINTS) -> GridSpec:
    return GridSpec.line(n_points, -1.0, 1.0)


def quadratic_dataset(n: int, rng: np.random.Generator, grid: Optional[GridSpec] = None,
                      noise: float = QUADRATIC_NOISE) -> FieldSet:
    """``n`` curves a p^2 + noise with a = +-1 equally likely; labels hold a."""
    grid = grid or quadratic_grid()
    signs = rng.choice(np.array([-1.0, 1.0]), size=n)
    points = grid.axes()[0]
    values = signs[:, None] * points[None, :] ** 2
    if noise > 0:
        values = values + noise * rng.standard_normal(values.shape)
    return FieldSet(grid=grid, values=values, labels=signs)


def gaussian_reference(eigs: EigenSystem, n: int, rng: np.random.Generator, scale: float = 1.0) -> FieldSet:
    """``n`` draws of N(0, scale^2 Q) synthesized on the eigen-system grid."""
    coeffs = scale * np.sqrt(eigs.lam) * rng.standard_normal((n, eigs.K))
    return FieldSet(grid=eigs.grid, values=SpectralTransform(eigs).synthesis(coeffs))


def quadratic_coupling(eigs: EigenSystem, noise: float = QUADRATIC_NOISE, reference_scale: float = 1.0) -> Coupling:
    """Independent coupling of the Gaussian reference and the quadratic family."""
    def sample_x0(n, rng):
        return gaussian_reference(eigs, n, rng, reference_scale).values

    def sample_xT(n, rng):
        return quadratic_dataset(n, rng, eigs.grid, noise).values

    return Coupling.independent(eigs.grid, sample_x0, sample_xT)


def _normalized(grid: GridSpec, log_density: np.ndarray) -> GridField:
    density = np.exp(log_density - np.max(log_density))
    density /= grid.cell_volume * np.sum(density)
    return GridField(grid=grid, values=density.ravel())


def density_pair_2d(res: int = 64, bounds: Tuple[float, float] = DENSITY_BOUNDS) -> Tuple[GridField, GridField]:
    """(p0, pT) on a res x res grid, each normalized under the grid quadrature.

    p0 is an equal mixture of eight isotropic Gaussians on a circle of radius
    5; pT has log density -min_c |p - c|^2 / 0.05 over three centres on the
    diagonal.
    """
    grid = GridSpec.square(res, *bounds)
    points = grid.points()
    angles = 2.0 * np.pi * np.arange(8) / 8
    centres = MIXTURE_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    sq = cdist(points, centres, 'sqeuclidean')
    log_p0 = np.log(np.mean(np.exp(-(sq - sq.min(axis=1, keepdims=True)) / (2.0 * MIXTURE_VAR)), axis=1)) \
        - sq.min(axis=1) / (2.0 * MIXTURE_VAR)
    log_pT = -np.min(cdist(points, np.array(TARGET_CENTRES), 'sqeuclidean'), axis=1) / TARGET_WIDTH
    return _normalized(grid, log_p0), _normalized(grid, log_pT)


def density_coupling(res: int = 64, bounds: Tuple[float, float] = DENSITY_BOUNDS) -> Coupling:
    """Dirac coupling of the two density fields."""
    p0, pT = density_pair_2d(res, bounds)
    return Coupling.dirac(p0, pT)
