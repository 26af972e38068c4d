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

"""Eigen-systems of the drift/covariance pair and grid <-> spectral transforms.

Two constructions are supported:

* separable Neumann cosines on a box (decay in ``a``, ``lam = 1``), whose
  coefficients are computed with an orthonormal DCT-II and which can be
  evaluated on any resolution of the same domain;
* the eigen-decomposition of a quadrature-weighted RBF Gram matrix on a 1-D
  grid (``a = 1/2``, decay in ``lam``), evaluated off its grid only through
  the Nystrom extension.
"""
import logging
from typing import Optional, Sequence

import numpy as np
from scipy.fft import dctn, idctn
from scipy.interpolate import RegularGridInterpolator
from scipy.linalg import eigh
from scipy.spatial.distance import cdist

from fsbridge.errors import GridMismatchError, InvalidParameterError
from fsbridge.models.eigen_system import BasisKind, EigenSystem
from fsbridge.models.fields import GridField, GridSpec, SpectralField

try:
    from enum import StrEnum  # Python 3.11+
except ImportError:
    from strenum import StrEnum  # Python <3.11

logger = logging.getLogger(__name__)

DEFAULT_DECAY_FLOOR = 1e-3


class ResampleMethod(StrEnum):
    BILINEAR = "bilinear"
    SPECTRAL = "spectral"


def _cosine_modes(dims: int, modes_per_dim: int, lengths: Sequence[float]):
    """Mode index tuples sorted by Laplacian eigenvalue (stable in index order)."""
    grids = np.meshgrid(*[np.arange(modes_per_dim)] * dims, indexing='ij')
    modes = np.stack([g.ravel() for g in grids], axis=-1)
    eig = np.pi ** 2 * np.sum((modes / np.asarray(lengths)) ** 2, axis=1)
    order = np.argsort(eig, kind='stable')
    return modes[order], eig[order]


def _cosine_axis(n: np.ndarray, axis: np.ndarray, lo: float, length: float) -> np.ndarray:
    norm = np.sqrt(np.where(n == 0, 1.0, 2.0) / length)
    return norm[:, None] * np.cos(np.pi * np.outer(n, axis - lo) / length)


def cosine_basis_matrix(modes: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Evaluate the separable cosines ``modes`` (K, dims) at the cell centres of ``grid``."""
    factors = [_cosine_axis(modes[:, d], axis, lo, length)
               for d, (axis, (lo, _), length) in enumerate(zip(grid.axes(), grid.bounds, grid.lengths))]
    if grid.dims == 1:
        return factors[0]
    return np.einsum('ki,kj->kij', factors[0], factors[1]).reshape(len(modes), -1)


def build_cosine_basis(grid: GridSpec, modes_per_dim: int,
                       decay_floor: float = DEFAULT_DECAY_FLOOR) -> EigenSystem:
    """Neumann cosine eigen-system with ``a = max(Laplacian eigenvalue, decay_floor)`` and ``lam = 1``.

    Args:
        grid: 1-D or 2-D grid.
        modes_per_dim: Number of cosine indices per axis (``n = 0 .. modes_per_dim - 1``).
        decay_floor: Lower clamp on the decay rate; the constant mode has a
            zero Laplacian eigenvalue and is always clamped.

    Returns:
        EigenSystem: ``modes_per_dim ** dims`` modes ordered by increasing decay.

    Raises:
        InvalidParameterError: If the modes exceed the grid resolution or
            ``decay_floor`` is not positive.
    """
    if modes_per_dim < 1:
        raise InvalidParameterError("modes_per_dim must be positive", f"modes_per_dim={modes_per_dim}")
    if modes_per_dim > min(grid.resolution):
        raise InvalidParameterError(
            "Requested modes exceed grid resolution",
            f"modes_per_dim={modes_per_dim}, resolution={grid.resolution}",
        )
    if not decay_floor > 0:
        raise InvalidParameterError("decay_floor must be positive", f"decay_floor={decay_floor}")
    modes, laplacian = _cosine_modes(grid.dims, modes_per_dim, grid.lengths)
    eigs = EigenSystem(
        kind=BasisKind.ANALYTIC_COSINE,
        grid=grid,
        a=np.maximum(laplacian, decay_floor),
        lam=np.ones(len(modes)),
        basis=cosine_basis_matrix(modes, grid),
        modes=modes,
    )
    logger.debug(f"Built cosine basis: K={eigs.K}, grid={grid.resolution}, max a={eigs.a[-1]:.4g}")
    return eigs


def build_cosine_basis_2d(grid: GridSpec, modes_per_dim: int,
                          decay_floor: float = DEFAULT_DECAY_FLOOR) -> EigenSystem:
    if grid.dims != 2:
        raise InvalidParameterError("build_cosine_basis_2d needs a 2-D grid", f"dims={grid.dims}")
    return build_cosine_basis(grid, modes_per_dim, decay_floor)


def rbf_gram(p: np.ndarray, q: np.ndarray, gamma: float) -> np.ndarray:
    """exp(-|p - q|^2 / gamma) for point sets of shape (n, d) and (m, d)."""
    return np.exp(-cdist(np.atleast_2d(p), np.atleast_2d(q), 'sqeuclidean') / gamma)


def build_kernel_basis_1d(grid: GridSpec, gamma: float, jitter: Optional[float] = None,
                          max_modes: Optional[int] = None) -> EigenSystem:
    """Eigen-system of the RBF covariance Q with the uniform drift a = 1/2.

    The operator ``w * G`` (G the Gram matrix, w the quadrature weight) is
    diagonalized; eigenvectors are rescaled by ``1/sqrt(w)`` so the basis is
    orthonormal under the grid quadrature.

    Args:
        grid: A 1-D grid.
        gamma: Kernel width in ``exp(-|p - p'|^2 / gamma)``.
        jitter: Eigenvalue cut-off. Defaults to ``1e-8 * trace / N``.
        max_modes: Optional cap on the number of retained modes.

    Raises:
        InvalidParameterError: On bad arguments or when the weighted Gram
            matrix has an eigenvalue below ``-jitter``.
    """
    if grid.dims != 1:
        raise InvalidParameterError("Kernel basis is defined on 1-D grids", f"dims={grid.dims}")
    if not gamma > 0:
        raise InvalidParameterError("gamma must be positive", f"gamma={gamma}")
    w = grid.cell_volume
    operator = w * rbf_gram(grid.points(), grid.points(), gamma)
    if jitter is None:
        jitter = 1e-8 * np.trace(operator) / grid.size
    if jitter < 0:
        raise InvalidParameterError("jitter must be non-negative", f"jitter={jitter}")
    mu, vectors = eigh(operator)
    mu, vectors = mu[::-1], vectors[:, ::-1]
    if mu[-1] < -jitter:
        raise InvalidParameterError(
            "Gram matrix is not positive semi-definite",
            f"smallest eigenvalue {mu[-1]:.3e} below -jitter {-jitter:.3e}",
        )
    keep = mu > jitter
    if max_modes is not None:
        keep &= np.arange(mu.size) < max_modes
    mu, vectors = mu[keep], vectors[:, keep]
    # eigh leaves the sign of each vector arbitrary; fix it for reproducible artifacts
    signs = np.sign(vectors[np.argmax(np.abs(vectors), axis=0), np.arange(mu.size)])
    vectors = vectors * signs
    eigs = EigenSystem(
        kind=BasisKind.NUMERICAL_KERNEL,
        grid=grid,
        a=np.full(mu.size, 0.5),
        lam=mu,
        basis=(vectors / np.sqrt(w)).T,
        gamma=float(gamma),
    )
    logger.debug(f"Built kernel basis: gamma={gamma}, retained {eigs.K}/{grid.size} modes, trace={eigs.trace:.6g}")
    return eigs


def evaluate_basis(eigs: EigenSystem, grid: GridSpec, nystrom: bool = False) -> np.ndarray:
    """(K, N) evaluation of the eigenfunctions at the points of ``grid``."""
    if grid == eigs.grid:
        return np.asarray(eigs.basis)
    if not grid.same_domain(eigs.grid):
        raise GridMismatchError(
            "Target grid does not cover the eigen-system domain",
            f"{grid.bounds} vs {eigs.grid.bounds}",
        )
    if eigs.kind == BasisKind.ANALYTIC_COSINE:
        return cosine_basis_matrix(eigs.modes, grid)
    if not nystrom:
        raise GridMismatchError(
            "Numerical-kernel system cannot be evaluated off its grid",
            "request the Nystrom extension to evaluate at new points",
        )
    # phi_k(p) = (1/lam_k) sum_j w k(p, p_j) phi_k(p_j)
    cross = rbf_gram(grid.points(), eigs.grid.points(), eigs.gamma)
    return (eigs.weight * eigs.basis @ cross.T) / eigs.lam[:, None]


class SpectralTransform:
    """Batched analysis / synthesis between grid values and eigen coefficients.

    Works on (B, N) value arrays and (B, K) coefficient arrays. Cosine
    systems whose modes fit the target resolution use the orthonormal DCT;
    everything else uses the dense basis matrix.
    """

    def __init__(self, eigs: EigenSystem, grid: Optional[GridSpec] = None, nystrom: bool = False):
        grid = eigs.grid if grid is None else grid
        if grid.dims != eigs.grid.dims:
            raise GridMismatchError("Grid dimension differs from eigen-system", f"{grid.dims} vs {eigs.grid.dims}")
        self.eigs = eigs
        self.grid = grid
        self.weight = grid.cell_volume
        self._fast = (eigs.kind == BasisKind.ANALYTIC_COSINE and grid.same_domain(eigs.grid)
                      and bool(np.all(eigs.modes < np.asarray(grid.resolution))))
        self._axes = tuple(range(1, grid.dims + 1))
        self._index = None if eigs.modes is None else tuple(eigs.modes[:, d] for d in range(grid.dims))
        self._basis = None if self._fast else evaluate_basis(eigs, grid, nystrom)

    @property
    def basis(self) -> np.ndarray:
        if self._basis is None:
            self._basis = evaluate_basis(self.eigs, self.grid)
        return self._basis

    def _batch(self, array: np.ndarray, width: int, what: str) -> np.ndarray:
        array = np.asarray(array, dtype=np.float64)
        batch = np.atleast_2d(array)
        if batch.shape[-1] != width:
            raise GridMismatchError(f"{what} width mismatch", f"got {batch.shape[-1]}, expected {width}")
        return batch

    def analysis(self, values: np.ndarray) -> np.ndarray:
        """Quadrature inner products <f, phi_k>; (B, N) -> (B, K)."""
        batch = self._batch(values, self.grid.size, "Grid values")
        if self._fast:
            spectrum = dctn(batch.reshape((-1,) + self.grid.shape), type=2, norm='ortho', axes=self._axes)
            coeffs = np.sqrt(self.weight) * spectrum[(slice(None),) + self._index]
        else:
            coeffs = self.weight * batch @ self.basis.T
        return coeffs if np.ndim(values) > 1 else coeffs[0]

    def synthesis(self, coeffs: np.ndarray) -> np.ndarray:
        """sum_k c_k phi_k at the grid points; (B, K) -> (B, N)."""
        batch = self._batch(coeffs, self.eigs.K, "Coefficient")
        if self._fast:
            full = np.zeros((batch.shape[0],) + self.grid.shape)
            full[(slice(None),) + self._index] = batch / np.sqrt(self.weight)
            values = idctn(full, type=2, norm='ortho', axes=self._axes).reshape(batch.shape[0], -1)
        else:
            values = batch @ self.basis
        return values if np.ndim(coeffs) > 1 else values[0]

    def analysis_adjoint(self, g_coeffs: np.ndarray) -> np.ndarray:
        return self.weight * self.synthesis(g_coeffs)

    def synthesis_adjoint(self, g_values: np.ndarray) -> np.ndarray:
        return self.analysis(g_values) / self.weight


def to_spectral(f: GridField, eigs: EigenSystem) -> SpectralField:
    """Project a grid field onto the eigen-system.

    Raises:
        GridMismatchError: If ``f`` is not on the eigen-system's grid.
    """
    if f.grid != eigs.grid:
        raise GridMismatchError(
            "Field grid does not match eigen-system grid",
            f"{f.grid.resolution} vs {eigs.grid.resolution}",
        )
    return SpectralField(eigs=eigs, coeffs=SpectralTransform(eigs).analysis(f.values))


def from_spectral(c: SpectralField, target: Optional[GridSpec] = None, nystrom: bool = False) -> GridField:
    """Evaluate a spectral field on ``target`` (default: the eigen-system grid).

    Cosine systems evaluate at any resolution of their domain. Kernel systems
    need ``nystrom=True`` for any grid other than their own.
    """
    target = c.eigs.grid if target is None else target
    values = SpectralTransform(c.eigs, target, nystrom=nystrom).synthesis(c.coeffs)
    return GridField(grid=target, values=values)


def spectral_resample(values: np.ndarray, source: GridSpec, target: GridSpec) -> np.ndarray:
    """Cosine-series zero-padding (upsampling) or truncation (downsampling) of (B, N) grid values."""
    batch = np.atleast_2d(np.asarray(values, dtype=np.float64))
    axes = tuple(range(1, source.dims + 1))
    spectrum = dctn(batch.reshape((-1,) + source.shape), type=2, norm='ortho', axes=axes)
    out = np.zeros((batch.shape[0],) + target.shape)
    keep = (slice(None),) + tuple(slice(0, min(rs, rt)) for rs, rt in zip(source.shape, target.shape))
    scale = np.sqrt(source.cell_volume / target.cell_volume)
    out[keep] = scale * spectrum[keep]
    result = idctn(out, type=2, norm='ortho', axes=axes).reshape(batch.shape[0], -1)
    return result if np.ndim(values) > 1 else result[0]


def resample_initial(f: GridField, target: GridSpec,
                     method: ResampleMethod = ResampleMethod.BILINEAR) -> GridField:
    """Move an initial condition onto another resolution of the same domain.

    Args:
        f: Source field.
        target: Grid to resample onto.
        method: ``bilinear`` interpolation (upsampling only) or ``spectral``
            cosine zero-padding / truncation.

    Raises:
        GridMismatchError: If the grids differ in dimension or domain.
        InvalidParameterError: If bilinear resampling would downsample.
    """
    method = ResampleMethod(method)
    if not f.grid.same_domain(target):
        raise GridMismatchError("Cannot resample across domains", f"{f.grid.bounds} vs {target.bounds}")
    if f.grid == target:
        return GridField(grid=target, values=f.values.copy())
    if method == ResampleMethod.SPECTRAL:
        return GridField(grid=target, values=spectral_resample(f.values, f.grid, target))
    if any(rt < rs for rs, rt in zip(f.grid.resolution, target.resolution)):
        raise InvalidParameterError(
            "Bilinear resampling cannot downsample",
            f"{f.grid.resolution} -> {target.resolution}; use the spectral method",
        )
    source_axes = f.grid.axes()
    interpolator = RegularGridInterpolator(source_axes, f.as_array(), method='linear')
    # cell centres of a finer grid reach past the outermost source centres; hold the edge value
    query = np.stack([np.clip(p, ax[0], ax[-1]) for p, ax in zip(target.points().T, source_axes)], axis=-1)
    return GridField(grid=target, values=interpolator(query))
