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

import json
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from fsbridge.errors import GridMismatchError, InvalidParameterError
from fsbridge.models.fields import GridSpec

try:
    from enum import StrEnum  # Python 3.11+
except ImportError:
    from strenum import StrEnum  # Python <3.11


class KernelKind(StrEnum):
    RBF = "rbf"
    MATERN52 = "matern52"
    PERIODIC = "periodic"


def _check_range(name: str, bounds: Tuple[float, float], lower: float = 0.0):
    lo, hi = bounds
    if not (lower <= lo <= hi) or not np.isfinite(hi):
        raise InvalidParameterError(f"Invalid {name} range", f"{name}={bounds}")


@dataclass
class GPTask:
    """Distribution over GP regression tasks on a 1-D grid."""
    kernel: KernelKind = KernelKind.RBF
    grid: GridSpec = field(default_factory=lambda: GridSpec.line(50, -2.0, 2.0))
    l1_range: Tuple[float, float] = (0.1, 1.0)
    l2_range: Tuple[float, float] = (0.1, 0.6)
    period_range: Tuple[float, float] = (0.1, 0.5)
    n_context_range: Tuple[int, int] = (3, 37)
    max_points: int = 50
    noise_var: float = 1e-2

    def __post_init__(self):
        self.kernel = KernelKind(self.kernel)
        if self.grid.dims != 1:
            raise InvalidParameterError("GP tasks live on 1-D grids", f"dims={self.grid.dims}")
        _check_range('l1', self.l1_range)
        _check_range('l2', self.l2_range)
        _check_range('period', self.period_range)
        _check_range('n_context', self.n_context_range, lower=1)
        if self.l2_range[0] <= 0 or self.period_range[0] <= 0:
            raise InvalidParameterError("Length scales and periods must be positive")
        if self.n_context_range[1] + 3 > self.max_points:
            raise InvalidParameterError(
                "Context range leaves no room for targets",
                f"n_context up to {self.n_context_range[1]} with max_points={self.max_points}",
            )
        if self.max_points > self.grid.size:
            raise InvalidParameterError(
                "Grid too coarse for the requested number of points",
                f"max_points={self.max_points}, grid size {self.grid.size}",
            )
        if self.noise_var < 0:
            raise InvalidParameterError("noise_var must be non-negative")


@dataclass
class GPSample:
    """One regression task: observed (context) and target points with values."""
    grid: GridSpec
    kernel: KernelKind
    hyper: Dict[str, float]
    observed_idx: np.ndarray
    observed_y: np.ndarray
    target_idx: np.ndarray
    target_y: np.ndarray

    @property
    def observed_points(self) -> np.ndarray:
        return self.grid.axes()[0][self.observed_idx]

    @property
    def target_points(self) -> np.ndarray:
        return self.grid.axes()[0][self.target_idx]


@dataclass
class EnergyFunctional:
    """Gaussian negative log-likelihood energy U on a set of grid points.

    The likelihood runs over the target set when target values are known
    (training on complete tasks) and over the observed set otherwise
    (conditioning on context only). The `gp` dataset of the command line
    builds its energy with ``use_targets=False``, so `bayes train` sums U
    over the context points rather than the target points; pass a task file
    with target values to train on the targets instead.
    """
    grid: GridSpec
    observed_idx: np.ndarray
    observed_y: np.ndarray
    target_idx: np.ndarray
    target_y: Optional[np.ndarray] = None
    sigma_obs: float = 0.1
    learnable_sigma: bool = False

    def __post_init__(self):
        self.observed_idx = np.asarray(self.observed_idx, dtype=np.int64).reshape(-1)
        self.observed_y = np.asarray(self.observed_y, dtype=np.float64).reshape(-1)
        self.target_idx = np.asarray(self.target_idx, dtype=np.int64).reshape(-1)
        if self.target_y is not None:
            self.target_y = np.asarray(self.target_y, dtype=np.float64).reshape(-1)
            if self.target_y.size != self.target_idx.size:
                raise InvalidParameterError("Target values do not match target points")
        if self.observed_idx.size == 0:
            raise InvalidParameterError("EnergyFunctional needs at least one observed point")
        if self.observed_idx.size != self.observed_y.size:
            raise InvalidParameterError("Observed values do not match observed points")
        for idx in (self.observed_idx, self.target_idx):
            if idx.size and (idx.min() < 0 or idx.max() >= self.grid.size):
                raise GridMismatchError("Point index outside the grid")
        if not self.sigma_obs > 0:
            raise InvalidParameterError("sigma_obs must be positive", f"sigma_obs={self.sigma_obs}")

    def likelihood_set(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.target_y is not None:
            return self.target_idx, self.target_y
        return self.observed_idx, self.observed_y

    @classmethod
    def from_sample(cls, sample: GPSample, sigma_obs: float = 0.1, use_targets: bool = False,
                    learnable_sigma: bool = False) -> 'EnergyFunctional':
        return cls(
            grid=sample.grid,
            observed_idx=sample.observed_idx,
            observed_y=sample.observed_y,
            target_idx=sample.target_idx,
            target_y=sample.target_y if use_targets else None,
            sigma_obs=sigma_obs,
            learnable_sigma=learnable_sigma,
        )

    def to_dict(self) -> dict:
        axis = self.grid.axes()[0]
        return {
            'grid': self.grid.to_dict(),
            'observed': [[float(axis[i]), float(y)] for i, y in zip(self.observed_idx, self.observed_y)],
            'targets': [float(axis[i]) for i in self.target_idx],
            'target_values': None if self.target_y is None else self.target_y.tolist(),
            'sigma_obs': None if self.learnable_sigma else self.sigma_obs,
        }

    @classmethod
    def from_dict(cls, data: dict, default_sigma: float = 0.1) -> 'EnergyFunctional':
        grid = GridSpec.from_dict(data['grid'])
        observed = data.get('observed', [])
        sigma = data.get('sigma_obs')
        target_values = data.get('target_values')
        return cls(
            grid=grid,
            observed_idx=np.array([snap_to_grid(grid, p) for p, _ in observed], dtype=np.int64),
            observed_y=np.array([y for _, y in observed], dtype=np.float64),
            target_idx=np.array([snap_to_grid(grid, p) for p in data.get('targets', [])], dtype=np.int64),
            target_y=None if target_values is None else np.array(target_values, dtype=np.float64),
            sigma_obs=default_sigma if sigma is None else float(sigma),
            learnable_sigma=sigma is None,
        )

    @classmethod
    def load(cls, path: str) -> 'EnergyFunctional':
        with open(path) as handle:
            return cls.from_dict(json.load(handle))

    def save(self, path: str) -> str:
        with open(path, 'w') as handle:
            json.dump(self.to_dict(), handle, indent=2)
        return path


def snap_to_grid(grid: GridSpec, p: float) -> int:
    """Index of the grid point at coordinate ``p`` (within half a cell)."""
    axis = grid.axes()[0]
    i = int(np.argmin(np.abs(axis - p)))
    if abs(axis[i] - p) > 0.5 * grid.spacing[0] + 1e-12:
        raise GridMismatchError("Point is outside the grid", f"p={p}")
    return i
