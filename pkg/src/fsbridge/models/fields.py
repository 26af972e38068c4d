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

import csv
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, TYPE_CHECKING

import numpy as np

from fsbridge.errors import GridMismatchError, InvalidParameterError
from fsbridge.models.encoding import format_float

if TYPE_CHECKING:
    from fsbridge.models.eigen_system import EigenSystem


@dataclass(frozen=True)
class GridSpec:
    """Regular cell-centred grid on a box domain (1 or 2 dimensions)."""
    dims: int
    resolution: Tuple[int, ...]
    bounds: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, 'resolution', tuple(int(r) for r in self.resolution))
        object.__setattr__(self, 'bounds', tuple((float(lo), float(hi)) for lo, hi in self.bounds))
        if self.dims not in (1, 2):
            raise InvalidParameterError("Unsupported grid dimension", f"dims={self.dims}, expected 1 or 2")
        if len(self.resolution) != self.dims or len(self.bounds) != self.dims:
            raise InvalidParameterError(
                "Grid shape mismatch",
                f"dims={self.dims} but resolution={self.resolution}, bounds={self.bounds}",
            )
        for res in self.resolution:
            if res < 2:
                raise InvalidParameterError("Grid resolution too small", f"resolution {res} < 2")
        for lo, hi in self.bounds:
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo >= hi:
                raise InvalidParameterError("Invalid grid bounds", f"({lo}, {hi})")

    @classmethod
    def line(cls, n: int, lo: float = 0.0, hi: float = 1.0) -> 'GridSpec':
        return cls(dims=1, resolution=(n,), bounds=((lo, hi),))

    @classmethod
    def square(cls, n: int, lo: float = 0.0, hi: float = 1.0) -> 'GridSpec':
        return cls(dims=2, resolution=(n, n), bounds=((lo, hi), (lo, hi)))

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.resolution

    @property
    def size(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def lengths(self) -> Tuple[float, ...]:
        return tuple(hi - lo for lo, hi in self.bounds)

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple(length / res for length, res in zip(self.lengths, self.resolution))

    @property
    def cell_volume(self) -> float:
        """Uniform quadrature weight of the rectangle rule."""
        return float(np.prod(self.spacing))

    def axes(self) -> List[np.ndarray]:
        """Cell-centre coordinates along each axis."""
        return [lo + (np.arange(res) + 0.5) * h
                for (lo, _), res, h in zip(self.bounds, self.resolution, self.spacing)]

    def unit_axes(self) -> List[np.ndarray]:
        """Cell centres rescaled to (0, 1)."""
        return [(np.arange(res) + 0.5) / res for res in self.resolution]

    def points(self) -> np.ndarray:
        """(N, dims) array of grid points in row-major order."""
        mesh = np.meshgrid(*self.axes(), indexing='ij')
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def with_resolution(self, resolution: Sequence[int]) -> 'GridSpec':
        return GridSpec(dims=self.dims, resolution=tuple(resolution), bounds=self.bounds)

    def same_domain(self, other: 'GridSpec') -> bool:
        return self.dims == other.dims and self.bounds == other.bounds

    def to_dict(self) -> dict:
        return {
            'dims': self.dims,
            'res': list(self.resolution),
            'bounds': [list(b) for b in self.bounds],
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'GridSpec':
        return cls(
            dims=int(data['dims']),
            resolution=tuple(data['res']),
            bounds=tuple(tuple(b) for b in data['bounds']),
        )


@dataclass
class GridField:
    """A function represented by its values at the grid points."""
    grid: GridSpec
    values: np.ndarray
    channels: int = 1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.values.size != self.grid.size * self.channels:
            raise GridMismatchError(
                "Field length does not match grid",
                f"{self.values.size} values for {self.grid.size} points x {self.channels} channels",
            )
        if not np.all(np.isfinite(self.values)):
            raise InvalidParameterError("Field values must be finite")

    @classmethod
    def zeros(cls, grid: GridSpec) -> 'GridField':
        return cls(grid=grid, values=np.zeros(grid.size))

    @classmethod
    def from_function(cls, grid: GridSpec, fn: Callable[..., np.ndarray]) -> 'GridField':
        """Evaluate ``fn(*coords)`` on the meshgrid of cell centres."""
        mesh = np.meshgrid(*grid.axes(), indexing='ij')
        return cls(grid=grid, values=np.asarray(fn(*mesh), dtype=np.float64).ravel())

    def as_array(self) -> np.ndarray:
        if self.channels == 1:
            return self.values.reshape(self.grid.shape)
        return self.values.reshape((self.channels,) + self.grid.shape)

    def l2_norm(self) -> float:
        return float(np.sqrt(self.grid.cell_volume * np.sum(self.values ** 2)))


@dataclass
class SpectralField:
    """A function represented by its eigenbasis coefficients."""
    eigs: 'EigenSystem'
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64).reshape(-1)
        if self.coeffs.size != self.eigs.K:
            raise GridMismatchError(
                "Coefficient count does not match eigen-system",
                f"{self.coeffs.size} coefficients for K={self.eigs.K}",
            )
        if not np.all(np.isfinite(self.coeffs)):
            raise InvalidParameterError("Spectral coefficients must be finite")

    @classmethod
    def unit(cls, eigs: 'EigenSystem', k: int) -> 'SpectralField':
        coeffs = np.zeros(eigs.K)
        coeffs[k] = 1.0
        return cls(eigs=eigs, coeffs=coeffs)


@dataclass
class FieldSet:
    """A collection of fields sharing one grid, stored as an (n, N) array."""
    grid: GridSpec
    values: np.ndarray
    labels: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        if self.values.shape[1] != self.grid.size:
            raise GridMismatchError(
                "Field set width does not match grid",
                f"{self.values.shape[1]} columns for {self.grid.size} grid points",
            )

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, index: int) -> GridField:
        return GridField(grid=self.grid, values=self.values[index])

    @classmethod
    def from_fields(cls, fields: Sequence[GridField]) -> 'FieldSet':
        if not fields:
            raise InvalidParameterError("Cannot build an empty field set")
        grid = fields[0].grid
        for f in fields:
            if f.grid != grid:
                raise GridMismatchError("Fields live on different grids")
        return cls(grid=grid, values=np.stack([f.values for f in fields]))

    def subset(self, index) -> 'FieldSet':
        labels = None if self.labels is None else self.labels[index]
        return FieldSet(grid=self.grid, values=self.values[index], labels=labels)

    def to_csv(self, path: str) -> str:
        """Write one row per (sample, grid point): sample, p1[, p2], y."""
        points = self.grid.points()
        coord_cols = [f"p{d + 1}" for d in range(self.grid.dims)]
        with open(path, 'w', newline='') as handle:
            writer = csv.writer(handle)
            writer.writerow(['sample'] + coord_cols + ['y'])
            for i, row in enumerate(self.values):
                for p, y in zip(points, row):
                    writer.writerow([i] + [format_float(c) for c in p] + [format_float(y)])
        return path

    @classmethod
    def from_csv(cls, path: str, grid: GridSpec) -> 'FieldSet':
        rows = {}
        with open(path, newline='') as handle:
            reader = csv.DictReader(handle)
            for record in reader:
                rows.setdefault(int(record['sample']), []).append(float(record['y']))
        values = np.array([rows[i] for i in sorted(rows)])
        return cls(grid=grid, values=values)
