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
from dataclasses import dataclass
from typing import Optional

import numpy as np

from fsbridge.errors import InvalidParameterError, SerializationError
from fsbridge.models.encoding import decode_f64, encode_f64
from fsbridge.models.fields import GridSpec

try:
    from enum import StrEnum  # Python 3.11+
except ImportError:
    from strenum import StrEnum  # Python <3.11

EIGEN_SYSTEM_VERSION = 1


class BasisKind(StrEnum):
    """How the eigen-system was obtained"""
    ANALYTIC_COSINE = "analytic-cosine"  # separable Neumann cosines, decay in a_k, Q = I
    NUMERICAL_KERNEL = "numerical-kernel"  # eigendecomposed RBF Gram matrix, a_k = 1/2


@dataclass(frozen=True)
class EigenSystem:
    """Joint eigen-system (a_k, lambda_k, phi_k) of the drift operator A and covariance Q.

    ``basis`` holds phi_k evaluated at the grid points, one row per mode, and is
    orthonormal under the grid's rectangle-rule weights. Cosine systems also
    record their integer mode indices so they can be evaluated on any grid;
    kernel systems record the RBF width for the Nystrom extension.
    """
    kind: BasisKind
    grid: GridSpec
    a: np.ndarray
    lam: np.ndarray
    basis: np.ndarray
    modes: Optional[np.ndarray] = None
    gamma: Optional[float] = None

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64).reshape(-1)
        lam = np.asarray(self.lam, dtype=np.float64).reshape(-1)
        basis = np.asarray(self.basis, dtype=np.float64)
        K = a.size
        if lam.size != K or basis.shape != (K, self.grid.size):
            raise InvalidParameterError(
                "Inconsistent eigen-system shapes",
                f"a: {a.shape}, lam: {lam.shape}, basis: {basis.shape}, grid size {self.grid.size}",
            )
        if K == 0:
            raise InvalidParameterError("Eigen-system retains no modes")
        if np.any(a <= 0) or np.any(lam <= 0):
            raise InvalidParameterError("Decay rates and eigenvalues must be positive")
        if np.any(np.diff(lam) > 1e-12 * lam[0]):
            raise InvalidParameterError("Covariance eigenvalues must be non-increasing")
        for name, value in (('a', a), ('lam', lam), ('basis', basis)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, 'kind', BasisKind(self.kind))
        if self.modes is not None:
            modes = np.asarray(self.modes, dtype=np.int64).reshape(K, self.grid.dims)
            modes.setflags(write=False)
            object.__setattr__(self, 'modes', modes)

    @property
    def K(self) -> int:
        return self.a.size

    @property
    def weight(self) -> float:
        return self.grid.cell_volume

    @property
    def trace(self) -> float:
        return float(np.sum(self.lam))

    def gram_error(self) -> float:
        """max |basis diag(w) basis^T - I|"""
        gram = self.weight * self.basis @ self.basis.T
        return float(np.max(np.abs(gram - np.eye(self.K))))

    def to_dict(self) -> dict:
        doc = {
            'version': EIGEN_SYSTEM_VERSION,
            'kind': str(self.kind),
            'K': self.K,
            'a': self.a.tolist(),
            'lam': self.lam.tolist(),
            'grid': self.grid.to_dict(),
            'basis': encode_f64(self.basis),
        }
        if self.modes is not None:
            doc['modes'] = self.modes.tolist()
        if self.gamma is not None:
            doc['gamma'] = self.gamma
        return doc

    @classmethod
    def from_dict(cls, data: dict) -> 'EigenSystem':
        version = data.get('version')
        if version != EIGEN_SYSTEM_VERSION:
            raise SerializationError(
                "Unsupported eigen-system version",
                f"document version {version}, expected {EIGEN_SYSTEM_VERSION}",
            )
        grid = GridSpec.from_dict(data['grid'])
        K = int(data['K'])
        return cls(
            kind=BasisKind(data['kind']),
            grid=grid,
            a=np.array(data['a'], dtype=np.float64),
            lam=np.array(data['lam'], dtype=np.float64),
            basis=decode_f64(data['basis'], (K, grid.size)),
            modes=None if data.get('modes') is None else np.array(data['modes']),
            gamma=data.get('gamma'),
        )

    def save(self, path: str) -> str:
        with open(path, 'w') as handle:
            json.dump(self.to_dict(), handle)
        return path

    @classmethod
    def load(cls, path: str) -> 'EigenSystem':
        with open(path) as handle:
            return cls.from_dict(json.load(handle))
