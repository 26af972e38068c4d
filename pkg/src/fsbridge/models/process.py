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

from dataclasses import dataclass

import numpy as np

from fsbridge.errors import InvalidParameterError
from fsbridge.models.eigen_system import EigenSystem


@dataclass(frozen=True)
class OUBridgeParams:
    """Constants of dX = A X dt + sigma dW^Q on [0, T] for one eigen-system."""
    eigs: EigenSystem
    sigma: float
    T: float

    def __post_init__(self):
        if not self.sigma >= 0 or not np.isfinite(self.sigma):
            raise InvalidParameterError("sigma must be a finite non-negative number", f"sigma={self.sigma}")
        if not self.T > 0 or not np.isfinite(self.T):
            raise InvalidParameterError("T must be positive", f"T={self.T}")

    @property
    def a(self) -> np.ndarray:
        return self.eigs.a

    @property
    def lam(self) -> np.ndarray:
        return self.eigs.lam

    @property
    def K(self) -> int:
        return self.eigs.K

    @property
    def noise_scale(self) -> np.ndarray:
        """sigma * sqrt(lambda_k), the per-mode diffusion coefficient."""
        return self.sigma * np.sqrt(self.lam)

    @property
    def stationary_var(self) -> np.ndarray:
        """s_inf = sigma^2 lambda_k / (2 a_k), the per-mode variance of N(0, Q_inf)."""
        return self.sigma ** 2 * self.lam / (2.0 * self.a)

    def to_dict(self) -> dict:
        return {'sigma': self.sigma, 'T': self.T}


@dataclass(frozen=True)
class CoordGaussian:
    """One-dimensional Gaussian law of a single spectral coordinate."""
    mean: float
    var: float

    def __post_init__(self):
        if self.var < 0:
            raise InvalidParameterError("Variance must be non-negative", f"var={self.var}")

    @property
    def std(self) -> float:
        return float(np.sqrt(self.var))
