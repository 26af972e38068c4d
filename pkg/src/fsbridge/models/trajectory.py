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
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from fsbridge.errors import InvalidParameterError
from fsbridge.models.eigen_system import EigenSystem
from fsbridge.models.encoding import format_float
from fsbridge.models.fields import SpectralField

try:
    from enum import StrEnum  # Python 3.11+
except ImportError:
    from strenum import StrEnum  # Python <3.11


class SchemeKind(StrEnum):
    """Time-stepping rule for the per-mode linear SDE"""
    EULER_MARUYAMA = "euler-maruyama"
    EXPONENTIAL = "exponential"  # exact semigroup and exact noise variance

    @classmethod
    def _missing_(cls, value):
        # short alias
        if isinstance(value, str) and value.strip().lower() == "euler":
            return cls.EULER_MARUYAMA
        return None


@dataclass(frozen=True)
class StepScheme:
    kind: SchemeKind = SchemeKind.EULER_MARUYAMA
    n_steps: int = 30

    def __post_init__(self):
        object.__setattr__(self, 'kind', SchemeKind(self.kind))
        if self.n_steps < 1:
            raise InvalidParameterError("n_steps must be at least 1", f"n_steps={self.n_steps}")

    def times(self, T: float) -> np.ndarray:
        return np.linspace(0.0, T, self.n_steps + 1)


@dataclass
class Trajectory:
    """A batch of simulated paths in spectral coordinates.

    Shapes: ``times`` (n+1,), ``states`` (n+1, B, K), ``noises`` (n, B, K),
    ``control_evals`` (n, B, K) holding the projected control at each step.
    """
    eigs: EigenSystem
    times: np.ndarray
    states: np.ndarray
    noises: Optional[np.ndarray] = None
    control_evals: Optional[np.ndarray] = None
    scheme: Optional[StepScheme] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim == 2:
            self.states = self.states[:, None, :]
        if self.states.shape[0] != self.times.size:
            raise InvalidParameterError(
                "Trajectory length mismatch",
                f"{self.states.shape[0]} states for {self.times.size} times",
            )
        if np.any(np.diff(self.times) <= 0):
            raise InvalidParameterError("Trajectory times must be strictly increasing")
        if self.noises is not None:
            self.noises = np.asarray(self.noises, dtype=np.float64)
            if self.noises.ndim == 2:
                self.noises = self.noises[:, None, :]
            if self.noises.shape[0] != self.times.size - 1:
                raise InvalidParameterError(
                    "Noise record length mismatch",
                    f"{self.noises.shape[0]} noise draws for {self.times.size - 1} steps",
                )
        if not np.all(np.isfinite(self.states)):
            raise InvalidParameterError("Trajectory states must be finite")

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def batch(self) -> int:
        return self.states.shape[1]

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    def state(self, i: int, path: int = 0) -> SpectralField:
        return SpectralField(eigs=self.eigs, coeffs=self.states[i, path])

    def terminal(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self, path: str, synthesize: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> str:
        """Write (path, t, mode_index, coeff) rows, or (path, t, grid_index, value)
        rows when ``synthesize`` maps (B, K) coefficients to (B, N) grid values."""
        index_name, value_name = ('grid_index', 'value') if synthesize else ('mode_index', 'coeff')
        with open(path, 'w', newline='') as handle:
            writer = csv.writer(handle)
            writer.writerow(['path', 't', index_name, value_name])
            for i, t in enumerate(self.times):
                block = synthesize(self.states[i]) if synthesize else self.states[i]
                for b, row in enumerate(block):
                    for j, value in enumerate(row):
                        writer.writerow([b, format_float(t), j, format_float(value)])
        return path
