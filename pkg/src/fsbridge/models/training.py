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

from dataclasses import dataclass, field
from typing import Callable, Tuple

import numpy as np

from fsbridge.errors import GridMismatchError, InvalidParameterError
from fsbridge.models.fields import GridField, GridSpec
from fsbridge.models.trajectory import StepScheme

try:
    from enum import StrEnum  # Python 3.11+
except ImportError:
    from strenum import StrEnum  # Python <3.11

Sampler = Callable[[int, np.random.Generator], np.ndarray]


class CouplingKind(StrEnum):
    INDEPENDENT = "independent-product"
    PAIRED = "paired"


class LRSchedule(StrEnum):
    CONSTANT = "constant"
    COSINE = "cosine"


@dataclass
class Coupling:
    """Joint law of (x0, xT) endpoint fields on a shared grid.

    ``sample(n, rng)`` returns two (n, N) arrays of grid values.
    """
    kind: CouplingKind
    grid: GridSpec
    draw: Callable[[int, np.random.Generator], Tuple[np.ndarray, np.ndarray]]

    def sample(self, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        x0, xT = self.draw(n, rng)
        x0, xT = np.atleast_2d(x0), np.atleast_2d(xT)
        if x0.shape != (n, self.grid.size) or xT.shape != (n, self.grid.size):
            raise GridMismatchError(
                "Coupling marginals are not on the coupling grid",
                f"x0 {x0.shape}, xT {xT.shape}, expected ({n}, {self.grid.size})",
            )
        return x0, xT

    @classmethod
    def independent(cls, grid: GridSpec, sample_x0: Sampler, sample_xT: Sampler) -> 'Coupling':
        """pi_0 (x) pi_T: the two marginals are drawn from separate streams of ``rng``."""
        def draw(n, rng):
            return sample_x0(n, rng), sample_xT(n, rng)
        return cls(kind=CouplingKind.INDEPENDENT, grid=grid, draw=draw)

    @classmethod
    def paired(cls, grid: GridSpec, sample_pairs: Callable[[int, np.random.Generator], Tuple[np.ndarray, np.ndarray]]) -> 'Coupling':
        return cls(kind=CouplingKind.PAIRED, grid=grid, draw=sample_pairs)

    @classmethod
    def dirac(cls, x0: GridField, xT: GridField) -> 'Coupling':
        if x0.grid != xT.grid:
            raise GridMismatchError("Dirac endpoints live on different grids")
        def draw(n, rng):
            return np.tile(x0.values, (n, 1)), np.tile(xT.values, (n, 1))
        return cls(kind=CouplingKind.INDEPENDENT, grid=x0.grid, draw=draw)


def _check_positive(**values):
    for name, value in values.items():
        if not value > 0:
            raise InvalidParameterError(f"{name} must be positive", f"{name}={value}")


@dataclass
class BMConfig:
    """Bridge Matching training settings."""
    batch_size: int = 64
    n_iters: int = 20000
    lr: float = 5e-4
    ema_rate: float = 0.999
    scheme: StepScheme = field(default_factory=StepScheme)
    seed: int = 0
    terminal_margin: float = 1e-3  # fraction of T excluded from t-sampling
    target_clamp: float = 1e4
    simulate_paths: bool = False
    lr_schedule: LRSchedule = LRSchedule.CONSTANT
    checkpoint_every: int = 0
    log_every: int = 100

    def __post_init__(self):
        _check_positive(batch_size=self.batch_size, n_iters=self.n_iters, lr=self.lr,
                        terminal_margin=self.terminal_margin, target_clamp=self.target_clamp)
        if not 0.0 <= self.ema_rate < 1.0:
            raise InvalidParameterError("ema_rate must lie in [0, 1)", f"ema_rate={self.ema_rate}")
        self.lr_schedule = LRSchedule(self.lr_schedule)


@dataclass
class BayesConfig:
    """Posterior-sampling (relative-entropy) training settings."""
    batch_size: int = 16
    n_iters: int = 10000
    lr: float = 5e-4
    scheme: StepScheme = field(default_factory=StepScheme)
    learnable_x0: bool = False
    seed: int = 0
    lr_schedule: LRSchedule = LRSchedule.CONSTANT
    checkpoint_every: int = 0
    log_every: int = 100

    def __post_init__(self):
        _check_positive(batch_size=self.batch_size, n_iters=self.n_iters, lr=self.lr)
        self.lr_schedule = LRSchedule(self.lr_schedule)
