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

"""Adam moments, parameter EMA and learning-rate schedules on flat vectors."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from fsbridge.errors import InvalidParameterError
from fsbridge.models.encoding import decode_f64, encode_f64
from fsbridge.models.training import LRSchedule


def learning_rate(base_lr: float, step: int, total: int, schedule: LRSchedule = LRSchedule.CONSTANT) -> float:
    """Learning rate at ``step`` (0-based) of ``total``; cosine anneals to zero."""
    if LRSchedule(schedule) == LRSchedule.COSINE:
        return 0.5 * base_lr * (1.0 + np.cos(np.pi * min(step, total) / total))
    return base_lr


@dataclass
class Adam:
    """Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""
    size: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise InvalidParameterError("Adam betas must lie in [0, 1)", f"{self.beta1}, {self.beta2}")
        self.m = np.zeros(self.size) if self.m is None else np.asarray(self.m, dtype=np.float64)
        self.v = np.zeros(self.size) if self.v is None else np.asarray(self.v, dtype=np.float64)

    def update(self, theta: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        """Return the new parameter vector after one step."""
        self.step_count += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.step_count)
        v_hat = self.v / (1.0 - self.beta2 ** self.step_count)
        return theta - lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {'size': self.size, 'step': self.step_count, 'm': encode_f64(self.m), 'v': encode_f64(self.v)}

    @classmethod
    def from_state(cls, data: dict) -> 'Adam':
        size = int(data['size'])
        return cls(size=size, step_count=int(data['step']),
                   m=decode_f64(data['m'], (size,)), v=decode_f64(data['v'], (size,)))


@dataclass
class EMA:
    """Exponential moving average of a parameter vector."""
    rate: float
    value: Optional[np.ndarray] = None

    def update(self, theta: np.ndarray) -> np.ndarray:
        if self.value is None:
            self.value = np.array(theta, dtype=np.float64)
        else:
            self.value = self.rate * self.value + (1.0 - self.rate) * theta
        return self.value
