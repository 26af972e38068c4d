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
from typing import Dict, List, Optional, Tuple

import numpy as np

from fsbridge.errors import InvalidParameterError, SerializationError
from fsbridge.models.encoding import decode_f64, encode_f64

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ControlArch:
    """Architecture descriptor of the spectral control network."""
    dims: int = 1
    n_layers: int = 3
    width: int = 32
    n_spectral_modes: int = 10
    fourier_features_m: int = 8
    time_embed_dim: int = 64
    fourier_scale: float = 1.0
    time_scale: float = 1000.0
    in_channels: int = 1

    def __post_init__(self):
        if self.dims not in (1, 2):
            raise InvalidParameterError("Unsupported control dims", f"dims={self.dims}")
        for name in ('n_layers', 'width', 'n_spectral_modes', 'time_embed_dim', 'in_channels'):
            if getattr(self, name) < 1:
                raise InvalidParameterError(f"{name} must be positive", f"{name}={getattr(self, name)}")
        if self.fourier_features_m < 0:
            raise InvalidParameterError("fourier_features_m must be non-negative")
        if self.time_embed_dim % 2:
            raise InvalidParameterError("time_embed_dim must be even", f"time_embed_dim={self.time_embed_dim}")

    @classmethod
    def preset(cls, name: str, dims: int) -> 'ControlArch':
        """Named architectures: ``default`` (1-D under 100k parameters, 2-D the
        4-layer / 8-mode / width-32 FNO setting) and ``small`` (gradient checks)."""
        if name == 'default':
            if dims == 1:
                return cls(dims=1, n_layers=3, width=32, n_spectral_modes=10)
            return cls(dims=2, n_layers=4, width=32, n_spectral_modes=8)
        if name == 'small':
            return cls(dims=dims, n_layers=1, width=4, n_spectral_modes=3,
                       fourier_features_m=2, time_embed_dim=8)
        raise InvalidParameterError("Unknown architecture preset", name)

    @property
    def lift_inputs(self) -> int:
        return self.in_channels + 2 * self.fourier_features_m

    @property
    def mode_shape(self) -> Tuple[int, ...]:
        return (self.n_spectral_modes,) * self.dims

    def layout(self) -> List[Tuple[str, Tuple[int, ...]]]:
        """Ordered (name, shape) pairs of the flat parameter vector."""
        w, E, L = self.width, self.time_embed_dim, self.n_layers
        shapes = [
            ('lift.w', (w, self.lift_inputs)),
            ('lift.b', (w,)),
            ('time.w1', (E, E)),
            ('time.b1', (E,)),
            ('time.w2', (2 * L * w, E)),
            ('time.b2', (2 * L * w,)),
        ]
        for l in range(L):
            shapes += [
                (f'block{l}.spec', (w, w) + self.mode_shape),
                (f'block{l}.skip_w', (w, w)),
                (f'block{l}.skip_b', (w,)),
                (f'block{l}.mlp_w1', (w, w)),
                (f'block{l}.mlp_b1', (w,)),
                (f'block{l}.mlp_w2', (w, w)),
                (f'block{l}.mlp_b2', (w,)),
            ]
        shapes += [('head.w', (self.in_channels, w)), ('head.b', (self.in_channels,))]
        return shapes

    def n_params(self) -> int:
        return int(sum(np.prod(shape) for _, shape in self.layout()))

    def to_dict(self) -> dict:
        return {
            'dims': self.dims,
            'n_layers': self.n_layers,
            'width': self.width,
            'n_spectral_modes': self.n_spectral_modes,
            'fourier_features_m': self.fourier_features_m,
            'time_embed_dim': self.time_embed_dim,
            'fourier_scale': self.fourier_scale,
            'time_scale': self.time_scale,
            'in_channels': self.in_channels,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'ControlArch':
        return cls(**data)


@dataclass(frozen=True)
class FourierFeatures:
    """Fixed Gaussian frequency matrix B (m x d) for the point embedding."""
    B: np.ndarray
    scale: float

    @classmethod
    def draw(cls, arch: ControlArch, rng: np.random.Generator) -> 'FourierFeatures':
        B = arch.fourier_scale * rng.standard_normal((arch.fourier_features_m, arch.dims))
        B.setflags(write=False)
        return cls(B=B, scale=arch.fourier_scale)

    def embed(self, unit_points: np.ndarray) -> np.ndarray:
        """(N, d) points in the unit box -> (2m, N) features [cos(2 pi B p), sin(2 pi B p)]."""
        proj = 2.0 * np.pi * self.B @ unit_points.T
        return np.concatenate([np.cos(proj), np.sin(proj)], axis=0)


@dataclass
class ControlParams:
    """Parameters of the control network alpha(t, x; theta)."""
    arch: ControlArch
    theta: np.ndarray
    init_seed: int
    features: FourierFeatures
    train_step: int = 0
    extras: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if self.theta.size != self.arch.n_params():
            raise InvalidParameterError(
                "Parameter vector does not match architecture",
                f"{self.theta.size} values, architecture needs {self.arch.n_params()}",
            )
        if not np.all(np.isfinite(self.theta)):
            raise InvalidParameterError("Parameters must be finite")

    def unpack(self, flat: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
        """Named views into ``flat`` (default: theta) following the layout."""
        flat = self.theta if flat is None else flat
        views, offset = {}, 0
        for name, shape in self.arch.layout():
            size = int(np.prod(shape))
            views[name] = flat[offset:offset + size].reshape(shape)
            offset += size
        return views

    def with_theta(self, theta: np.ndarray, train_step: Optional[int] = None) -> 'ControlParams':
        return ControlParams(
            arch=self.arch,
            theta=np.array(theta, dtype=np.float64),
            init_seed=self.init_seed,
            features=self.features,
            train_step=self.train_step if train_step is None else train_step,
            extras={k: v.copy() for k, v in self.extras.items()},
        )

    def to_dict(self) -> dict:
        return {
            'version': CHECKPOINT_VERSION,
            'arch': self.arch.to_dict(),
            'theta': encode_f64(self.theta),
            'seed': self.init_seed,
            'train_step': self.train_step,
            'extras': {k: {'shape': list(v.shape), 'data': encode_f64(v)} for k, v in self.extras.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'ControlParams':
        version = data.get('version')
        if version != CHECKPOINT_VERSION:
            raise SerializationError(
                "Unsupported checkpoint version",
                f"document version {version}, expected {CHECKPOINT_VERSION}",
            )
        # imported here: control_net depends on this module
        from fsbridge.control_net import draw_features
        arch = ControlArch.from_dict(data['arch'])
        return cls(
            arch=arch,
            theta=decode_f64(data['theta'], (arch.n_params(),)),
            init_seed=int(data['seed']),
            features=draw_features(arch, int(data['seed'])),
            train_step=int(data.get('train_step', 0)),
            extras={k: decode_f64(v['data'], v['shape']) for k, v in data.get('extras', {}).items()},
        )

    def save(self, path: str) -> str:
        with open(path, 'w') as handle:
            json.dump(self.to_dict(), handle)
        return path

    @classmethod
    def load(cls, path: str) -> 'ControlParams':
        with open(path) as handle:
            return cls.from_dict(json.load(handle))
