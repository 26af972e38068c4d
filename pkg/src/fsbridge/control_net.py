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

"""Resolution-free spectral control network alpha(t, x; theta) with reverse mode.

The network acts on a batch of grid fields:

    lift:   h0 = W_lift [x, cos(2 pi B p), sin(2 pi B p)] + b
    block:  s  = SpecConv(h) + U h + c
            h <- h + V2 silu(V1 (s (1 + scale(t)) + shift(t)) + e1) + e2
    head:   alpha = W_head h + b_head

``SpecConv`` averages each channel against cos(pi k x) on the unit box,
mixes channels with real multipliers per retained mode, and synthesizes
sum_k c_k Y_k cos(pi k x) back at the grid points (c_0 = 1, c_k = 2). The
output of the layer therefore stays in the span of the retained cosines.
Both steps only use unit-box coordinates, so the same weights apply at any
resolution. Scale and shift come from a sinusoidal time embedding passed
through a two-layer SiLU MLP.

Every forward pass returns a cache; ``backward`` turns a cotangent on the
output into gradients for the flat parameter vector and for the input.
"""
import json
import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from scipy.special import expit

from fsbridge.errors import GridMismatchError, SerializationError
from fsbridge.models.control_params import ControlArch, ControlParams, FourierFeatures
from fsbridge.models.fields import GridField, GridSpec
from fsbridge.rng import derive_seed

logger = logging.getLogger(__name__)


def silu(x: np.ndarray) -> np.ndarray:
    return x * expit(x)


def silu_grad(x: np.ndarray) -> np.ndarray:
    s = expit(x)
    return s * (1.0 + x * (1.0 - s))


def time_embedding(t: np.ndarray, dim: int, time_scale: float) -> np.ndarray:
    """(B,) times -> (B, dim) [sin, cos] features with geometric frequencies."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = time_scale * np.asarray(t, dtype=np.float64).reshape(-1, 1) * freqs
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


@dataclass(frozen=True)
class _SpectralMatrices:
    analysis: Tuple[np.ndarray, ...]   # per axis (M, R): cos(pi k x)
    synthesis: Tuple[np.ndarray, ...]  # per axis (M, R): c_k cos(pi k x)
    n_points: int


def _spectral_matrices(grid: GridSpec, n_modes: int) -> _SpectralMatrices:
    analysis, synthesis = [], []
    k = np.arange(n_modes)
    weight = np.where(k == 0, 1.0, 2.0)
    for unit in grid.unit_axes():
        basis = np.cos(np.pi * np.outer(k, unit))
        analysis.append(basis)
        synthesis.append(weight[:, None] * basis)
    return _SpectralMatrices(tuple(analysis), tuple(synthesis), grid.size)


def _spectral_conv(h: np.ndarray, W: np.ndarray, mats: _SpectralMatrices, shape):
    """h: (B, C, N) -> (y (B, O, N), X (B, C, *M))"""
    B, C, _ = h.shape
    hs = h.reshape((B, C) + tuple(shape))
    if len(shape) == 1:
        (C1,), (E1,) = mats.analysis, mats.synthesis
        X = np.einsum('bcn,kn->bck', hs, C1) / mats.n_points
        Y = np.einsum('bck,cok->bok', X, W)
        y = np.einsum('bok,kn->bon', Y, E1)
    else:
        (C1, C2), (E1, E2) = mats.analysis, mats.synthesis
        X = np.einsum('bckj,lj->bckl', np.einsum('bcij,ki->bckj', hs, C1), C2) / mats.n_points
        Y = np.einsum('bckl,cokl->bokl', X, W)
        y = np.einsum('boil,lj->boij', np.einsum('bokl,ki->boil', Y, E1), E2)
    return y.reshape(B, -1, mats.n_points), X


def _spectral_conv_backward(g: np.ndarray, X: np.ndarray, W: np.ndarray, mats: _SpectralMatrices, shape):
    """Cotangent (B, O, N) -> (g_h (B, C, N), g_W)."""
    B, O, _ = g.shape
    gs = g.reshape((B, O) + tuple(shape))
    if len(shape) == 1:
        (C1,), (E1,) = mats.analysis, mats.synthesis
        gY = np.einsum('bon,kn->bok', gs, E1)
        gW = np.einsum('bck,bok->cok', X, gY)
        gX = np.einsum('bok,cok->bck', gY, W)
        gh = np.einsum('bck,kn->bcn', gX, C1) / mats.n_points
    else:
        (C1, C2), (E1, E2) = mats.analysis, mats.synthesis
        gY = np.einsum('bokj,lj->bokl', np.einsum('boij,ki->bokj', gs, E1), E2)
        gW = np.einsum('bckl,bokl->cokl', X, gY)
        gX = np.einsum('bokl,cokl->bckl', gY, W)
        gh = np.einsum('bcil,lj->bcij', np.einsum('bckl,ki->bcil', gX, C1), C2) / mats.n_points
    return gh.reshape(B, -1, mats.n_points), gW


def _dense(w: np.ndarray, h: np.ndarray) -> np.ndarray:
    return np.einsum('oc,bcn->bon', w, h)


def _dense_grads(g: np.ndarray, w: np.ndarray, h: np.ndarray):
    """(g_w, g_b, g_h) for out = w h + b with cotangent g."""
    return np.einsum('bon,bcn->oc', g, h), g.sum(axis=(0, 2)), np.einsum('oc,bon->bcn', w, g)


class ControlNet:
    """Stateless evaluator bound to a ``ControlParams``.

    ``evaluate(t, x, grid)`` takes times of shape (B,) and grid values of
    shape (B, N) and returns the control values (B, N) with a cache for
    ``backward``. Assign a new ``params`` to move the network to new weights.
    """

    def __init__(self, params: ControlParams):
        self.params = params
        self._matrices: Dict[Tuple, _SpectralMatrices] = {}
        self._features: Dict[Tuple, np.ndarray] = {}

    @property
    def arch(self) -> ControlArch:
        return self.params.arch

    @property
    def n_params(self) -> int:
        return self.params.theta.size

    def _grid_constants(self, grid: GridSpec):
        if grid.dims != self.arch.dims:
            raise GridMismatchError("Grid dimension not supported by architecture",
                                    f"grid dims={grid.dims}, arch dims={self.arch.dims}")
        key = grid.resolution
        if key not in self._matrices:
            self._matrices[key] = _spectral_matrices(grid, self.arch.n_spectral_modes)
            mesh = np.meshgrid(*grid.unit_axes(), indexing='ij')
            unit_points = np.stack([m.ravel() for m in mesh], axis=-1)
            self._features[key] = self.params.features.embed(unit_points)
        return self._matrices[key], self._features[key]

    def evaluate(self, t, x: np.ndarray, grid: GridSpec):
        arch = self.arch
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        B = x.shape[0]
        if x.shape[1] != grid.size * arch.in_channels:
            raise GridMismatchError("Input width does not match grid", f"{x.shape[1]} vs {grid.size}")
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (B,))
        mats, feats = self._grid_constants(grid)
        P = self.params.unpack()
        w, L = arch.width, arch.n_layers

        z = np.concatenate([x.reshape(B, arch.in_channels, grid.size),
                            np.broadcast_to(feats, (B,) + feats.shape)], axis=1)
        h = _dense(P['lift.w'], z) + P['lift.b'][None, :, None]

        emb = time_embedding(t, arch.time_embed_dim, arch.time_scale)
        e1 = emb @ P['time.w1'].T + P['time.b1']
        s1 = silu(e1)
        mod = s1 @ P['time.w2'].T + P['time.b2']

        blocks = []
        for l in range(L):
            scale = mod[:, 2 * l * w:(2 * l + 1) * w]
            shift = mod[:, (2 * l + 1) * w:(2 * l + 2) * w]
            conv, X = _spectral_conv(h, P[f'block{l}.spec'], mats, grid.shape)
            s = conv + _dense(P[f'block{l}.skip_w'], h) + P[f'block{l}.skip_b'][None, :, None]
            st = s * (1.0 + scale[:, :, None]) + shift[:, :, None]
            a1 = _dense(P[f'block{l}.mlp_w1'], st) + P[f'block{l}.mlp_b1'][None, :, None]
            act = silu(a1)
            r = _dense(P[f'block{l}.mlp_w2'], act) + P[f'block{l}.mlp_b2'][None, :, None]
            blocks.append({'h': h, 'X': X, 's': s, 'st': st, 'a1': a1, 'act': act, 'scale': scale})
            h = h + r

        out = _dense(P['head.w'], h) + P['head.b'][None, :, None]
        cache = {'grid': grid, 'z': z, 'emb': emb, 'e1': e1, 's1': s1, 'blocks': blocks, 'h': h, 'B': B}
        return out.reshape(B, -1), cache

    def backward(self, cache: dict, cotangent: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Reverse pass: returns (grad w.r.t. theta, grad w.r.t. the input values)."""
        arch = self.arch
        grid, B = cache['grid'], cache['B']
        g_out = np.asarray(cotangent, dtype=np.float64).reshape(B, arch.in_channels, grid.size)
        mats, _ = self._grid_constants(grid)
        P = self.params.unpack()
        G = {name: np.zeros(shape) for name, shape in arch.layout()}
        w, L = arch.width, arch.n_layers

        G['head.w'], G['head.b'], g_h = _dense_grads(g_out, P['head.w'], cache['h'])
        g_mod = np.zeros((B, 2 * L * w))
        for l in reversed(range(L)):
            blk = cache['blocks'][l]
            G[f'block{l}.mlp_w2'], G[f'block{l}.mlp_b2'], g_act = _dense_grads(g_h, P[f'block{l}.mlp_w2'], blk['act'])
            g_a1 = g_act * silu_grad(blk['a1'])
            G[f'block{l}.mlp_w1'], G[f'block{l}.mlp_b1'], g_st = _dense_grads(g_a1, P[f'block{l}.mlp_w1'], blk['st'])
            g_s = g_st * (1.0 + blk['scale'][:, :, None])
            g_mod[:, 2 * l * w:(2 * l + 1) * w] = np.sum(g_st * blk['s'], axis=2)
            g_mod[:, (2 * l + 1) * w:(2 * l + 2) * w] = np.sum(g_st, axis=2)
            G[f'block{l}.skip_w'], G[f'block{l}.skip_b'], g_skip = _dense_grads(g_s, P[f'block{l}.skip_w'], blk['h'])
            g_conv, G[f'block{l}.spec'] = _spectral_conv_backward(g_s, blk['X'], P[f'block{l}.spec'], mats, grid.shape)
            g_h = g_h + g_skip + g_conv

        G['time.w2'] = g_mod.T @ cache['s1']
        G['time.b2'] = g_mod.sum(axis=0)
        g_e1 = (g_mod @ P['time.w2']) * silu_grad(cache['e1'])
        G['time.w1'] = g_e1.T @ cache['emb']
        G['time.b1'] = g_e1.sum(axis=0)

        G['lift.w'], G['lift.b'], g_z = _dense_grads(g_h, P['lift.w'], cache['z'])
        g_x = g_z[:, :arch.in_channels, :].reshape(B, -1)
        g_theta = np.concatenate([G[name].ravel() for name, _ in arch.layout()])
        return g_theta, g_x

    def __call__(self, t, x: np.ndarray, grid: GridSpec) -> np.ndarray:
        return self.evaluate(t, x, grid)[0]


class ZeroControl:
    """alpha = 0; the uncontrolled process."""
    n_params = 0

    def evaluate(self, t, x, grid):
        return np.zeros_like(np.atleast_2d(x), dtype=np.float64), None

    def backward(self, cache, cotangent):
        return np.zeros(0), np.zeros_like(np.atleast_2d(cotangent), dtype=np.float64)


class ConstantControl:
    """alpha(t, x) = theta, a fixed grid field; theta is the parameter vector."""

    def __init__(self, theta: np.ndarray):
        self.theta = np.asarray(theta, dtype=np.float64).reshape(-1)

    @property
    def n_params(self) -> int:
        return self.theta.size

    def evaluate(self, t, x, grid):
        x = np.atleast_2d(x)
        return np.broadcast_to(self.theta, x.shape).copy(), x.shape[0]

    def backward(self, cache, cotangent):
        cotangent = np.atleast_2d(cotangent)
        return cotangent.sum(axis=0), np.zeros_like(cotangent)


class LinearControl:
    """alpha(t, x) = theta * x with a scalar theta."""

    def __init__(self, theta: float):
        self.theta = np.array([float(theta)])

    n_params = 1

    def evaluate(self, t, x, grid):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return self.theta[0] * x, x

    def backward(self, cache, cotangent):
        cotangent = np.atleast_2d(cotangent)
        return np.array([np.sum(cotangent * cache)]), self.theta[0] * cotangent


def draw_features(arch: ControlArch, seed: int) -> FourierFeatures:
    return FourierFeatures.draw(arch, np.random.default_rng(derive_seed(seed, 'fourier')))


def init(arch: ControlArch, seed: int, zero_final: bool = True) -> ControlParams:
    """Deterministic initialization from ``seed``.

    Dense weights are N(0, 1/fan_in), spectral multipliers N(0, 1)/(w*w),
    biases zero. The time-modulation output layer starts at zero (identity
    modulation) and, with ``zero_final``, so does the head, making the
    initial control identically zero.
    """
    rng = np.random.default_rng(derive_seed(seed, 'init'))
    chunks: List[np.ndarray] = []
    for name, shape in arch.layout():
        if name.endswith('.spec'):
            value = rng.standard_normal(shape) / (arch.width * arch.width)
        elif len(shape) == 2:
            value = rng.standard_normal(shape) / np.sqrt(shape[1])
        else:
            value = np.zeros(shape)
        if name in ('time.w2', 'time.b2') or (zero_final and name.startswith('head.')):
            value = np.zeros(shape)
        chunks.append(value.ravel())
    params = ControlParams(arch=arch, theta=np.concatenate(chunks), init_seed=seed,
                           features=draw_features(arch, seed))
    logger.debug(f"Initialized control network: {arch.n_params()} parameters, seed={seed}")
    return params


def _check_field(params: ControlParams, x: GridField):
    if x.grid.dims != params.arch.dims:
        raise GridMismatchError("Grid dimension not supported by architecture",
                                f"grid dims={x.grid.dims}, arch dims={params.arch.dims}")


def forward(params: ControlParams, t: float, x: GridField) -> GridField:
    """Evaluate the control for one field at time ``t``."""
    _check_field(params, x)
    out, _ = ControlNet(params).evaluate(np.array([t]), x.values[None, :], x.grid)
    return GridField(grid=x.grid, values=out[0])


def vjp(params: ControlParams, t: float, x: GridField, cotangent: GridField) -> Tuple[np.ndarray, GridField]:
    """Gradients of <cotangent, forward(params, t, x)> w.r.t. theta and x.

    Raises:
        GridMismatchError: If the cotangent is not on ``x``'s grid.
    """
    _check_field(params, x)
    if cotangent.grid != x.grid:
        raise GridMismatchError("Cotangent grid differs from input grid")
    net = ControlNet(params)
    _, cache = net.evaluate(np.array([t]), x.values[None, :], x.grid)
    g_theta, g_x = net.backward(cache, cotangent.values[None, :])
    return g_theta, GridField(grid=x.grid, values=g_x[0])


def serialize(params: ControlParams) -> str:
    return json.dumps(params.to_dict())


def deserialize(text: str) -> ControlParams:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SerializationError("Checkpoint is not valid JSON", str(e))
    return ControlParams.from_dict(data)
