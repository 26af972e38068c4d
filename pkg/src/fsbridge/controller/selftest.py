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

"""Oracle checks run by ``fsbridge selftest``.

Each check compares a closed form against an independent computation and
returns a ``CheckResult``; ``run_selftest`` runs all of them and
``format_table`` renders the pass/fail table printed by the CLI.
"""
import logging
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np
from scipy.special import roots_hermitenorm

from fsbridge.control_net import ControlNet, init
from fsbridge.models.control_params import ControlArch
from fsbridge.models.fields import GridSpec
from fsbridge.models.process import OUBridgeParams
from fsbridge.models.trajectory import SchemeKind, StepScheme
from fsbridge.ou_bridge import (bridge_drift, bridge_marginal, log_rn_density, log_rn_density_grad_x,
                                single_mode_process, transition_moments)
from fsbridge.sde_engine import kinetic_running_grad, replay_gradient, running_cost, simulate_coeffs
from fsbridge.spectral_basis import SpectralTransform, build_cosine_basis, build_kernel_basis_1d

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
FD_TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _random_process(rng: np.random.Generator, a_range=(0.05, 3.0)) -> OUBridgeParams:
    return single_mode_process(a=rng.uniform(*a_range), lam=rng.uniform(0.1, 2.0),
                               sigma=rng.uniform(0.2, 2.0), T=rng.uniform(0.5, 3.0))


def check_drift_identity(rng: np.random.Generator, n: int = 100) -> CheckResult:
    worst = 0.0
    for _ in range(n):
        p = _random_process(rng)
        t = rng.uniform(0.0, 0.9 * p.T)
        x, x_T = rng.standard_normal(2)
        drift = bridge_drift(p, 0, t, x, x_T)
        score = -p.a[0] * x + p.sigma ** 2 * p.lam[0] * log_rn_density_grad_x(p, p.T - t, x, x_T)[0]
        worst = max(worst, abs(drift - score) / max(abs(drift), 1e-12))
    return CheckResult('drift/score identity', worst < 1e-10, f"max rel err {worst:.2e} over {n} tuples")


def check_density_normalization(rng: np.random.Generator, n: int = 20) -> CheckResult:
    nodes, weights = roots_hermitenorm(200)
    weights = weights / np.sqrt(2.0 * np.pi)
    worst = 0.0
    for _ in range(n):
        p = _random_process(rng)
        a = p.a[0]
        t = rng.uniform(0.25, 2.5) / a
        s_inf = p.stationary_var[0]
        x = rng.uniform(-1.0, 1.0) * np.sqrt(s_inf)
        q = np.exp([log_rn_density(p, 0, t, x, np.sqrt(s_inf) * z) for z in nodes])
        worst = max(worst, abs(float(weights @ q) - 1.0))
    return CheckResult('density normalization', worst < 1e-8, f"max |int q - 1| {worst:.2e} over {n} tuples")


def check_brownian_limit(rng: np.random.Generator, n: int = 20) -> CheckResult:
    worst = 0.0
    for _ in range(n):
        sigma, T = rng.uniform(0.2, 2.0), rng.uniform(0.5, 3.0)
        p = single_mode_process(a=1e-10, lam=1.0, sigma=sigma, T=T)
        t = rng.uniform(0.05, 0.95) * T
        x0, x, x_T = rng.standard_normal(3)
        errors = []
        drift = bridge_drift(p, 0, t, x, x_T)
        brownian = (x_T - x) / (T - t)
        errors.append(abs(drift - brownian) / max(abs(brownian), 1e-3))
        law = bridge_marginal(p, 0, t, x0, x_T)
        mean = (1.0 - t / T) * x0 + (t / T) * x_T
        var = sigma ** 2 * t * (T - t) / T
        errors.append(abs(law.mean - mean) / max(abs(mean), 1e-3))
        errors.append(abs(law.var - var) / var)
        worst = max(worst, max(errors))
    return CheckResult('Brownian-bridge limit', worst < 1e-6, f"max rel err {worst:.2e} over {n} tuples")


def check_chapman_kolmogorov(rng: np.random.Generator, n: int = 20) -> CheckResult:
    worst = 0.0
    for _ in range(n):
        p = _random_process(rng)
        tau1, tau2 = rng.uniform(0.0, 0.5 * p.T, size=2)
        g1, g2 = transition_moments(p, 0, tau1), transition_moments(p, 0, tau2)
        g = transition_moments(p, 0, tau1 + tau2)
        worst = max(worst, abs(g.mean - g1.mean * g2.mean), abs(g.var - (g2.mean ** 2 * g1.var + g2.var)))
    return CheckResult('Chapman-Kolmogorov', worst < 1e-12, f"max abs err {worst:.2e} over {n} tuples")


def check_orthonormality(rng: np.random.Generator) -> CheckResult:
    kernel = build_kernel_basis_1d(GridSpec.line(50, -2.0, 2.0), 0.2)
    cosine = build_cosine_basis(GridSpec.square(16), 8)
    worst = max(kernel.gram_error(), cosine.gram_error())
    return CheckResult('basis orthonormality', worst < 1e-8, f"max |Gram - I| {worst:.2e}")


def _perturbed_net(arch: ControlArch, rng: np.random.Generator) -> ControlNet:
    params = init(arch, int(rng.integers(2 ** 31)), zero_final=False)
    theta = params.theta + 0.1 * rng.standard_normal(params.theta.size)
    return ControlNet(params.with_theta(theta))


def _directional_errors(loss: Callable[[np.ndarray], float], theta: np.ndarray, grad: np.ndarray,
                        rng: np.random.Generator, n_dirs: int) -> float:
    worst = 0.0
    for _ in range(n_dirs):
        v = rng.standard_normal(theta.size)
        v /= np.linalg.norm(v)
        fd = (loss(theta + FD_STEP * v) - loss(theta - FD_STEP * v)) / (2.0 * FD_STEP)
        an = float(grad @ v)
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    return worst


def check_control_gradient(rng: np.random.Generator, n_dirs: int = 20) -> CheckResult:
    worst = 0.0
    for dims, grid in ((1, GridSpec.line(16)), (2, GridSpec.square(8))):
        net = _perturbed_net(ControlArch.preset('small', dims), rng)
        x = rng.standard_normal((2, grid.size))
        t = rng.uniform(0.0, 1.0, size=2)
        c = rng.standard_normal((2, grid.size))
        _, cache = net.evaluate(t, x, grid)
        g_theta, _ = net.backward(cache, c)
        base = net.params

        def loss(theta):
            net.params = base.with_theta(theta)
            return float(np.sum(c * net.evaluate(t, x, grid)[0]))

        worst = max(worst, _directional_errors(loss, base.theta, g_theta, rng, n_dirs))
        net.params = base
    return CheckResult('control-net vjp', worst < FD_TOLERANCE, f"max rel err {worst:.2e}, 1-D and 2-D small nets")


def check_replay_gradient(rng: np.random.Generator, n_dirs: int = 20) -> CheckResult:
    eigs = build_cosine_basis(GridSpec.line(16), 6)
    p = OUBridgeParams(eigs=eigs, sigma=0.7, T=1.0)
    transform = SpectralTransform(eigs)
    scheme = StepScheme(kind=SchemeKind.EULER_MARUYAMA, n_steps=3)
    net = _perturbed_net(ControlArch.preset('small', 1), rng)
    x0 = rng.standard_normal((2, eigs.K))
    noises = rng.standard_normal((scheme.n_steps, 2, eigs.K))
    base = net.params

    def objective(theta):
        net.params = base.with_theta(theta)
        traj = simulate_coeffs(p, x0, net, scheme, transform, noises=noises)
        return traj, float(np.sum(running_cost(traj)) + 0.5 * np.sum(traj.terminal() ** 2))

    traj, _ = objective(base.theta)
    grads = replay_gradient(traj, p, net, traj.terminal(), kinetic_running_grad)
    worst = _directional_errors(lambda th: objective(th)[1], base.theta, grads.theta, rng, n_dirs)
    net.params = base
    return CheckResult('replay gradient', worst < FD_TOLERANCE, f"max rel err {worst:.2e}, 3-step EM")


CHECKS: Tuple[Callable[[np.random.Generator], CheckResult], ...] = (
    check_drift_identity,
    check_density_normalization,
    check_brownian_limit,
    check_chapman_kolmogorov,
    check_orthonormality,
    check_control_gradient,
    check_replay_gradient,
)


def run_selftest(seed: int = 0) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for check in CHECKS:
        result = check(rng)
        logger.debug(f"{result.name}: {'pass' if result.passed else 'FAIL'} ({result.detail})")
        results.append(result)
    return results


def format_table(results: List[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check'.ljust(width)}  status  detail", f"{'-' * width}  ------  ------"]
    lines += [f"{r.name.ljust(width)}  {'PASS' if r.passed else 'FAIL':6}  {r.detail}" for r in results]
    return "\n".join(lines)
