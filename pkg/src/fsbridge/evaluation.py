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

"""Metrics: permutation MMD test power, closed-form GP posteriors and
distributional checks of simulated spectral marginals."""
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import cho_solve
from scipy.spatial.distance import cdist, pdist
from scipy.stats import kstest, norm

from fsbridge.datasets import jittered_cholesky, kernel_matrix
from fsbridge.errors import InsufficientSamplesError, InvalidParameterError
from fsbridge.models.eigen_system import EigenSystem
from fsbridge.models.fields import FieldSet
from fsbridge.models.process import CoordGaussian, OUBridgeParams
from fsbridge.models.reports import MarginalReport, TwoSampleResult
from fsbridge.models.tasks import GPSample, KernelKind
from fsbridge.models.trajectory import Trajectory
from fsbridge.ou_bridge import integrated_decay
from fsbridge.rng import derive_seed
from fsbridge.sde_engine import running_cost, step_coefficients
from fsbridge.spectral_basis import SpectralTransform

logger = logging.getLogger(__name__)

DEFAULT_PERMUTATIONS = 200
DEFAULT_ALPHA = 0.05
GP_NOISE_VAR = 1e-2


def median_bandwidth(z: np.ndarray) -> float:
    """Median pairwise Euclidean distance of the rows of ``z``."""
    d = pdist(z, 'sqeuclidean')
    med = float(np.median(d)) if d.size else 0.0
    return float(np.sqrt(med)) if med > 0 else 1.0


def _mmd2_from_gram(K: np.ndarray, n: int) -> float:
    m = K.shape[0] - n
    Kxx, Kyy, Kxy = K[:n, :n], K[n:, n:], K[:n, n:]
    return float((Kxx.sum() - np.trace(Kxx)) / (n * (n - 1))
                 + (Kyy.sum() - np.trace(Kyy)) / (m * (m - 1))
                 - 2.0 * Kxy.mean())


def mmd2_unbiased(x: np.ndarray, y: np.ndarray, bandwidth: float) -> float:
    """Unbiased MMD^2 with the kernel exp(-|x - y|^2 / (2 bandwidth^2))."""
    z = np.vstack([x, y])
    K = np.exp(-cdist(z, z, 'sqeuclidean') / (2.0 * bandwidth ** 2))
    return _mmd2_from_gram(K, len(x))


def mmd_permutation_test(x: np.ndarray, y: np.ndarray, rng: np.random.Generator,
                         n_permutations: int = DEFAULT_PERMUTATIONS,
                         bandwidth: Optional[float] = None) -> Tuple[float, float, float]:
    """Permutation two-sample test on the pooled sample.

    Returns:
        (MMD^2 statistic, p-value, bandwidth)
    """
    if len(x) < 2 or len(y) < 2:
        raise InsufficientSamplesError("MMD needs at least two samples per side", f"{len(x)}, {len(y)}")
    z = np.vstack([x, y])
    bandwidth = bandwidth or median_bandwidth(z)
    K = np.exp(-cdist(z, z, 'sqeuclidean') / (2.0 * bandwidth ** 2))
    n = len(x)
    stat = _mmd2_from_gram(K, n)
    count = 0
    for _ in range(n_permutations):
        perm = rng.permutation(len(z))
        if _mmd2_from_gram(K[np.ix_(perm, perm)], n) >= stat:
            count += 1
    return stat, (count + 1) / (n_permutations + 1), bandwidth


def _base_seed(rng: Union[np.random.Generator, int]) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(2 ** 62))
    return int(rng)


def mmd_test_power(gen: FieldSet, real: FieldSet, repeats: int = 100, n: int = 256,
                   alpha: float = DEFAULT_ALPHA, rng: Union[np.random.Generator, int] = 0,
                   n_permutations: int = DEFAULT_PERMUTATIONS, threads: Optional[int] = None) -> TwoSampleResult:
    """Rejection rate of the permutation MMD test over ``repeats`` resamples.

    Each repeat draws ``n`` fields without replacement from each set, tests
    at level ``alpha`` and records the p-value. When ``gen`` and ``real`` are
    the same object, each repeat splits one draw of ``2n`` fields into two
    disjoint halves (null calibration).

    Args:
        gen: Generated fields.
        real: Reference fields on the same grid.
        repeats: Number of resamples.
        n: Fields per side in each resample.
        alpha: Test level.
        rng: Generator or integer base seed; repeat ``r`` uses the stream
            derived from (base seed, ``mmd.repeat{r}``).
        n_permutations: Permutations for the null threshold.
        threads: Worker threads for the repeats (default: one per CPU).

    Raises:
        InsufficientSamplesError: If a set holds fewer than the fields a repeat needs.
    """
    if gen.grid.size != real.grid.size:
        raise InvalidParameterError("Field sets have different sizes", f"{gen.grid.size} vs {real.grid.size}")
    if repeats < 1 or not 0.0 < alpha < 1.0:
        raise InvalidParameterError("Invalid test settings", f"repeats={repeats}, alpha={alpha}")
    same = gen is real
    needed = 2 * n if same else n
    if n < 2 or needed > min(len(gen), len(real)):
        raise InsufficientSamplesError(
            "Not enough fields for the requested sample size",
            f"n={n} needs {needed}, have {len(gen)} generated and {len(real)} reference",
        )
    base = _base_seed(rng)

    def one_repeat(r: int) -> Tuple[float, float]:
        local = np.random.default_rng(derive_seed(base, f"mmd.repeat{r}"))
        if same:
            idx = local.choice(len(real), size=2 * n, replace=False)
            x, y = real.values[idx[:n]], real.values[idx[n:]]
        else:
            x = gen.values[local.choice(len(gen), size=n, replace=False)]
            y = real.values[local.choice(len(real), size=n, replace=False)]
        _, p_value, bandwidth = mmd_permutation_test(x, y, local, n_permutations)
        return p_value, bandwidth

    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(one_repeat, range(repeats)))
    p_values = [p for p, _ in results]
    power = float(np.mean([p <= alpha for p in p_values]))
    bandwidth = float(np.median([b for _, b in results]))
    logger.info(f"MMD test power {power:.3f} over {repeats} repeats (n={n}, alpha={alpha}, bandwidth={bandwidth:.4g})")
    return TwoSampleResult(power=power, n_repeats=repeats, n_per_sample=n, alpha=alpha,
                           bandwidth=bandwidth, p_values=p_values)


@dataclass
class GaussianPosterior:
    """Mean and covariance of a Gaussian process at a set of query points."""
    points: np.ndarray
    mean: np.ndarray
    cov: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def to_dict(self) -> dict:
        return {'points': self.points.tolist(), 'mean': self.mean.tolist(), 'std': self.std.tolist()}


def gaussian_condition(prior_mean: np.ndarray, prior_cov: np.ndarray, obs_idx: np.ndarray, y: np.ndarray,
                       noise_var: float, query_idx: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Condition N(prior_mean, prior_cov) on noisy observations of entries ``obs_idx``.

    Raises:
        NumericalError: If the observation Gram matrix stays singular after jitter.
    """
    obs_idx, query_idx = np.asarray(obs_idx, dtype=np.int64), np.asarray(query_idx, dtype=np.int64)
    mean_q = prior_mean[query_idx]
    cov_qq = prior_cov[np.ix_(query_idx, query_idx)]
    if obs_idx.size == 0:
        return mean_q.copy(), cov_qq.copy()
    gram = prior_cov[np.ix_(obs_idx, obs_idx)] + noise_var * np.eye(obs_idx.size)
    L = jittered_cholesky(gram)
    cross = prior_cov[np.ix_(obs_idx, query_idx)]
    mean = mean_q + cross.T @ cho_solve((L, True), y - prior_mean[obs_idx])
    cov = cov_qq - cross.T @ cho_solve((L, True), cross)
    return mean, 0.5 * (cov + cov.T)


def gp_posterior_oracle(sample: GPSample, kernel: Optional[KernelKind] = None,
                        hyper: Optional[Dict[str, float]] = None, noise_var: float = GP_NOISE_VAR,
                        query: Optional[np.ndarray] = None) -> GaussianPosterior:
    """Closed-form posterior of the latent function given the context values.

    Args:
        sample: Regression task; the prior is zero-mean with the task's kernel.
        kernel: Kernel overriding the task's own.
        hyper: Hyper-parameters overriding the task's own.
        noise_var: Observation noise variance.
        query: Query coordinates (default: the task's target points).
    """
    kind = sample.kernel if kernel is None else KernelKind(kernel)
    hyper = sample.hyper if hyper is None else hyper
    x_obs = sample.observed_points
    x_q = sample.target_points if query is None else np.asarray(query, dtype=np.float64).reshape(-1)
    pts = np.concatenate([x_obs, x_q])
    cov = kernel_matrix(kind, pts, pts, hyper)
    n_obs = x_obs.size
    mean, post = gaussian_condition(np.zeros(pts.size), cov, np.arange(n_obs), sample.observed_y,
                                    noise_var, np.arange(n_obs, pts.size))
    return GaussianPosterior(points=x_q, mean=mean, cov=post)


def model_prior(p: OUBridgeParams, x0: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Grid mean and covariance of the uncontrolled terminal law mu_T.

    ``x0`` holds initial spectral coefficients (default zero).
    """
    basis = SpectralTransform(p.eigs).basis
    m = np.exp(-p.a * p.T)
    mean = basis.T @ (m * (np.zeros(p.K) if x0 is None else x0))
    var = p.sigma ** 2 * p.lam * integrated_decay(p.a, p.T)
    return mean, (basis.T * var) @ basis


def model_posterior(p: OUBridgeParams, sample: GPSample, noise_var: float = GP_NOISE_VAR,
                    x0: Optional[np.ndarray] = None) -> GaussianPosterior:
    """Exact posterior of the truncated spectral prior mu_T at the target points."""
    mean, cov = model_prior(p, x0)
    post_mean, post_cov = gaussian_condition(mean, cov, sample.observed_idx, sample.observed_y,
                                             noise_var, sample.target_idx)
    return GaussianPosterior(points=sample.target_points, mean=post_mean, cov=post_cov)


def matched_process(hyper: Dict[str, float], T: float = 1.0, a: float = 0.5) -> Tuple[float, float]:
    """(gamma, sigma) making mu_T from a zero start match the RBF kernel
    l1^2 exp(-d^2 / l2^2) when Q is the RBF Gram operator of width gamma."""
    return hyper['l2'] ** 2, float(hyper['l1'] / np.sqrt(integrated_decay(a, T)))


def posterior_errors(samples: FieldSet, sample: GPSample, oracle: GaussianPosterior) -> Dict[str, float]:
    """RMSE of the empirical posterior mean and the share of target points whose
    empirical std lies within 30% of the oracle std."""
    at_targets = samples.values[:, sample.target_idx]
    mean = at_targets.mean(axis=0)
    std = at_targets.std(axis=0, ddof=1)
    ratio = std / np.maximum(oracle.std, 1e-300)
    return {
        'mean_rmse': float(np.sqrt(np.mean((mean - oracle.mean) ** 2))),
        'std_within_30pct': float(np.mean(np.abs(ratio - 1.0) <= 0.3)),
        'n_samples': len(samples),
    }


def marginal_check(samples: np.ndarray, reference: Union[Sequence[CoordGaussian], Tuple[np.ndarray, np.ndarray]]
                   ) -> MarginalReport:
    """Per-mode z-scores of sample mean and variance plus KS statistics.

    Args:
        samples: (n, K) spectral coefficients.
        reference: One CoordGaussian per mode, or a (means, variances) pair.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    n, K = samples.shape
    if n < 2:
        raise InsufficientSamplesError("marginal_check needs at least two samples", f"n={n}")
    if isinstance(reference, tuple):
        mu, var = (np.broadcast_to(np.asarray(r, dtype=np.float64), (K,)) for r in reference)
    else:
        mu = np.array([g.mean for g in reference])
        var = np.array([g.var for g in reference])
    if mu.size != K:
        raise InvalidParameterError("Reference does not match sample width", f"{mu.size} vs {K}")
    s_mean = samples.mean(axis=0)
    s_var = samples.var(axis=0, ddof=1)
    mean_z, var_z, var_ratio = np.zeros(K), np.zeros(K), np.ones(K)
    ks_stat, ks_pvalue = np.zeros(K), np.ones(K)
    for k in range(K):
        if var[k] > 0:
            mean_z[k] = (s_mean[k] - mu[k]) / np.sqrt(var[k] / n)
            var_z[k] = (s_var[k] - var[k]) / (var[k] * np.sqrt(2.0 / (n - 1)))
            var_ratio[k] = s_var[k] / var[k]
            result = kstest(samples[:, k], norm(loc=mu[k], scale=np.sqrt(var[k])).cdf)
            ks_stat[k], ks_pvalue[k] = result.statistic, result.pvalue
        else:
            # point mass
            exact = np.allclose(samples[:, k], mu[k], rtol=1e-10, atol=1e-12)
            mean_z[k] = var_z[k] = 0.0 if exact else np.inf
            ks_stat[k], ks_pvalue[k] = (0.0, 1.0) if exact else (1.0, 0.0)
    return MarginalReport(mean_z=mean_z, var_ratio=var_ratio, var_z=var_z,
                          ks_stat=ks_stat, ks_pvalue=ks_pvalue, n_samples=n)


@dataclass
class GirsanovEstimate:
    """Per-path Girsanov quantities of a controlled trajectory against the
    uncontrolled process driven by the same noises."""
    log_weight: np.ndarray  # log dP^alpha/dP along each path
    running: np.ndarray     # 1/2 sum |alpha_k|^2 dt per path

    @property
    def kl(self) -> float:
        return float(np.mean(self.running))

    @property
    def kl_stderr(self) -> float:
        return float(np.std(self.running, ddof=1) / np.sqrt(self.running.size)) if self.running.size > 1 else 0.0

    @property
    def log_weight_mean(self) -> float:
        return float(np.mean(self.log_weight))

    @property
    def log_weight_stderr(self) -> float:
        n = self.log_weight.size
        return float(np.std(self.log_weight, ddof=1) / np.sqrt(n)) if n > 1 else 0.0


def girsanov_divergence(traj: Trajectory, p: OUBridgeParams) -> GirsanovEstimate:
    """KL(P^alpha | P) estimators from a recorded trajectory.

    The log weight is sum_i <alpha(i), dW(i)> + 1/2 |alpha(i)|^2 dt, where
    dW(i) is the Brownian increment the step's noise realizes; its mean
    under P^alpha and the mean running cost both estimate the divergence.
    """
    if traj.noises is None or traj.control_evals is None:
        raise InvalidParameterError("Trajectory lacks noises or control values")
    if not p.sigma > 0:
        raise InvalidParameterError("Girsanov weights need sigma > 0", f"sigma={p.sigma}")
    scheme = traj.scheme
    if scheme is None:
        raise InvalidParameterError("Unknown step scheme", "trajectory does not record its scheme")
    _, _, Nz = step_coefficients(p, scheme, p.T / traj.n_steps)
    dW = traj.noises * (Nz / p.noise_scale)
    stoch = np.einsum('ibk,ibk->b', traj.control_evals, dW)
    running = running_cost(traj)
    return GirsanovEstimate(log_weight=stoch + running, running=running)


def project_to_span(fields: FieldSet, eigs: EigenSystem) -> FieldSet:
    """Orthogonal projection of grid fields onto the retained modes."""
    if fields.grid != eigs.grid:
        raise InvalidParameterError("Fields are not on the eigen-system grid",
                                    f"{fields.grid.resolution} vs {eigs.grid.resolution}")
    transform = SpectralTransform(eigs)
    return FieldSet(grid=fields.grid, values=transform.synthesis(transform.analysis(fields.values)),
                    labels=fields.labels)


def write_report(report: dict, path: str) -> str:
    with open(path, 'w') as handle:
        json.dump(report, handle, indent=2)
    return path
