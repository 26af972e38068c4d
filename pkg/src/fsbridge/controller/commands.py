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

"""Command implementations behind the CLI.

Every command receives the resolved ``RunConfig`` and an output directory,
writes its artifacts plus ``config.resolved.ini`` there and returns the
process exit code.
"""
import json
import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from fsbridge.bayesian_learning import PosteriorPreset, bayes_train, posterior_preset, posterior_sample
from fsbridge.bridge_matching import bm_sample, bm_train
from fsbridge.config import RESOLVED_CONFIG_NAME, RunConfig
from fsbridge.controller.selftest import format_table, run_selftest
from fsbridge.datasets import (density_coupling, density_pair_2d, gaussian_reference, quadratic_coupling,
                               quadratic_curve, quadratic_dataset, sample_gp_task)
from fsbridge.errors import ConfigError, InvalidParameterError
from fsbridge.evaluation import (gp_posterior_oracle, model_posterior, mmd_test_power, posterior_errors,
                                project_to_span, write_report)
from fsbridge.models.control_params import ControlParams
from fsbridge.models.eigen_system import BasisKind, EigenSystem
from fsbridge.models.fields import FieldSet, GridField, GridSpec
from fsbridge.models.process import OUBridgeParams
from fsbridge.models.tasks import EnergyFunctional, GPSample, GPTask, KernelKind
from fsbridge.models.training import Coupling
from fsbridge.ou_bridge import integrated_decay, sample_bridge_path
from fsbridge.rng import RNGStreams
from fsbridge.spectral_basis import SpectralTransform, build_cosine_basis, build_kernel_basis_1d, to_spectral

logger = logging.getLogger(__name__)

EIGS_NAME = "eigs.json"
PARAMS_NAME = "params.json"
TRAIN_LOG_NAME = "train_log.jsonl"
SAMPLES_NAME = "samples.csv"
TASK_NAME = "task.json"


@dataclass
class RunContext:
    config: RunConfig
    out_dir: str
    threads: Optional[int] = None

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def streams(self) -> RNGStreams:
        return RNGStreams(self.config.seed)

    def finish(self) -> int:
        self.config.write(self.path(RESOLVED_CONFIG_NAME))
        return 0


def _data_preset(config: RunConfig) -> Optional[PosteriorPreset]:
    name = config.data_param('preset', None, str)
    if name is None:
        return None
    try:
        return posterior_preset(name)
    except InvalidParameterError as exc:
        raise ConfigError("Invalid data preset", exc.details)


def apply_data_preset(config: RunConfig) -> RunConfig:
    """Apply ``data.params = preset:<name>``.

    The preset sets ``process.gamma``; its observation noise, when it has
    one, becomes the default ``sigma_obs`` of the GP energy.
    """
    preset = _data_preset(config)
    if preset is not None:
        config.set('process', 'gamma', repr(preset.gamma))
        logger.info(f"Applied data preset: gamma={preset.gamma}, sigma_obs={preset.sigma_obs}")
    return config


def build_grid(config: RunConfig) -> GridSpec:
    resolution = config.process['resolution']
    bounds = config.process['bounds']
    dims = len(resolution)
    if len(bounds) == 2:
        bounds = bounds * dims
    if dims not in (1, 2) or len(bounds) != 2 * dims:
        raise ConfigError("Invalid grid", f"resolution={resolution}, bounds={bounds}")
    try:
        return GridSpec(dims=dims, resolution=resolution,
                        bounds=tuple((bounds[2 * d], bounds[2 * d + 1]) for d in range(dims)))
    except InvalidParameterError as exc:
        raise ConfigError("Invalid grid", exc.details or exc.error)


def build_eigen_system(config: RunConfig) -> EigenSystem:
    grid = build_grid(config)
    proc = config.process
    modes = int(proc['modes'])
    try:
        if proc['basis_kind'] == 'cosine':
            return build_cosine_basis(grid, modes or min(grid.resolution), proc['decay_floor'])
        return build_kernel_basis_1d(grid, proc['gamma'], proc['jitter'], max_modes=modes or None)
    except InvalidParameterError as exc:
        raise ConfigError("Cannot build eigen-system", f"{exc.error}: {exc.details}")


def build_process(config: RunConfig, eigs: Optional[EigenSystem] = None) -> OUBridgeParams:
    eigs = eigs or build_eigen_system(config)
    return OUBridgeParams(eigs=eigs, sigma=config.process['sigma'], T=config.process['T'])


def _load_eigs_or_build(ctx: RunContext) -> EigenSystem:
    path = ctx.path(EIGS_NAME)
    if os.path.exists(path):
        eigs = EigenSystem.load(path)
        logger.info(f"Loaded eigen-system from {path} (K={eigs.K})")
        return eigs
    return build_eigen_system(ctx.config)


def _require_dataset(config: RunConfig, *allowed: str) -> str:
    dataset = config.data['dataset']
    if dataset not in allowed:
        raise ConfigError("Dataset not supported by this command", f"data.dataset={dataset}; use {', '.join(allowed)}")
    return dataset


def _density_fields(config: RunConfig, grid: GridSpec):
    if grid.dims != 2 or grid.resolution[0] != grid.resolution[1]:
        raise ConfigError("density2d needs a square 2-D grid", f"resolution={grid.resolution}")
    return density_pair_2d(grid.resolution[0], grid.bounds[0])


def basis_build(ctx: RunContext) -> int:
    eigs = build_eigen_system(ctx.config)
    eigs.save(ctx.path(EIGS_NAME))
    logger.info(f"Eigen-system {eigs.kind}: K={eigs.K}, trace={eigs.trace:.6g}, "
                f"orthonormality error {eigs.gram_error():.2e}")
    return ctx.finish()


def _endpoints(config: RunConfig, grid: GridSpec):
    dataset = _require_dataset(config, 'quadratic', 'density2d')
    if dataset == 'density2d':
        return _density_fields(config, grid)
    axis = grid.axes()[0]
    x0 = GridField(grid=grid, values=quadratic_curve(config.data_param('a0', -1.0), axis))
    xT = GridField(grid=grid, values=quadratic_curve(config.data_param('aT', 1.0), axis))
    return x0, xT


def bridge_sample(ctx: RunContext) -> int:
    """Exact bridge paths between Dirac endpoints taken from the dataset."""
    config = ctx.config
    p = build_process(config, _load_eigs_or_build(ctx))
    x0, xT = _endpoints(config, p.eigs.grid)
    n_paths = int(config.data_param('paths', 8, int))
    rng = ctx.streams().stream('bridge.sample')
    traj = sample_bridge_path(p, to_spectral(x0, p.eigs), to_spectral(xT, p.eigs),
                              config.scheme().times(p.T), rng, batch=n_paths)
    traj.to_csv(ctx.path("bridge_coeffs.csv"))
    transform = SpectralTransform(p.eigs)
    traj.to_csv(ctx.path("bridge_grid.csv"), synthesize=transform.synthesis)
    logger.info(f"Wrote {n_paths} bridge path(s) of {traj.n_steps} steps to {ctx.out_dir}")
    return ctx.finish()


def _coupling(config: RunConfig, p: OUBridgeParams) -> Coupling:
    dataset = _require_dataset(config, 'quadratic', 'density2d')
    if dataset == 'density2d':
        _density_fields(config, p.eigs.grid)
        return density_coupling(p.eigs.grid.resolution[0], p.eigs.grid.bounds[0])
    return quadratic_coupling(p.eigs, noise=config.data_param('noise', 0.05),
                              reference_scale=config.data_param('reference_scale', 1.0))


def bm_train_command(ctx: RunContext) -> int:
    config = ctx.config
    p = build_process(config, _load_eigs_or_build(ctx))
    checkpoints = ctx.path("checkpoints")
    os.makedirs(checkpoints, exist_ok=True)
    params, history = bm_train(config.bm_config(), _coupling(config, p), p, arch=config.arch(p.eigs.grid.dims),
                               checkpoint_dir=checkpoints, log_path=ctx.path(TRAIN_LOG_NAME))
    params.save(ctx.path(PARAMS_NAME))
    p.eigs.save(ctx.path(EIGS_NAME))
    logger.info(f"Bridge Matching finished: final loss {history[-1]['loss']:.6g}")
    return ctx.finish()


def _target_grid(grid: GridSpec, resolution: Optional[int]) -> GridSpec:
    if not resolution:
        return grid
    return grid.with_resolution((resolution,) * grid.dims)


def _initial_fields(config: RunConfig, p: OUBridgeParams, n: int, rng: np.random.Generator) -> FieldSet:
    dataset = _require_dataset(config, 'quadratic', 'density2d')
    if dataset == 'density2d':
        p0, _ = _density_fields(config, p.eigs.grid)
        return FieldSet(grid=p0.grid, values=np.tile(p0.values, (n, 1)))
    return gaussian_reference(p.eigs, n, rng, config.data_param('reference_scale', 1.0))


def bm_sample_command(ctx: RunContext, checkpoint: Optional[str] = None, resolution: Optional[int] = None) -> int:
    config = ctx.config
    params = ControlParams.load(checkpoint or ctx.path(PARAMS_NAME))
    p = build_process(config, _load_eigs_or_build(ctx))
    n = int(config.data['n_samples'])
    streams = ctx.streams()
    x0 = _initial_fields(config, p, n, streams.stream('sample.init'))
    grid = _target_grid(p.eigs.grid, resolution)
    samples = bm_sample(params, p, x0, config.scheme(), config.seed, target_grid=grid)
    samples.to_csv(ctx.path(SAMPLES_NAME))
    logger.info(f"Wrote {len(samples)} samples on grid {grid.resolution}")
    return ctx.finish()


def _energy(ctx: RunContext, grid: GridSpec) -> EnergyFunctional:
    config = ctx.config
    if config.data['task']:
        return EnergyFunctional.load(config.data['task'])
    _require_dataset(config, 'gp')
    sample = _gp_sample(ctx, grid)
    preset = _data_preset(config)
    sigma = config.data_param('sigma_obs', (preset.sigma_obs if preset else None) or 0.0)
    energy = EnergyFunctional.from_sample(sample, sigma_obs=sigma or 0.1, use_targets=False,
                                          learnable_sigma=not sigma)
    energy.save(ctx.path(TASK_NAME))
    return energy


def _gp_sample(ctx: RunContext, grid: GridSpec) -> GPSample:
    config = ctx.config
    try:
        task = GPTask(kernel=KernelKind(config.data_param('kernel', 'rbf', str)), grid=grid,
                      max_points=min(50, grid.size), n_context_range=(3, min(37, grid.size - 3)))
    except (InvalidParameterError, ValueError) as exc:
        raise ConfigError("Invalid GP task", str(exc))
    hyper = {k: config.data_param(k, None) for k in ('l1', 'l2', 'period')}
    hyper = {k: v for k, v in hyper.items() if v is not None}
    context = config.data_param('n_context', None, int)
    targets = config.data_param('n_target', None, int)
    rng = ctx.streams().stream('data.task')
    required = {'l1', 'l2'} | ({'period'} if task.kernel == KernelKind.PERIODIC else set())
    return sample_gp_task(task, rng, hyper=hyper if required <= set(hyper) else None,
                          n_context=context, n_target=targets)


def bayes_train_command(ctx: RunContext) -> int:
    config = ctx.config
    p = build_process(config, _load_eigs_or_build(ctx))
    energy = _energy(ctx, p.eigs.grid)
    checkpoints = ctx.path("checkpoints")
    os.makedirs(checkpoints, exist_ok=True)
    params, _, history = bayes_train(config.bayes_config(), energy, p, arch=config.arch(p.eigs.grid.dims),
                                     checkpoint_dir=checkpoints, log_path=ctx.path(TRAIN_LOG_NAME))
    params.save(ctx.path(PARAMS_NAME))
    p.eigs.save(ctx.path(EIGS_NAME))
    logger.info(f"Posterior training finished: final loss {history[-1]['loss']:.6g}")
    return ctx.finish()


def bayes_sample_command(ctx: RunContext, checkpoint: Optional[str] = None, resolution: Optional[int] = None) -> int:
    config = ctx.config
    params = ControlParams.load(checkpoint or ctx.path(PARAMS_NAME))
    p = build_process(config, _load_eigs_or_build(ctx))
    grid = _target_grid(p.eigs.grid, resolution)
    if grid != p.eigs.grid and p.eigs.kind != BasisKind.ANALYTIC_COSINE:
        raise ConfigError("Kernel eigen-systems sample on their own grid only", f"requested {grid.resolution}")
    samples = posterior_sample(params, None, p, config.scheme(), int(config.data['n_samples']),
                               config.seed, target_grid=grid)
    samples.to_csv(ctx.path(SAMPLES_NAME))
    logger.info(f"Wrote {len(samples)} posterior samples")
    return ctx.finish()


def _stream_seed(streams: RNGStreams, name: str) -> int:
    return int(streams.stream(name).integers(2 ** 62))


def eval_mmd(ctx: RunContext, generated: str, reference: Optional[str] = None, project: bool = False,
             null: bool = False) -> int:
    """Test power of generated samples against held-out (or given) reference fields."""
    config = ctx.config
    eigs = _load_eigs_or_build(ctx)
    gen = FieldSet.from_csv(generated, eigs.grid)
    streams = ctx.streams()
    if reference:
        real = FieldSet.from_csv(reference, eigs.grid)
    else:
        _require_dataset(config, 'quadratic')
        real = quadratic_dataset(int(config.data['n_samples']), streams.stream('data.heldout'), eigs.grid,
                                 noise=config.data_param('noise', 0.05))
    if project:
        real = project_to_span(real, eigs)
    ev = config.eval
    result = mmd_test_power(real if null else gen, real, repeats=ev['repeats'], n=ev['n'], alpha=ev['alpha'],
                            rng=_stream_seed(streams, 'eval.mmd'), n_permutations=ev['permutations'],
                            threads=ctx.threads)
    write_report(result.to_report({'generated': generated, 'null': null, 'projected': project}),
                 ctx.path("mmd_report.json"))
    print(f"MMD test power: {100 * result.power:.1f}% +- {100 * result.stderr:.1f}%")
    return ctx.finish()


def eval_gp(ctx: RunContext, samples_path: str, task_path: Optional[str] = None) -> int:
    """Compare posterior samples with the closed-form GP posterior of the task."""
    config = ctx.config
    p = build_process(config, _load_eigs_or_build(ctx))
    energy = EnergyFunctional.load(task_path or config.data['task'] or ctx.path(TASK_NAME))
    samples = FieldSet.from_csv(samples_path, p.eigs.grid)
    kernel = KernelKind(config.data_param('kernel', 'rbf', str))
    # defaults: the kernel that mu_T realizes from a zero start
    hyper = {
        'l1': config.data_param('l1', float(p.sigma * np.sqrt(integrated_decay(0.5, p.T)))),
        'l2': config.data_param('l2', float(np.sqrt(config.process['gamma']))),
    }
    if kernel == KernelKind.PERIODIC:
        hyper['period'] = config.data_param('period', 0.5)
    sample = GPSample(grid=energy.grid, kernel=kernel, hyper=hyper, observed_idx=energy.observed_idx,
                      observed_y=energy.observed_y, target_idx=energy.target_idx,
                      target_y=np.zeros(energy.target_idx.size) if energy.target_y is None else energy.target_y)
    noise_var = energy.sigma_obs ** 2
    oracle = gp_posterior_oracle(sample, noise_var=noise_var)
    model = model_posterior(p, sample, noise_var=noise_var)
    report = {
        'metric': 'gp_posterior_rmse',
        'value': posterior_errors(samples, sample, oracle)['mean_rmse'],
        'stderr': None,
        'config': {
            'kernel_oracle': posterior_errors(samples, sample, oracle),
            'model_oracle': posterior_errors(samples, sample, model),
            'hyper': hyper,
            'noise_var': noise_var,
        },
    }
    write_report(report, ctx.path("gp_report.json"))
    print(json.dumps(report['config']['kernel_oracle']))
    return ctx.finish()


def selftest(ctx: RunContext) -> int:
    results = run_selftest(ctx.config.seed)
    print(format_table(results))
    ok = all(r.passed for r in results)
    ctx.finish()
    return 0 if ok else 3
