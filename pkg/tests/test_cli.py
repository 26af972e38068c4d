import json

import numpy as np
import pytest

from fsbridge.controller import cli, commands
from fsbridge.controller.selftest import CheckResult
from fsbridge.models import ControlParams, EigenSystem, EnergyFunctional, FieldSet

SMALL_RUN = [
    "--set", "process.resolution=16",
    "--set", "train.iters=2",
    "--set", "train.batch=4",
    "--set", "train.steps=4",
    "--set", "train.arch=small",
    "--set", "train.log_every=0",
]


@pytest.fixture
def out_dir(tmp_path):
    return str(tmp_path / "run")


def run(*argv):
    return cli.main(list(argv))


def test_basis_build_writes_eigs_and_resolved_config(out_dir):
    code = run("basis", "build", "--out-dir", out_dir, "--set", "process.basis_kind=cosine",
               "--set", "process.resolution=16", "--set", "process.modes=5")

    assert code == 0
    eigs = EigenSystem.load(f"{out_dir}/eigs.json")
    assert eigs.K == 5
    with open(f"{out_dir}/config.resolved.ini") as handle:
        resolved = handle.read()
    assert "basis_kind = cosine" in resolved
    assert "modes = 5" in resolved


def test_seed_flag_lands_in_resolved_config(out_dir):
    assert run("basis", "build", "--out-dir", out_dir, "--seed", "17", "--set", "process.resolution=16") == 0
    with open(f"{out_dir}/config.resolved.ini") as handle:
        assert "seed = 17" in handle.read()


def test_config_file(tmp_path, out_dir):
    path = tmp_path / "run.cfg"
    path.write_text("[process]\nbasis_kind = cosine\nresolution = 8,8\nbounds = 0,1\nmodes = 4\n")

    assert run("basis", "build", "--config", str(path), "--out-dir", out_dir) == 0
    assert EigenSystem.load(f"{out_dir}/eigs.json").grid.dims == 2


@pytest.mark.parametrize("argv", [
    ["basis", "build", "--set", "train.nope=1"],
    ["basis", "build", "--set", "process.sigma=-1"],
    ["basis", "build", "--config", "does-not-exist.cfg"],
    ["basis", "build", "--set", "process.resolution=8,8,8"],
    ["bm", "train", "--set", "process.sigma=0", "--set", "process.resolution=16"],
    ["bayes", "train", "--set", "data.dataset=quadratic", "--set", "process.resolution=16"],
    ["eval", "mmd", "--generated", "missing.csv", "--set", "process.resolution=16"],
])
def test_input_errors_exit_with_2(argv, out_dir):
    assert run(*argv, "--out-dir", out_dir) == 2


def test_bridge_sample_writes_paths(out_dir):
    code = run("bridge", "sample", "--out-dir", out_dir, "--set", "process.basis_kind=cosine",
               "--set", "process.resolution=16", "--set", "process.modes=6", "--set", "train.steps=5",
               "--set", "data.params=paths:3")

    assert code == 0
    with open(f"{out_dir}/bridge_coeffs.csv") as handle:
        header = handle.readline()
    assert header.strip() == "path,t,mode_index,coeff"
    with open(f"{out_dir}/bridge_grid.csv") as handle:
        assert len(handle.readlines()) > 1


def test_bm_train_sample_and_mmd(out_dir):
    common = SMALL_RUN + ["--out-dir", out_dir, "--set", "data.n_samples=20", "--set", "eval.n=5",
                          "--set", "eval.repeats=2", "--set", "eval.permutations=10"]

    assert run("bm", "train", *common) == 0
    params = ControlParams.load(f"{out_dir}/params.json")
    assert params.train_step == 2
    with open(f"{out_dir}/train_log.jsonl") as handle:
        assert len(handle.readlines()) == 2

    assert run("bm", "sample", *common) == 0
    eigs = EigenSystem.load(f"{out_dir}/eigs.json")
    samples = FieldSet.from_csv(f"{out_dir}/samples.csv", eigs.grid)
    assert len(samples) == 20

    assert run("eval", "mmd", "--generated", f"{out_dir}/samples.csv", "--null", *common) == 0
    with open(f"{out_dir}/mmd_report.json") as handle:
        report = json.load(handle)
    assert report['metric'] == 'mmd_test_power'
    assert 0.0 <= report['value'] <= 1.0
    assert report['config']['null'] is True


def test_bayes_train_sample_and_gp_eval(out_dir):
    common = SMALL_RUN + ["--out-dir", out_dir, "--set", "data.dataset=gp", "--set", "data.n_samples=6",
                          "--set", "data.params=kernel:rbf,n_context:4,n_target:4"]

    assert run("bayes", "train", *common) == 0
    energy = EnergyFunctional.load(f"{out_dir}/task.json")
    assert energy.observed_idx.size == 4
    assert energy.learnable_sigma
    assert 'log_sigma_obs' in ControlParams.load(f"{out_dir}/params.json").extras

    assert run("bayes", "sample", *common) == 0
    assert run("eval", "gp", "--samples", f"{out_dir}/samples.csv", *common) == 0
    with open(f"{out_dir}/gp_report.json") as handle:
        report = json.load(handle)
    assert np.isfinite(report['value'])
    assert set(report['config']) >= {'kernel_oracle', 'model_oracle'}


def test_selftest_passes(out_dir, capsys):
    assert run("selftest", "--out-dir", out_dir) == 0
    table = capsys.readouterr().out
    assert "FAIL" not in table
    assert table.count("PASS") == 7


def test_selftest_failure_exits_with_3(out_dir, monkeypatch):
    monkeypatch.setattr(commands, 'run_selftest', lambda seed: [CheckResult('broken', False, 'forced')])
    assert run("selftest", "--out-dir", out_dir) == 3


def test_imputation_preset_sets_kernel_width_and_noise(out_dir):
    common = SMALL_RUN + ["--out-dir", out_dir, "--set", "data.dataset=gp",
                          "--set", "data.params=preset:imputation,n_context:4,n_target:4"]

    assert run("bayes", "train", *common) == 0

    assert EigenSystem.load(f"{out_dir}/eigs.json").gamma == pytest.approx(0.02)
    with open(f"{out_dir}/config.resolved.ini") as handle:
        assert "gamma = 0.02" in handle.read()
    energy = EnergyFunctional.load(f"{out_dir}/task.json")
    assert not energy.learnable_sigma
    assert energy.sigma_obs == pytest.approx(np.sqrt(0.5))


def test_unknown_preset_exits_with_2(out_dir):
    assert run("bayes", "train", "--out-dir", out_dir, "--set", "data.dataset=gp",
               "--set", "data.params=preset:nope", "--set", "process.resolution=16") == 2
