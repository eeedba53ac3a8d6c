import csv
import json
import os

import numpy as np
import pytest

from ctsmc import ExperimentConfig, Gamma, Weibull, generate_random_model, run_experiment, validate_model
from ctsmc.cli import main

MARGINAL_FILES = ("filtered.csv", "smoothed.csv", "hsmm_smoothed.csv", "adaptive_filtered.csv")


def _small(out, **kw):
    base = dict(horizon=2.0, step=2e-3, oracle_step=1e-3, viterbi_step=2e-2, seeds=(3,), out_dir=str(out))
    return ExperimentConfig(**{**base, **kw})


@pytest.fixture(scope="module")
def default_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("default")
    return run_experiment(ExperimentConfig(seeds=(0,), out_dir=str(out))), out


def test_default_run_artifacts(default_run):
    manifest, out = default_run
    assert manifest["n_failed"] == 0
    assert len(manifest["files"]) >= 7
    for f in manifest["files"]:
        assert os.path.getsize(out / f) > 0
    on_disk = json.loads((out / "manifest.json").read_text())
    assert set(on_disk["assumed_defaults"]) >= {"hyper_shape", "hyper_rate", "hyper_scale", "renewal"}


def test_default_gaps_small(default_run):
    manifest, out = default_run
    rec = manifest["records"][0]
    assert rec["gap_smoothed"] < 1e-2 and rec["gap_filtered"] < 1e-2
    with open(out / "comparison.csv") as fh:
        row = next(csv.DictReader(fh))
    assert float(row["gap_smoothed"]) == rec["gap_smoothed"]


def test_marginal_rows_sum_to_one(default_run):
    _, out = default_run
    for name in MARGINAL_FILES:
        data = np.loadtxt(out / "seed_0" / name, delimiter=",", skiprows=1)
        np.testing.assert_allclose(data[:, 1:].sum(axis=1), 1.0, atol=1e-6, err_msg=name)


def test_rerun_is_byte_identical(tmp_path):
    run_experiment(_small(tmp_path / "a"))
    run_experiment(_small(tmp_path / "b"))
    names = sorted(os.listdir(tmp_path / "a" / "seed_3")) + ["comparison.csv"]
    assert len(names) >= 9
    for name in names:
        sub = "" if name == "comparison.csv" else "seed_3"
        a = (tmp_path / "a" / sub / name).read_bytes()
        b = (tmp_path / "b" / sub / name).read_bytes()
        assert a == b, name


def test_failed_run_is_recorded(tmp_path):
    # the oracle lattice would exceed the memory budget
    m = run_experiment(_small(tmp_path, oracle_step=1e-9, seeds=(3, 4)))
    assert m["n_failed"] == 2
    assert all(r["status"] == "error" and "ResourceBudgetError" in r["error"] for r in m["runs"])


def test_random_models_valid_and_deterministic():
    cfg = ExperimentConfig()
    for seed in range(50):
        model = generate_random_model(cfg, seed)
        assert validate_model(model) == []
        assert np.all(np.diag(model.embedded.m) == 0)
        assert all(isinstance(w, (Gamma, Weibull)) for w in model.waiting)
    assert generate_random_model(cfg, 9) == generate_random_model(cfg, 9)


def test_embedded_rows_are_normalised_uniforms():
    cfg = ExperimentConfig()
    rows = np.concatenate([generate_random_model(cfg, s).embedded.m for s in range(3334)])[:10_000]
    off = rows[~np.eye(3, dtype=bool)[np.arange(rows.shape[0]) % 3]].reshape(-1, 2)
    mean, se = off.mean(axis=0), off.std(axis=0, ddof=1) / np.sqrt(off.shape[0])
    assert np.all(np.abs(mean - 0.5) < 3 * se)


@pytest.mark.parametrize("kw", [dict(n_states=1), dict(families=("lognormal",)), dict(horizon=-1),
                                dict(levels=(0.0, 1.0)), dict(renewal=(4.0,)), dict(boundary="x/y")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ExperimentConfig(**kw)


def test_config_json_roundtrip(tmp_path):
    cfg = _small(tmp_path)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.from_json(path) == cfg
    path.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ValueError):
        ExperimentConfig.from_json(path)


def test_cli_end_to_end(tmp_path, capsys):
    d = str(tmp_path)
    assert main(["simulate", "--seed", "5", "--horizon", "3", "--out", d]) == 0
    for f in ("model.json", "trajectory.csv", "observations.csv"):
        assert os.path.exists(os.path.join(d, f))
    io = ["--model", os.path.join(d, "model.json"), "--obs", os.path.join(d, "observations.csv"),
          "--horizon", "3", "--out", d]
    assert main(["infer", "--step", "2e-3"] + io) == 0
    assert main(["viterbi", "--step", "2e-2"] + io) == 0
    assert main(["baseline", "hsmm", "--step", "1e-3"] + io) == 0
    assert main(["baseline", "adaptive"] + io) == 0
    for f in ("filtered.csv", "backward.csv", "smoothed.csv", "currents.csv", "evidence.json",
              "map_path.csv", "chain_length.csv", "hsmm_smoothed.csv", "adaptive_grid.csv"):
        assert os.path.exists(os.path.join(d, f)), f
    ev = json.loads((tmp_path / "evidence.json").read_text())["log_evidence"]
    assert f"{ev:.10g}" in capsys.readouterr().out


def test_cli_experiment_and_errors(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(_small(tmp_path / "exp").to_dict()))
    assert main(["experiment", "--config", str(cfg)]) == 0
    assert (tmp_path / "exp" / "comparison.csv").exists()
    assert main(["infer", "--out", str(tmp_path)]) == 1
    assert "--model is required" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["infer", "--boundary"])
