import json

import numpy as np
import pytest

from udeuq import cli
from udeuq.cli import main
from udeuq.core import NEGLL_PENALTY
from udeuq.config import OUTPUT_ROOT_ENV, EnsembleBlock, RunConfig
from udeuq.errors import ConfigError
from udeuq.likelihood import NoiseModel
from udeuq.optimize import FitResult


def write_config(path, **overrides):
    cfg = {
        "scenario": "quadratic",
        "noise": {"kind": "gaussian", "value": 0.05},
        "method": "ensemble",
        "seed": 0,
        "ensemble": {"m": 2, "adam_epochs": 10, "qn_max_iters": 3},
        "output_dir": str(path.parent / "run"),
        "report": {"grid_points": 12, "noise_draws": 2, "svg": False},
    }
    cfg.update(overrides)
    path.write_text(json.dumps(cfg))
    return path


def test_config_round_trip(tmp_path):
    cfg = RunConfig.load(write_config(tmp_path / "c.json"))
    assert isinstance(cfg.params, EnsembleBlock) and cfg.params.m == 2
    assert cfg.params.net_init == "glorot_uniform"
    back = RunConfig.from_dict(json.loads(cfg.to_json()))
    assert back == cfg and back.digest() == cfg.digest()
    assert cfg.params.fit_config(5).seed == 5


@pytest.mark.parametrize(
    "overrides",
    [
        {"scenario": "lotka"},
        {"method": "smc"},
        {"noise": {"kind": "gaussian", "value": 0.2}},
        {"noise": {"kind": "negbin", "value": 2.2}},
        {"nuts": {}},
        {"ensemble": {"m": 2, "bogus": 1}},
        {"extra_key": 1},
        {"parallelism": 0},
        {"seed": -1},
    ],
)
def test_invalid_configs(tmp_path, overrides):
    with pytest.raises(ConfigError):
        RunConfig.load(write_config(tmp_path / "c.json", **overrides))


def test_custom_flag_admits_off_catalog_noise(tmp_path):
    cfg = RunConfig.load(write_config(tmp_path / "c.json", noise={"kind": "gaussian", "value": 0.2}, custom=True))
    assert cfg.noise == NoiseModel("gaussian", 0.2)


def test_output_root_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    cfg = RunConfig("seir_pulse", NoiseModel("negbin", 1.2), "vi", seed=3)
    assert cfg.output_path == tmp_path / "seir_pulse_negbin_1.2_seed3"
    assert RunConfig("quadratic", NoiseModel("gaussian", 0.01), output_dir="x").output_path == tmp_path / "x"


def test_missing_or_malformed_config_exits_2(tmp_path):
    assert main(["generate", "--config", str(tmp_path / "nope.json")]) == 2
    (tmp_path / "bad.json").write_text("{")
    assert main(["fit", "--config", str(tmp_path / "bad.json")]) == 2


def test_fit_before_generate_exits_3_and_names_the_fix(tmp_path, caplog):
    cfg = write_config(tmp_path / "c.json")
    assert main(["fit", "--config", str(cfg)]) == 3
    assert "udeuq generate" in caplog.text
    assert main(["report", "--config", str(cfg)]) == 3


def test_empty_ensemble_exits_4(tmp_path, monkeypatch):
    cfg = write_config(tmp_path / "c.json")
    assert main(["generate", "--config", str(cfg)]) == 0
    failed = FitResult(np.zeros(63), NEGLL_PENALTY, NEGLL_PENALTY, NEGLL_PENALTY, False, 0)
    monkeypatch.setattr(cli, "run_multistart", lambda *a, **k: [failed])
    assert main(["fit", "--config", str(cfg)]) == 4


def test_pipeline_layout(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    for cmd in ("generate", "fit", "report"):
        assert main(["--log-level", "WARNING", cmd, "--config", str(cfg)]) == 0
    run = tmp_path / "run"
    for rel in (
        "data/dataset.csv",
        "data/dataset.json",
        "fit/ensemble/members.jsonl",
        "fit/ensemble/ensemble.json",
        "fit/ensemble/waterfall.csv",
        "fit/ensemble/manifest.json",
        "report/ensemble/bands_states.csv",
        "report/ensemble/bands_observables.csv",
        "report/ensemble/parameters.csv",
        "report/ensemble/histograms.csv",
        "report/comparison.csv",
    ):
        assert (run / rel).is_file(), rel
    manifest = json.loads((run / "fit/ensemble/manifest.json").read_text())
    assert manifest["config_sha256"] == RunConfig.load(cfg).digest()
    assert {"numpy", "scipy", "numba", "python", "udeuq"} <= set(manifest["versions"])
    rows = (run / "report/comparison.csv").read_text().splitlines()
    assert rows[0] == "method,state,level,mean_width,reference_coverage" and rows[1].startswith("ensemble,x,0.99,")
