import json
from pathlib import Path

import pytest

from u5mr_apc.config import (
    ModelConfig,
    OptimizerConfig,
    load_model_config,
    read_json,
    workers_from_env,
)
from u5mr_apc.errors import ConfigError
from u5mr_apc.priors import PcPriorSpec
from u5mr_apc.synth import SynthConfig, load_synth_config


def test_defaults():
    config = load_model_config()
    assert config.variant == "APC"
    assert config.optimizer.max_evaluations == 300
    assert config.pc_priors["phi"] == PcPriorSpec(0.5, 2.0 / 3.0)
    assert config.schema.n_bands == 6


def test_round_trip_through_dict():
    config = ModelConfig(variant="AC", collapse="weighted", pc_priors={"tau_age": PcPriorSpec(2.0, 0.05)},
                         optimizer=OptimizerConfig(integration="ccd"))
    again = ModelConfig.from_dict(json.loads(json.dumps(config.to_dict())))
    assert again == config
    assert again.pc_priors["tau_period"] == PcPriorSpec(1.0, 0.01)


@pytest.mark.parametrize("data", [
    {"variant": "PC"},
    {"collapse": "mean"},
    {"age_midpoints": [0, 1]},
    {"pc_priors": {"tau_region": {"U": 1, "p": 0.01}}},
    {"pc_priors": {"tau_age": {"U": 1}}},
    {"pc_priors": {"tau_age": {"U": -1, "p": 0.01}}},
    {"optimizer": {"method": "BFGS"}},
    {"optimizer": {"tolerance": 1e-3}},
    {"fixed_effect_variance": 0},
    {"seed": 3},
])
def test_invalid_model_configs(data):
    with pytest.raises(ConfigError):
        ModelConfig.from_dict(data)


def test_read_json_errors(tmp_path):
    with pytest.raises(ConfigError):
        read_json(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{\"variant\": ")
    with pytest.raises(ConfigError):
        read_json(bad)
    listed = tmp_path / "list.json"
    listed.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        read_json(listed)
    good = tmp_path / "model.json"
    good.write_text(json.dumps({"variant": "AP", "optimizer": {"max_evaluations": 50}}))
    config = load_model_config(good)
    assert config.variant == "AP" and config.optimizer.max_evaluations == 50


def test_workers_from_env(monkeypatch):
    monkeypatch.delenv("U5MR_APC_WORKERS", raising=False)
    assert workers_from_env() == 1
    monkeypatch.setenv("U5MR_APC_WORKERS", "4")
    assert workers_from_env() == 4
    for raw in ("0", "many"):
        monkeypatch.setenv("U5MR_APC_WORKERS", raw)
        with pytest.raises(ConfigError):
            workers_from_env()


DATA = Path(__file__).resolve().parent.parent / "data"


def test_shipped_configs_load():
    assert load_model_config(DATA / "model_config.json") == ModelConfig()
    assert load_synth_config(DATA / "synthetic_kenya.json") == SynthConfig()
    assert load_synth_config(DATA / "synthetic_small.json").n_regions == 6
