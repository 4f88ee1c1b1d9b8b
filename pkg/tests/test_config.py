import json

import pytest

from physres.config import ConfigError, RunConfig


def test_defaults_valid():
    cfg = RunConfig().validate()
    assert cfg.reservoir.spectral_radius == 0.9 and cfg.train.epochs == 200
    assert cfg.eval.held_out == 5


def test_round_trip(tmp_path):
    cfg = RunConfig(seed=4)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert RunConfig.load(path) == cfg


def test_partial_document():
    cfg = RunConfig.from_dict({"seed": 2, "reservoir": {"leak_alpha": 0.5}, "eval": {"held_out": None}})
    assert cfg.seed == 2 and cfg.reservoir.leak_alpha == 0.5 and cfg.eval.held_out is None
    assert cfg.reservoir.spectral_radius == 0.9


@pytest.mark.parametrize(
    "doc",
    [
        {"sed": 1},
        {"reservoir": {"radius": 0.5}},
        {"seed": -1},
        {"seed": "1"},
        {"train": {"epochs": 1.5}},
        {"reservoir": {"spectral_radius": 1.0}},
        {"features": {"density_kind": "spline"}},
        {"eval": {"held_out": 9}},
        {"dataset": {"classes": [1]}},
        {"train": {"learning_rate": None}},
        {"explain": {"use_shap": 1}},
    ],
)
def test_invalid_documents(doc):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(doc)


def test_bad_file(tmp_path):
    (tmp_path / "c.json").write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        RunConfig.load(tmp_path / "c.json")
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "none.json")


def test_pipeline_config_mapping():
    cfg = RunConfig.from_dict({"features": {"tau": 0.2}, "reservoir": {"t_drive": 3}, "explain": {"use_shap": False}})
    p = cfg.pipeline_config()
    assert p.tau == 0.2 and p.t_drive == 3 and not p.use_shap
