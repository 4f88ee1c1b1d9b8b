import csv
import json

import numpy as np
import pytest

from physres.evaluation import (
    EvalError,
    baseline_bnn_compare,
    build_report,
    readout_ablation,
    shift_sweep,
    shift_transform,
    split_dataset,
    unseen_fault_protocol,
    write_outputs,
)
from physres.features import fit_global_stats
from physres.pipeline import PipelineConfig
from physres.readout import TrainConfig

CFG = PipelineConfig(use_shap=False, train=TrainConfig(epochs=15))


def test_build_report_confusion():
    r = build_report([1, 2, 3], np.array([1, 1, 2, 3, 3, 3]), np.array([1, 2, 2, 3, 3, 1]))
    assert r.confusion.tolist() == [[1, 1, 0], [0, 1, 0], [1, 0, 2]]
    assert r.counts.tolist() == [2, 1, 3]
    assert np.allclose(r.per_class_accuracy, [0.5, 1.0, 2 / 3])
    assert r.accuracy == pytest.approx(4 / 6)
    assert len(r.rows()) == 3 and len(r.header()) == len(r.rows()[0])


def test_split_dataset(small_dataset):
    s = split_dataset(small_dataset, 4, seed=0)
    assert set(s.held.labels) == {4} and len(s.held.labels) == 60
    assert set(s.train.labels) == set(s.test.labels) == {1, 2, 3}
    assert len(s.train.labels) + len(s.test.labels) == 180
    with pytest.raises(EvalError):
        split_dataset(small_dataset, 5, seed=0)
    assert split_dataset(small_dataset, None, seed=0).held is None


def test_unseen_protocol(small_dataset):
    r = unseen_fault_protocol(small_dataset, 4, CFG, seed=0, mc_samples=10)
    assert r.seen.classes == (1, 2, 3)
    assert r.seen.confusion.sum() == len(split_dataset(small_dataset, 4, 0).test.labels)
    assert np.all(r.seen.confusion.sum(axis=1) == r.seen.counts)
    assert len(r.held_result) == 60
    s = r.summary()
    assert s["epistemic_ratio"] == pytest.approx(r.epistemic_ratio)
    assert sum(s["held_predicted_counts"].values()) == 60


def test_ablation_arms_share_model(small_dataset):
    r = readout_ablation(small_dataset, CFG, seed=0, held_out=4, mc_samples=10)
    assert r.untrained.classes == r.trained.classes
    assert r.untrained.confusion.sum() == r.trained.confusion.sum()
    assert r.accuracy_gain == pytest.approx(r.trained.accuracy - r.untrained.accuracy)


def test_shift_transform_level_zero_is_exact_copy():
    X = np.random.default_rng(0).standard_normal((10, 35))
    stats = fit_global_stats(X)
    out = shift_transform(X, 0.0, stats)
    assert np.array_equal(out, X) and out is not X
    shifted = shift_transform(X, 2.0, stats)
    assert np.allclose(shifted.mean(axis=0), X.mean(axis=0) + 2.0 * 0.5 * stats.std)
    assert np.allclose(shifted.std(axis=0, ddof=1), stats.std * 1.6)
    with pytest.raises(EvalError):
        shift_transform(X, -1.0, stats)


def test_shift_sweep(small_dataset):
    r = shift_sweep(small_dataset, (0, 1, 2, 3, 4), CFG, seed=0, held_out=4, mc_samples=10)
    assert r.levels[0] == 0.0 and len(r.rows()) == 5
    assert -1.0 <= r.spearman <= 1.0
    for bad in [(1, 2, 3, 4, 5), (0, 1, 2), (0, 1, 2, 3, -1)]:
        with pytest.raises(EvalError):
            shift_sweep(small_dataset, bad, CFG, seed=0, held_out=4)


def test_baseline_compare(small_dataset):
    cfg = PipelineConfig(use_shap=False, train=TrainConfig(epochs=3))
    r = baseline_bnn_compare(small_dataset, cfg, seed=0, held_out=4, hidden=8, mc_samples=5)
    assert r.proposed_parameters == 2 * 3 * 13
    assert r.baseline_parameters == 2 * (8 * 36 + 3 * 9)
    assert r.epochs == 3
    assert "proposed_seconds" not in r.summary() and "proposed_seconds" in r.timing()


def test_write_outputs(tmp_path):
    paths = write_outputs(tmp_path / "o", "demo", 7, ["a", "b"], [[1, 0.5]], {"x": 1}, {"c": 2}, {"t": 0.1})
    lines = paths["csv"].read_text().splitlines()
    assert lines[0].startswith("# seed=7 config=")
    assert list(csv.reader(lines[1:])) == [["a", "b"], ["1", "0.5"]]
    doc = json.loads(paths["json"].read_text())
    assert doc["seed"] == 7 and doc["summary"] == {"x": 1}
    assert json.loads(paths["timing"].read_text()) == {"t": 0.1}
