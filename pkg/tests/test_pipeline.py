import json

import numpy as np
import pytest

from physres.artifact import ArtifactError, checksum, load_model, model_from_dict, save_model
from physres.baseline import DenseBNN, dense_loss_and_grad, init_dense_bnn, predict_dense, train_dense_bnn
from physres.dataset import DatasetConfig, make_dataset, recording_seed, synthesize_dataset
from physres.pipeline import PipelineConfig, derive_seed, fit_model, fit_pipeline, stratified_split
from physres.readout import ReadoutError, TrainConfig
from physres.signals import SynthConfig

FAST = TrainConfig(epochs=15)


def test_derive_seed_streams_differ():
    assert derive_seed(0, "a") == derive_seed(0, "a")
    assert len({derive_seed(0, "a"), derive_seed(0, "b"), derive_seed(1, "a")}) == 3


def test_stratified_split_per_class():
    labels = np.repeat([1, 2, 3], [10, 20, 30])
    tr, te = stratified_split(labels, 0.3, 5)
    assert len(set(tr) & set(te)) == 0 and len(tr) + len(te) == 60
    assert np.bincount(labels[te]).tolist()[1:] == [3, 6, 9]
    tr2, te2 = stratified_split(labels, 0.3, 5)
    assert np.array_equal(te, te2)


def test_dataset_counts_and_loads():
    cfg = DatasetConfig(classes=(1, 2), windows_per_class=30, synth=SynthConfig(duration_s=1.0))
    data = make_dataset(cfg, seed=0)
    assert data.X.shape == (60, 35)
    assert np.bincount(data.labels).tolist()[1:] == [30, 30]
    assert set(np.round(data.loads, 3)) == {0.3, 0.7}
    assert len(synthesize_dataset(cfg, 0)) == 2 * 2 * cfg.recordings_per_condition()
    assert recording_seed(0, 1, 0, 0) != recording_seed(0, 1, 0, 1)


def test_fit_model_shapes(small_dataset):
    m = fit_model(small_dataset, PipelineConfig(use_shap=False), seed=0, train_cfg=FAST)
    assert m.classes == (1, 2, 3, 4)
    assert m.reservoir_config.num_nodes == 16
    assert m.posterior.mu.shape == (4, 17)
    assert m.trainable_parameters == 2 * 4 * 17
    assert len(m.loss_trace) == 15
    r = m.predict(small_dataset.X[:10], mc_samples=5)
    assert r.probs.shape == (10, 4)


def test_fit_pipeline_deterministic_with_shap(small_dataset):
    a = fit_pipeline(small_dataset, PipelineConfig(), seed=3, train_cfg=FAST)
    b = fit_pipeline(small_dataset, PipelineConfig(), seed=3, train_cfg=FAST)
    assert a.shapley is not None and len(a.shapley.values) == 7
    assert np.array_equal(a.posterior.mu, b.posterior.mu)
    assert a.reservoir_config == b.reservoir_config


def test_unknown_label_rejected(small_dataset):
    m = fit_model(small_dataset, PipelineConfig(use_shap=False), seed=0, train_cfg=TrainConfig(epochs=1))
    with pytest.raises(ValueError, match="label 5"):
        m.class_indices([1, 5])


def test_artifact_round_trip_exact(small_dataset, tmp_path):
    m = fit_pipeline(small_dataset, PipelineConfig(), seed=0, train_cfg=FAST)
    doc = save_model(m, tmp_path / "m.json", seed=0, config={"k": 1})
    back = load_model(tmp_path / "m.json")
    assert np.array_equal(back.posterior.mu, m.posterior.mu)
    assert np.array_equal(back.posterior.rho_raw, m.posterior.rho_raw)
    assert np.array_equal(back.reservoir.W, m.reservoir.W)
    assert np.array_equal(back.global_stats.mean, m.global_stats.mean)
    assert back.reservoir_config == m.reservoir_config
    assert np.array_equal(back.shapley.values, m.shapley.values)
    X = small_dataset.X[:7]
    assert np.array_equal(back.predict(X, 20, seed=4).probs, m.predict(X, 20, seed=4).probs)
    assert doc["checksum"] == checksum(json.loads((tmp_path / "m.json").read_text()))


def test_artifact_corruption_refused(small_dataset, tmp_path):
    m = fit_model(small_dataset, PipelineConfig(use_shap=False), seed=0, train_cfg=TrainConfig(epochs=1))
    doc = save_model(m, tmp_path / "m.json", seed=0)
    doc["posterior"]["mu"][0][0] += 1e-9
    with pytest.raises(ArtifactError, match="checksum"):
        model_from_dict(doc)
    doc2 = dict(doc, format_version=99)
    with pytest.raises(ArtifactError, match="format_version"):
        model_from_dict(doc2)
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ArtifactError):
        load_model(tmp_path / "bad.json")
    with pytest.raises(ArtifactError):
        load_model(tmp_path / "missing.json")


def test_baseline_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    net = init_dense_bnn(4, 3, num_hidden=5, seed=1)
    net = DenseBNN(4, 5, 3, net.mu, rng.normal(-2, 0.3, net.mu.size))
    X = rng.standard_normal((6, 4))
    y = rng.integers(0, 3, 6)
    eps = rng.standard_normal((2, net.mu.size))
    _, g_mu, g_rho = dense_loss_and_grad(net, X, y, net.mu, net.rho_raw, eps, 0.3)
    h = 1e-6
    for j in rng.choice(net.mu.size, 25, replace=False):
        d = np.zeros(net.mu.size)
        d[j] = h
        f = lambda mu, rho: dense_loss_and_grad(net, X, y, mu, rho, eps, 0.3)[0]
        num_mu = (f(net.mu + d, net.rho_raw) - f(net.mu - d, net.rho_raw)) / (2 * h)
        num_rho = (f(net.mu, net.rho_raw + d) - f(net.mu, net.rho_raw - d)) / (2 * h)
        assert g_mu[j] == pytest.approx(num_mu, rel=1e-4, abs=1e-8)
        assert g_rho[j] == pytest.approx(num_rho, rel=1e-4, abs=1e-8)


def test_baseline_parameter_count_and_training():
    net = init_dense_bnn(35, 4, 64, seed=0)
    assert net.trainable_parameters == 2 * (64 * 36 + 4 * 65)
    rng = np.random.default_rng(2)
    y = np.repeat([0, 1], 40)
    X = rng.standard_normal((80, 3)) * 0.3 + y[:, None] * 2.0 - 1.0
    trained, trace = train_dense_bnn(X, y, init_dense_bnn(3, 2, 8, seed=0), TrainConfig(epochs=60, learning_rate=0.05))
    assert trace[-1] < trace[0]
    probs = predict_dense(trained, X, 20, seed=0)
    assert np.allclose(probs.sum(axis=1), 1.0)
    assert np.mean(probs.argmax(axis=1) == y) >= 0.95
    with pytest.raises(ReadoutError):
        init_dense_bnn(3, 1)
