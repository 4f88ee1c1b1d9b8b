"""End-to-end model: standardize -> moment priors -> reservoir -> BBB readout."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .explain import ShapleyReport, rank_channels
from .features import (
    FEATURE_NAMES,
    FeatureMatrix,
    GlobalStats,
    channel_groups,
    fit_global_stats,
)
from .priors import DEFAULT_TAU, WeightPrior, build_prior, match_moments, separation_scores
from .readout import (
    PredictiveResult,
    ReadoutPrior,
    TrainConfig,
    VariationalPosterior,
    init_readout_from_priors,
    log_softmax,
    predict,
    train_bbb,
    with_bias,
)
from .reservoir import (
    DEFAULT_NODES_PER_CLASS,
    DEFAULT_T_DRIVE,
    ReservoirConfig,
    ReservoirWeights,
    collect_states,
    init_reservoir,
    size_reservoir,
)
from .signals import CHANNELS

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    tau: float = DEFAULT_TAU
    density_kind: str = "histogram"
    raw_feature_priors: bool = False
    nodes_per_class: int = DEFAULT_NODES_PER_CLASS
    leak_alpha: float = 0.8
    spectral_radius: float = 0.9
    input_scaling: float = 1.0
    reservoir_density: float = 0.1
    t_drive: int = DEFAULT_T_DRIVE
    use_shap: bool = True
    shap_validation_fraction: float = 0.25
    train: TrainConfig = field(default_factory=TrainConfig)


def derive_seed(seed: int, stream: str) -> int:
    """Independent 32-bit seed for a named sub-stream of ``seed``."""
    key = [int(seed)] + [ord(c) for c in stream]
    return int(np.random.SeedSequence(key).generate_state(1)[0])


def stratified_split(labels: Sequence[int], test_fraction: float, seed: int):
    """Per-class seeded split; returns sorted (train_idx, test_idx)."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for k in np.unique(labels):
        idx = np.flatnonzero(labels == k)
        idx = idx[rng.permutation(len(idx))]
        n_test = int(round(test_fraction * len(idx)))
        test.extend(idx[:n_test])
        train.extend(idx[n_test:])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(test, dtype=int))


@dataclass
class Model:
    classes: tuple
    global_stats: GlobalStats
    prior: WeightPrior
    reservoir_config: ReservoirConfig
    reservoir: ReservoirWeights
    readout_prior: ReadoutPrior
    initial_posterior: VariationalPosterior
    posterior: VariationalPosterior
    loss_trace: list
    t_drive: int = DEFAULT_T_DRIVE
    shapley: Optional[ShapleyReport] = None
    feature_names: tuple = FEATURE_NAMES
    train_seconds: float = 0.0

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def trained(self) -> bool:
        return self.posterior is not None

    @property
    def feature_groups(self) -> np.ndarray:
        return channel_groups(len(self.feature_names))

    @property
    def group_names(self) -> tuple:
        return CHANNELS

    @property
    def trainable_parameters(self) -> int:
        return 2 * self.posterior.mu.size

    def class_indices(self, labels) -> np.ndarray:
        lookup = {c: i for i, c in enumerate(self.classes)}
        try:
            return np.array([lookup[int(y)] for y in labels], dtype=int)
        except KeyError as e:
            raise ValueError(f"label {e.args[0]} is not a trained class {self.classes}") from None

    def states(self, X: np.ndarray, standardized: bool = False) -> np.ndarray:
        Z = X if standardized else self.global_stats.standardize(X)
        return collect_states(self.reservoir, self.reservoir_config, Z, self.t_drive)

    def log_likelihood(self, X, y_idx, standardized: bool = False, posterior=None) -> np.ndarray:
        """Per-row log p(y|x) at the posterior mean weights."""
        q = posterior or self.posterior
        logp = log_softmax(with_bias(self.states(X, standardized)) @ q.mu.T)
        return logp[np.arange(len(y_idx)), y_idx]

    def predict(
        self,
        X: np.ndarray,
        mc_samples: int = 100,
        seed: int = 0,
        workers: int = 1,
        posterior: Optional[VariationalPosterior] = None,
    ) -> PredictiveResult:
        return predict(posterior or self.posterior, self.states(X), mc_samples, seed, workers)

    def predicted_labels(self, result: PredictiveResult) -> np.ndarray:
        return np.asarray(self.classes)[np.argmax(result.probs, axis=1)]


def fit_model(
    train: FeatureMatrix,
    cfg: PipelineConfig = PipelineConfig(),
    seed: int = 0,
    ranks: Optional[Sequence[float]] = None,
    train_cfg: Optional[TrainConfig] = None,
) -> Model:
    """Fit priors, build the reservoir and train the readout on ``train`` (raw features)."""
    t0 = time.perf_counter()
    stats = fit_global_stats(train.X)
    Z = stats.standardize(train.X)
    classes = tuple(sorted(int(c) for c in np.unique(train.labels)))
    moments = match_moments(train.X if cfg.raw_feature_priors else Z, train.labels, classes)
    prior = build_prior(moments, cfg.tau)
    F = train.X.shape[1]
    rcfg = size_reservoir(
        len(classes),
        F,
        ranks,
        cfg.nodes_per_class,
        channel_groups(F),
        separation_scores(prior),
        leak_alpha=cfg.leak_alpha,
        spectral_radius=cfg.spectral_radius,
        input_scaling=cfg.input_scaling,
        density=cfg.reservoir_density,
        seed=derive_seed(seed, "reservoir"),
    )
    weights = init_reservoir(rcfg)
    S = collect_states(weights, rcfg, Z, cfg.t_drive)
    q0, p = init_readout_from_priors(prior, rcfg.node_to_feature, rcfg.num_nodes)
    tc = train_cfg or cfg.train
    tc = replace(tc, seed=derive_seed(seed, f"train{tc.seed}"))
    y = np.searchsorted(classes, train.labels)
    q, trace = train_bbb(S, y, q0, p, tc)
    model = Model(
        classes, stats, prior, rcfg, weights, p, q0, q, trace, cfg.t_drive,
        feature_names=tuple(train.names),
    )
    model.train_seconds = time.perf_counter() - t0
    return model


def fit_pipeline(
    train: FeatureMatrix,
    cfg: PipelineConfig = PipelineConfig(),
    seed: int = 0,
    train_cfg: Optional[TrainConfig] = None,
) -> Model:
    """Fit a model, optionally restructured by a Shapley channel ranking.

    With ``cfg.use_shap`` a pre-pass model with round-robin allocation is fit
    on part of ``train``, channels are ranked on the held-back part, and the
    final model is fit on all of ``train`` with the ranked allocation.
    """
    if not cfg.use_shap:
        return fit_model(train, cfg, seed, train_cfg=train_cfg)
    t0 = time.perf_counter()
    fit_idx, val_idx = stratified_split(train.labels, cfg.shap_validation_fraction, derive_seed(seed, "shap"))
    pre = fit_model(train.subset(fit_idx), cfg, seed, train_cfg=train_cfg)
    val = train.subset(val_idx)
    report = rank_channels(pre, val.X, val.labels)
    logger.info("channel ranking: %s", ", ".join(report.ranked_names()))
    model = fit_model(train, cfg, seed, ranks=report.values if np.any(report.values > 0) else None, train_cfg=train_cfg)
    model.shapley = report
    model.train_seconds = time.perf_counter() - t0
    return model
