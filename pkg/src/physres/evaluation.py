"""Evaluation protocols: unseen fault, readout ablation, shift sweep, dense baseline."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import spearmanr

from .baseline import DEFAULT_HIDDEN, init_dense_bnn, predict_dense, train_dense_bnn
from .features import FeatureMatrix, GlobalStats
from .pipeline import Model, PipelineConfig, derive_seed, fit_pipeline, stratified_split
from .readout import PredictiveResult, predict

logger = logging.getLogger(__name__)

DEFAULT_TEST_FRACTION = 0.3
DEFAULT_SHIFT_LEVELS = (0.0, 0.5, 1.0, 1.5, 2.0, 3.0)
SHIFT_GAMMA = 0.3
SHIFT_OFFSET = 0.5


class EvalError(ValueError):
    pass


@dataclass
class EvalReport:
    classes: tuple
    confusion: np.ndarray  # rows: true class, columns: predicted class
    mean_total: np.ndarray  # per class
    mean_aleatoric: np.ndarray
    mean_epistemic: np.ndarray
    trainable_parameters: int = 0
    wall_seconds: float = 0.0

    @property
    def counts(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    @property
    def per_class_accuracy(self) -> np.ndarray:
        counts = self.counts
        return np.divide(np.diag(self.confusion), counts, out=np.zeros(len(counts)), where=counts > 0)

    @property
    def accuracy(self) -> float:
        total = self.confusion.sum()
        return float(np.trace(self.confusion) / total) if total else 0.0

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "accuracy": self.accuracy,
            "per_class_accuracy": self.per_class_accuracy.tolist(),
            "confusion": self.confusion.tolist(),
            "mean_total_uncertainty": self.mean_total.tolist(),
            "mean_aleatoric": self.mean_aleatoric.tolist(),
            "mean_epistemic": self.mean_epistemic.tolist(),
            "trainable_parameters": self.trainable_parameters,
        }

    def rows(self) -> List[list]:
        out = []
        acc = self.per_class_accuracy
        for i, c in enumerate(self.classes):
            out.append(
                [c]
                + [int(v) for v in self.confusion[i]]
                + [acc[i], self.mean_total[i], self.mean_aleatoric[i], self.mean_epistemic[i]]
            )
        return out

    def header(self) -> List[str]:
        return (
            ["true_class"]
            + [f"pred_{c}" for c in self.classes]
            + ["accuracy", "mean_total", "mean_aleatoric", "mean_epistemic"]
        )


def build_report(
    classes: Sequence[int], y_true: np.ndarray, y_pred: np.ndarray, result: Optional[PredictiveResult] = None
) -> EvalReport:
    classes = tuple(int(c) for c in classes)
    index = {c: i for i, c in enumerate(classes)}
    K = len(classes)
    conf = np.zeros((K, K), dtype=int)
    for t, p in zip(y_true, y_pred):
        conf[index[int(t)], index[int(p)]] += 1
    if result is None:
        means = [np.zeros(K)] * 3
    else:
        y_true = np.asarray(y_true)
        means = [
            np.array([arr[y_true == c].mean() if np.any(y_true == c) else 0.0 for c in classes])
            for arr in (result.total, result.aleatoric, result.epistemic)
        ]
    return EvalReport(classes, conf, *means)


@dataclass(frozen=True)
class Split:
    train: FeatureMatrix
    test: FeatureMatrix
    held: Optional[FeatureMatrix]


def split_dataset(
    data: FeatureMatrix, held_out: Optional[int], seed: int, test_fraction: float = DEFAULT_TEST_FRACTION
) -> Split:
    """Remove the held-out class, then split the rest per class with a seeded shuffle."""
    labels = np.asarray(data.labels)
    held = None
    if held_out is not None:
        mask = labels == int(held_out)
        if not mask.any():
            raise EvalError(f"held-out class {held_out} is not in the dataset")
        held = data.subset(np.flatnonzero(mask))
        data = data.subset(np.flatnonzero(~mask))
        labels = labels[~mask]
    if len(np.unique(labels)) < 2:
        raise EvalError("need at least 2 seen classes")
    tr, te = stratified_split(labels, test_fraction, derive_seed(seed, "split"))
    return Split(data.subset(tr), data.subset(te), held)


def _timed_fit(train: FeatureMatrix, cfg: PipelineConfig, seed: int) -> Tuple[Model, float]:
    t0 = time.perf_counter()
    model = fit_pipeline(train, cfg, seed)
    return model, time.perf_counter() - t0


def evaluate_model(
    model: Model, test: FeatureMatrix, mc_samples: int = 100, seed: int = 0, workers: int = 1, posterior=None
) -> Tuple[EvalReport, PredictiveResult]:
    result = model.predict(test.X, mc_samples, seed, workers, posterior)
    pred = model.predicted_labels(result)
    report = build_report(model.classes, np.asarray(test.labels), pred, result)
    report.trainable_parameters = model.trainable_parameters
    return report, result


def _pred_seed(seed: int) -> int:
    return derive_seed(seed, "predict")


# --------------------------------------------------------------------------


@dataclass
class UnseenResult:
    held_out: int
    seen: EvalReport
    seen_result: PredictiveResult
    held_result: PredictiveResult
    held_predictions: np.ndarray
    model: Model

    @property
    def epistemic_ratio(self) -> float:
        return float(self.held_result.epistemic.mean() / self.seen_result.epistemic.mean())

    def summary(self) -> dict:
        return {
            "held_out": self.held_out,
            "num_classes": len(self.seen.classes),
            "seen": self.seen.to_dict(),
            "seen_mean_epistemic": float(self.seen_result.epistemic.mean()),
            "held_mean_epistemic": float(self.held_result.epistemic.mean()),
            "held_mean_total": float(self.held_result.total.mean()),
            "held_mean_aleatoric": float(self.held_result.aleatoric.mean()),
            "epistemic_ratio": self.epistemic_ratio,
            "held_predicted_counts": {
                str(c): int(np.sum(self.held_predictions == c)) for c in self.seen.classes
            },
        }


def unseen_fault_protocol(
    data: FeatureMatrix,
    held_out: int,
    cfg: PipelineConfig = PipelineConfig(),
    seed: int = 0,
    mc_samples: int = 100,
    workers: int = 1,
    split: Optional[Split] = None,
    model: Optional[Model] = None,
) -> UnseenResult:
    """Train without ``held_out``; evaluate on a seen-class test split and on every held-out row."""
    split = split or split_dataset(data, held_out, seed)
    if split.held is None or len(split.held.labels) == 0:
        raise EvalError(f"held-out class {held_out} is not in the dataset")
    wall = 0.0
    if model is None:
        model, wall = _timed_fit(split.train, cfg, seed)
    seen, seen_res = evaluate_model(model, split.test, mc_samples, _pred_seed(seed), workers)
    seen.wall_seconds = wall
    held_res = model.predict(split.held.X, mc_samples, _pred_seed(seed), workers)
    return UnseenResult(
        int(held_out), seen, seen_res, held_res, model.predicted_labels(held_res), model
    )


@dataclass
class AblationResult:
    untrained: EvalReport
    trained: EvalReport

    @property
    def accuracy_gain(self) -> float:
        return self.trained.accuracy - self.untrained.accuracy

    def mean_total(self, report: EvalReport) -> float:
        counts = report.counts
        return float(np.sum(report.mean_total * counts) / counts.sum())

    def summary(self) -> dict:
        return {
            "untrained": self.untrained.to_dict(),
            "trained": self.trained.to_dict(),
            "accuracy_gain": self.accuracy_gain,
            "untrained_mean_total": self.mean_total(self.untrained),
            "trained_mean_total": self.mean_total(self.trained),
        }


def readout_ablation(
    data: FeatureMatrix,
    cfg: PipelineConfig = PipelineConfig(),
    seed: int = 0,
    held_out: Optional[int] = None,
    mc_samples: int = 100,
    workers: int = 1,
    split: Optional[Split] = None,
    model: Optional[Model] = None,
) -> AblationResult:
    """Arm A predicts with the prior-initialized readout, arm B with the trained one.

    Both arms share the fitted reservoir, priors and prediction seed.
    """
    split = split or split_dataset(data, held_out, seed)
    wall = 0.0
    if model is None:
        model, wall = _timed_fit(split.train, cfg, seed)
    a, _ = evaluate_model(model, split.test, mc_samples, _pred_seed(seed), workers, model.initial_posterior)
    b, _ = evaluate_model(model, split.test, mc_samples, _pred_seed(seed), workers)
    b.wall_seconds = wall
    return AblationResult(a, b)


def shift_transform(X: np.ndarray, level: float, stats: GlobalStats, gamma: float = SHIFT_GAMMA) -> np.ndarray:
    """Mean offset by ``level * 0.5 * std`` plus spread inflation by ``1 + gamma * level``."""
    if level < 0:
        raise EvalError(f"shift level must be nonnegative, got {level}")
    if level == 0:
        return np.array(X, dtype=float, copy=True)
    return X + level * SHIFT_OFFSET * stats.std + (X - stats.mean) * (gamma * level)


@dataclass
class SweepResult:
    levels: tuple
    accuracy: np.ndarray
    mean_total: np.ndarray
    mean_aleatoric: np.ndarray
    mean_epistemic: np.ndarray

    @property
    def spearman(self) -> float:
        return float(spearmanr(self.levels, self.mean_total)[0])

    def accuracy_at(self, level: float) -> float:
        return float(self.accuracy[self.levels.index(level)])

    def header(self) -> List[str]:
        return ["level", "accuracy", "mean_total", "mean_aleatoric", "mean_epistemic"]

    def rows(self) -> List[list]:
        return [
            [lv, a, t, al, ep]
            for lv, a, t, al, ep in zip(
                self.levels, self.accuracy, self.mean_total, self.mean_aleatoric, self.mean_epistemic
            )
        ]

    def summary(self) -> dict:
        return {
            "levels": list(self.levels),
            "accuracy": self.accuracy.tolist(),
            "mean_total": self.mean_total.tolist(),
            "spearman_level_total": self.spearman,
        }


def shift_sweep(
    data: FeatureMatrix,
    levels: Sequence[float] = DEFAULT_SHIFT_LEVELS,
    cfg: PipelineConfig = PipelineConfig(),
    seed: int = 0,
    held_out: Optional[int] = None,
    mc_samples: int = 100,
    workers: int = 1,
    split: Optional[Split] = None,
    model: Optional[Model] = None,
) -> SweepResult:
    """One trained model; the test features are shifted per level before the reservoir."""
    levels = tuple(float(lv) for lv in levels)
    if any(lv < 0 for lv in levels):
        raise EvalError("shift levels must be nonnegative")
    if 0.0 not in levels:
        raise EvalError("shift levels must include 0")
    if len(levels) < 5:
        raise EvalError(f"need at least 5 shift levels, got {len(levels)}")
    split = split or split_dataset(data, held_out, seed)
    if model is None:
        model, _ = _timed_fit(split.train, cfg, seed)
    y = np.asarray(split.test.labels)
    acc, tot, alea, epi = [], [], [], []
    for lv in levels:
        X = shift_transform(split.test.X, lv, model.global_stats)
        res = model.predict(X, mc_samples, _pred_seed(seed), workers)
        acc.append(float(np.mean(model.predicted_labels(res) == y)))
        tot.append(float(res.total.mean()))
        alea.append(float(res.aleatoric.mean()))
        epi.append(float(res.epistemic.mean()))
    return SweepResult(levels, np.array(acc), np.array(tot), np.array(alea), np.array(epi))


@dataclass
class CompareResult:
    proposed_parameters: int
    baseline_parameters: int
    proposed_accuracy: float
    baseline_accuracy: float
    proposed_seconds: float
    baseline_seconds: float
    epochs: int

    @property
    def parameter_ratio(self) -> float:
        return self.proposed_parameters / self.baseline_parameters

    def summary(self) -> dict:
        """Deterministic fields only; wall times are reported by :meth:`timing`."""
        return {
            "epochs": self.epochs,
            "proposed_parameters": self.proposed_parameters,
            "baseline_parameters": self.baseline_parameters,
            "parameter_ratio": self.parameter_ratio,
            "proposed_accuracy": self.proposed_accuracy,
            "baseline_accuracy": self.baseline_accuracy,
        }

    def timing(self) -> dict:
        return {"proposed_seconds": self.proposed_seconds, "baseline_seconds": self.baseline_seconds}


def baseline_bnn_compare(
    data: FeatureMatrix,
    cfg: PipelineConfig = PipelineConfig(),
    seed: int = 0,
    held_out: Optional[int] = None,
    hidden: int = DEFAULT_HIDDEN,
    mc_samples: int = 100,
    split: Optional[Split] = None,
) -> CompareResult:
    """Train the reservoir model and the dense BNN on the same split and epochs."""
    split = split or split_dataset(data, held_out, seed)
    model, t_prop = _timed_fit(split.train, cfg, seed)
    report, _ = evaluate_model(model, split.test, mc_samples, _pred_seed(seed))

    t0 = time.perf_counter()
    stats = model.global_stats
    y = np.searchsorted(model.classes, split.train.labels)
    net = init_dense_bnn(split.train.X.shape[1], len(model.classes), hidden, derive_seed(seed, "baseline"))
    tc = replace(cfg.train, seed=derive_seed(seed, "baseline-train"))
    net, _ = train_dense_bnn(stats.standardize(split.train.X), y, net, tc)
    t_base = time.perf_counter() - t0

    probs = predict_dense(net, stats.standardize(split.test.X), mc_samples, _pred_seed(seed))
    base_acc = float(np.mean(np.asarray(model.classes)[probs.argmax(axis=1)] == split.test.labels))
    return CompareResult(
        model.trainable_parameters,
        net.trainable_parameters,
        report.accuracy,
        base_acc,
        t_prop,
        t_base,
        cfg.train.epochs,
    )


# --------------------------------------------------------------------------
# Output files


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_outputs(
    out_dir: Path,
    protocol: str,
    seed: int,
    header: Sequence[str],
    rows: Sequence[Sequence],
    summary: dict,
    config: dict,
    timing: Optional[dict] = None,
) -> Dict[str, Path]:
    """Write ``<protocol>_<seed>.csv`` and ``.json``; wall times go to a separate timing file."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{protocol}_{seed}"
    paths = {"csv": out_dir / f"{stem}.csv", "json": out_dir / f"{stem}.json"}
    with paths["csv"].open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# seed={seed} config={json.dumps(config, sort_keys=True)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    doc = {"protocol": protocol, "seed": seed, "config": config, "summary": summary}
    paths["json"].write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if timing is not None:
        paths["timing"] = out_dir / f"{stem}.timing.json"
        paths["timing"].write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths
