"""Exact Shapley attribution over channel groups."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Callable, Dict, FrozenSet, Optional, Sequence, Union

import numpy as np

from .reservoir import ReservoirConfig, size_reservoir

logger = logging.getLogger(__name__)

MAX_EXACT_PLAYERS = 12


class ShapleyError(ValueError):
    pass


@dataclass
class ShapleyReport:
    values: np.ndarray  # aggregate phi per group
    baseline_value: float
    full_value: float
    names: tuple = ()
    per_class: Optional[np.ndarray] = None  # [K, G]
    classes: tuple = ()

    @property
    def ranking(self) -> np.ndarray:
        """Group indices by descending value (stable for ties)."""
        return np.argsort(-self.values, kind="stable")

    def ranked_names(self) -> list:
        return [self.names[i] for i in self.ranking] if self.names else list(self.ranking)

    def efficiency_gap(self) -> float:
        return float(self.values.sum() - (self.full_value - self.baseline_value))

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "values": self.values.tolist(),
            "baseline_value": self.baseline_value,
            "full_value": self.full_value,
            "classes": list(self.classes),
            "per_class": None if self.per_class is None else self.per_class.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ShapleyReport":
        pc = d.get("per_class")
        return cls(
            np.array(d["values"], dtype=float),
            float(d["baseline_value"]),
            float(d["full_value"]),
            tuple(d.get("names", ())),
            None if pc is None else np.array(pc, dtype=float),
            tuple(d.get("classes", ())),
        )

    def to_csv(self, path: Union[str, Path], header_comment: Optional[str] = None) -> None:
        rank_of = np.empty(len(self.values), dtype=int)
        rank_of[self.ranking] = np.arange(1, len(self.values) + 1)
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["channel"] + [f"phi_class_{c}" for c in self.classes] + ["phi", "rank"])
            for g in range(len(self.values)):
                per = [] if self.per_class is None else [repr(float(v)) for v in self.per_class[:, g]]
                name = self.names[g] if self.names else str(g)
                w.writerow([name] + per + [repr(float(self.values[g])), int(rank_of[g])])


def _weights(G: int) -> np.ndarray:
    """Shapley weight |S|! (G-|S|-1)! / G! indexed by coalition size."""
    return np.array([math.factorial(s) * math.factorial(G - s - 1) / math.factorial(G) for s in range(G)])


def exact_shapley_table(table: np.ndarray, G: int) -> np.ndarray:
    """Shapley values from a value table indexed by coalition bitmask.

    ``table`` has shape ``[2**G]`` or ``[2**G, C]`` (several games sharing
    coalitions); bit ``i`` of the index marks player ``i`` as present.
    """
    table = np.asarray(table, dtype=float)
    if table.shape[0] != 2**G:
        raise ShapleyError(f"value table needs 2**{G} entries")
    w = _weights(G)
    sizes = np.array([bin(m).count("1") for m in range(2**G)])
    phi = np.zeros((G,) + table.shape[1:])
    for i in range(G):
        bit = 1 << i
        without = np.array([m for m in range(2**G) if not m & bit])
        # Fixed summation order keeps results reproducible run to run.
        contrib = (table[without | bit] - table[without]) * w[sizes[without]].reshape(
            (-1,) + (1,) * (table.ndim - 1)
        )
        phi[i] = contrib.sum(axis=0)
    return phi


def coalition_table(v: Callable[[FrozenSet[int]], float], G: int) -> np.ndarray:
    return np.array(
        [v(frozenset(i for i in range(G) if m >> i & 1)) for m in range(2**G)], dtype=float
    )


def exact_shapley(v: Callable[[FrozenSet[int]], float], G: int, names: Sequence[str] = ()) -> ShapleyReport:
    """Shapley values of the game ``v`` by full enumeration of all 2**G coalitions."""
    if G < 1:
        raise ShapleyError("need at least one player")
    if G > MAX_EXACT_PLAYERS:
        raise ShapleyError(f"exact enumeration is limited to {MAX_EXACT_PLAYERS} players, got {G}")
    table = coalition_table(v, G)
    phi = exact_shapley_table(table, G)
    return ShapleyReport(phi, float(table[0]), float(table[-1]), tuple(names))


def rank_channels(model, X_val: np.ndarray, y_val: np.ndarray, min_per_class: int = 10) -> ShapleyReport:
    """Rank channel groups by Shapley value of the mean validation log-likelihood.

    ``X_val`` are raw (unstandardized) features. A channel outside the
    coalition has all of its features replaced by the training mean, which
    is 0 after standardization. The predictive model is the posterior-mean
    readout.
    """
    if getattr(model, "posterior", None) is None or not model.trained:
        raise ShapleyError("rank_channels needs a trained model")
    y_idx = model.class_indices(y_val)
    counts = np.bincount(y_idx, minlength=model.num_classes)
    if np.any(counts < min_per_class):
        raise ShapleyError(
            f"need >= {min_per_class} validation windows per class, got {counts.tolist()}"
        )
    Z = model.global_stats.standardize(X_val)
    groups = model.feature_groups
    G = int(groups.max()) + 1
    K = model.num_classes
    table = np.zeros((2**G, K + 1))
    for m in range(2**G):
        keep = np.array([(m >> g) & 1 for g in groups], dtype=bool)
        ll = model.log_likelihood(np.where(keep, Z, 0.0), y_idx, standardized=True)
        table[m, :K] = [ll[y_idx == k].mean() for k in range(K)]
        table[m, K] = ll.mean()
    phi = exact_shapley_table(table, G)
    return ShapleyReport(
        phi[:, K],
        float(table[0, K]),
        float(table[-1, K]),
        tuple(model.group_names),
        phi[:, :K].T.copy(),
        tuple(model.classes),
    )


def structure_from_ranks(
    report: ShapleyReport,
    cfg: ReservoirConfig,
    num_classes: int,
    groups: Sequence[int],
    nodes_per_class: int,
    priority: Optional[Sequence[float]] = None,
) -> ReservoirConfig:
    """Re-allocate reservoir nodes proportionally to positive channel Shapley values.

    Negative values are clipped to zero; every channel keeps one floor node.
    If no value is positive the config is returned unchanged with a warning.
    """
    groups = np.asarray(groups, dtype=int)
    if len(report.values) != int(groups.max()) + 1:
        raise ShapleyError("report does not cover the config's channel groups")
    weights = np.clip(report.values, 0.0, None)
    if not weights.sum() > 0:
        warnings.warn("degenerate Shapley ranking (no positive values); keeping allocation")
        logger.warning("degenerate Shapley ranking; keeping round-robin allocation")
        return cfg
    return size_reservoir(
        num_classes,
        cfg.num_features,
        weights,
        nodes_per_class,
        groups,
        priority,
        leak_alpha=cfg.leak_alpha,
        spectral_radius=cfg.spectral_radius,
        input_scaling=cfg.input_scaling,
        density=cfg.density,
        seed=cfg.seed,
    )
