"""Per-window statistical features, standardization and empirical densities."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np

from .signals import CHANNELS, NUM_CHANNELS, FaultLabel, Window

STATS = ("mean", "var", "skew", "kurt", "rms")
FEATURE_NAMES = tuple(f"{ch}.{st}" for ch in CHANNELS for st in STATS)
NUM_FEATURES = len(FEATURE_NAMES)

_DEGENERATE_M2 = 1e-12
_KDE_MIN_BANDWIDTH = 1e-6
MAX_HISTOGRAM_BINS = 1000


class FeatureError(ValueError):
    pass


def channel_of(feature_index: int) -> int:
    """Channel group index of a feature (features are channel-major)."""
    return feature_index // len(STATS)


def channel_groups(num_features: int = NUM_FEATURES) -> np.ndarray:
    return np.arange(num_features) // len(STATS)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    label: FaultLabel
    load_level: float = 0.0
    names: tuple = FEATURE_NAMES


def _channel_stats(x: np.ndarray) -> np.ndarray:
    """Return (mean, var, skew, kurt, rms) along the last axis."""
    L = x.shape[-1]
    mean = x.mean(axis=-1)
    d = x - mean[..., None]
    m2 = np.mean(d**2, axis=-1)
    m3 = np.mean(d**3, axis=-1)
    m4 = np.mean(d**4, axis=-1)
    var = m2 * L / (L - 1)
    ok = m2 >= _DEGENERATE_M2
    safe = np.where(ok, m2, 1.0)
    skew = np.where(ok, m3 / safe**1.5, 0.0)
    kurt = np.where(ok, m4 / safe**2 - 3.0, 0.0)
    rms = np.sqrt(np.mean(x**2, axis=-1))
    return np.stack([mean, var, skew, kurt, rms], axis=-1)


def extract_features(window: Union[np.ndarray, Window]) -> np.ndarray:
    """Feature values for one ``[channels x L]`` window, channel-major.

    Skewness and excess kurtosis use biased central moments and are set to
    0 when the second moment is below 1e-12.
    """
    x = window.samples if isinstance(window, Window) else np.asarray(window, dtype=float)
    if x.ndim != 2:
        raise FeatureError(f"window must be 2-D, got shape {x.shape}")
    if x.shape[1] < 4:
        raise FeatureError(f"window length must be >= 4, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise FeatureError("window contains non-finite values")
    return _channel_stats(x).reshape(-1)


def feature_vector(window: Window) -> FeatureVector:
    if window.samples.shape[0] != NUM_CHANNELS:
        raise FeatureError(f"expected {NUM_CHANNELS} channels")
    return FeatureVector(extract_features(window), window.label, window.load_level)


@dataclass(frozen=True)
class GlobalStats:
    mean: np.ndarray
    std: np.ndarray
    zero_variance: np.ndarray  # bool mask of flagged features

    def standardize(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        z = (X - self.mean) / np.where(self.zero_variance, 1.0, self.std)
        return np.where(self.zero_variance, 0.0, z)

    def destandardize(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z) * self.std + self.mean

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "zero_variance": self.zero_variance.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GlobalStats":
        return cls(
            np.array(d["mean"], dtype=float),
            np.array(d["std"], dtype=float),
            np.array(d["zero_variance"], dtype=bool),
        )


def fit_global_stats(train: np.ndarray, zero_tol: float = 1e-12) -> GlobalStats:
    """Per-feature mean and unbiased (n-1) std of the training rows."""
    train = np.asarray(train, dtype=float)
    if train.ndim != 2 or train.shape[0] < 2:
        raise FeatureError("need at least 2 training rows")
    mean = train.mean(axis=0)
    std = train.std(axis=0, ddof=1)
    zero = std <= zero_tol * np.maximum(1.0, np.abs(mean))
    return GlobalStats(mean, std, zero)


@dataclass
class FeatureMatrix:
    X: np.ndarray
    labels: np.ndarray
    loads: np.ndarray
    names: tuple = FEATURE_NAMES
    global_stats: Optional[GlobalStats] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        self.loads = np.asarray(self.loads, dtype=float)
        if self.X.ndim != 2 or self.X.shape[1] != len(self.names):
            raise FeatureError("feature matrix width does not match names")
        if len(set(self.names)) != len(self.names):
            raise FeatureError("feature names must be unique")
        if not (len(self.labels) == len(self.loads) == self.X.shape[0]):
            raise FeatureError("labels/loads length mismatch")

    def __len__(self) -> int:
        return self.X.shape[0]

    def subset(self, idx) -> "FeatureMatrix":
        return FeatureMatrix(
            self.X[idx], self.labels[idx], self.loads[idx], self.names, self.global_stats
        )

    def standardized(self, stats: GlobalStats) -> "FeatureMatrix":
        return FeatureMatrix(
            stats.standardize(self.X), self.labels, self.loads, self.names, stats
        )

    @classmethod
    def from_windows(cls, windows: Iterable[Window]) -> "FeatureMatrix":
        rows, labels, loads = [], [], []
        for w in windows:
            rows.append(extract_features(w))
            labels.append(int(w.label))
            loads.append(w.load_level)
        if not rows:
            raise FeatureError("no windows")
        return cls(np.vstack(rows), np.array(labels), np.array(loads))

    def to_csv(self, path: Union[str, Path]) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(self.names) + ["label", "load"])
            for x, y, ld in zip(self.X, self.labels, self.loads):
                w.writerow([repr(float(v)) for v in x] + [int(y), repr(float(ld))])

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "FeatureMatrix":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[-2:] != ["label", "load"]:
            raise FeatureError("feature CSV must end with label,load columns")
        data = np.array([[float(v) for v in r] for r in body])
        return cls(data[:, :-2], data[:, -2].astype(int), data[:, -1], tuple(header[:-2]))


def standardize(matrix: FeatureMatrix, stats: GlobalStats) -> FeatureMatrix:
    return matrix.standardized(stats)


# --------------------------------------------------------------------------
# Empirical densities


@dataclass(frozen=True)
class Density:
    """Histogram (``edges``/``masses``) or Gaussian KDE (``samples``/``bandwidth``)."""

    kind: str
    support: tuple
    edges: Optional[np.ndarray] = None
    masses: Optional[np.ndarray] = None
    samples: Optional[np.ndarray] = None
    bandwidth: Optional[float] = None

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "histogram":
            widths = np.diff(self.edges)
            dens = self.masses / widths
            idx = np.searchsorted(self.edges, x, side="right") - 1
            # Right edge belongs to the last bin.
            idx = np.where(x == self.edges[-1], len(widths) - 1, idx)
            inside = (idx >= 0) & (idx < len(widths))
            return np.where(inside, dens[np.clip(idx, 0, len(widths) - 1)], 0.0)
        h = self.bandwidth
        u = (x[..., None] - self.samples) / h
        return np.exp(-0.5 * u**2).sum(axis=-1) / (len(self.samples) * h * math.sqrt(2 * math.pi))

    def moments(self) -> tuple:
        """Mean and variance of the density itself."""
        if self.kind == "histogram":
            centers = 0.5 * (self.edges[1:] + self.edges[:-1])
            widths = np.diff(self.edges)
            m = float(np.sum(self.masses * centers))
            # Uniform within each bin.
            v = float(np.sum(self.masses * ((centers - m) ** 2 + widths**2 / 12)))
            return m, v
        m = float(self.samples.mean())
        return m, float(self.samples.var() + self.bandwidth**2)


def freedman_diaconis_bins(x: np.ndarray) -> int:
    """Bin count by Freedman-Diaconis, falling back to Sturges when IQR is 0.

    Capped at ``MAX_HISTOGRAM_BINS``: a tiny IQR next to a far outlier would
    otherwise ask for billions of bins.
    """
    n = len(x)
    q75, q25 = np.percentile(x, [75, 25])
    iqr = q75 - q25
    span = x.max() - x.min()
    if iqr > 0 and span > 0:
        width = 2.0 * iqr / n ** (1.0 / 3.0)
        return int(min(MAX_HISTOGRAM_BINS, max(1, math.ceil(span / width))))
    return max(1, int(math.ceil(math.log2(n))) + 1)


def silverman_bandwidth(x: np.ndarray) -> float:
    n = len(x)
    std = np.std(x, ddof=1) if n > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    iqr = (q75 - q25) / 1.349
    spread = min(std, iqr) if iqr > 0 else std
    return max(0.9 * spread * n ** (-0.2), _KDE_MIN_BANDWIDTH)


def empirical_density(
    samples: Sequence[float],
    kind: str = "histogram",
    bins: Optional[int] = None,
    bandwidth: Optional[float] = None,
) -> Density:
    """Normalized histogram or Gaussian KDE of a 1-D sample set."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise FeatureError("empirical_density needs at least one sample")
    if not np.all(np.isfinite(x)):
        raise FeatureError("samples must be finite")
    if kind == "histogram":
        nbins = bins if bins is not None else freedman_diaconis_bins(x)
        if nbins < 1:
            raise FeatureError("bins must be positive")
        lo, hi = float(x.min()), float(x.max())
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        counts, edges = np.histogram(x, bins=nbins, range=(lo, hi))
        masses = counts / counts.sum()
        return Density("histogram", (lo, hi), edges=edges, masses=masses)
    if kind == "kde":
        h = float(bandwidth) if bandwidth is not None else silverman_bandwidth(x)
        if not h > 0:
            raise FeatureError("bandwidth must be positive")
        h = max(h, _KDE_MIN_BANDWIDTH)
        # +-8 bandwidths leaves < 1e-14 of each kernel outside the support.
        return Density("kde", (float(x.min() - 8 * h), float(x.max() + 8 * h)), samples=x, bandwidth=h)
    raise FeatureError(f"unknown density kind {kind!r}")


def class_densities(
    matrix: FeatureMatrix, kind: str = "histogram", bins: Optional[int] = None
) -> dict:
    """Map ``(label, feature_index) -> Density`` over a (standardized) matrix."""
    out = {}
    for k in np.unique(matrix.labels):
        rows = matrix.X[matrix.labels == k]
        for j in range(rows.shape[1]):
            out[(int(k), j)] = empirical_density(rows[:, j], kind, bins)
    return out
