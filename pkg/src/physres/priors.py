"""Class-conditional moment matching into Gaussian weight priors.

Every (class, feature) pair gets the prior N(mean, var + tau**2), where mean
and var are the sample mean and unbiased sample variance of that feature over
the rows of that class.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_TAU = 0.05


class PriorError(ValueError):
    pass


@dataclass(frozen=True)
class ClassConditionalMoments:
    classes: tuple  # fault labels, row order of mu/var
    mu: np.ndarray  # [K, F]
    var: np.ndarray  # [K, F], unbiased
    counts: np.ndarray  # [K]


@dataclass(frozen=True)
class WeightPrior:
    classes: tuple
    mean: np.ndarray  # [K, F]
    var: np.ndarray  # [K, F]
    tau: float

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var)

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "mean": self.mean.tolist(),
            "var": self.var.tolist(),
            "tau": self.tau,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WeightPrior":
        return cls(
            tuple(int(c) for c in d["classes"]),
            np.array(d["mean"], dtype=float),
            np.array(d["var"], dtype=float),
            float(d["tau"]),
        )


def match_moments(
    X: np.ndarray, labels: Sequence[int], classes: Sequence[int] = None
) -> ClassConditionalMoments:
    """Per-class sample mean and unbiased variance of every feature column."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    labels = np.asarray(labels)
    if classes is None:
        classes = sorted(int(c) for c in np.unique(labels))
    mu, var, counts = [], [], []
    for k in classes:
        rows = X[labels == k]
        if len(rows) < 2:
            raise PriorError(f"class {k} has {len(rows)} row(s); need at least 2")
        mu.append(rows.mean(axis=0))
        var.append(rows.var(axis=0, ddof=1))
        counts.append(len(rows))
    return ClassConditionalMoments(
        tuple(int(c) for c in classes), np.array(mu), np.array(var), np.array(counts)
    )


def build_prior(m: ClassConditionalMoments, tau: float = DEFAULT_TAU) -> WeightPrior:
    if tau < 0:
        raise PriorError(f"tau must be nonnegative, got {tau}")
    return WeightPrior(m.classes, m.mu.copy(), m.var + tau**2, float(tau))


def kl_gaussian(q_mean, q_var, p_mean, p_var):
    """Closed-form KL[N(q_mean, q_var) || N(p_mean, p_var)], elementwise."""
    q_mean, q_var, p_mean, p_var = (np.asarray(a, dtype=float) for a in (q_mean, q_var, p_mean, p_var))
    if np.any(q_var <= 0) or np.any(p_var <= 0):
        raise PriorError("variances must be positive")
    kl = 0.5 * np.log(p_var / q_var) + (q_var + (q_mean - p_mean) ** 2) / (2.0 * p_var) - 0.5
    return kl if kl.ndim else float(kl)



def separation_scores(prior: WeightPrior) -> np.ndarray:
    """Per-feature spread of the class prior means over the mean prior variance.

    A Fisher-style ratio: large when the classes' moment-matched priors for a
    feature sit far apart relative to their widths.
    """
    spread = prior.mean.var(axis=0)
    width = prior.var.mean(axis=0)
    return np.where(width > 0, spread / np.where(width > 0, width, 1.0), 0.0)
