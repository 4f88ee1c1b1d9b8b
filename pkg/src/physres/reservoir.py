"""Fixed-dynamics echo-state reservoir sized from the number of fault classes.

The reservoir has ``nodes_per_class * K`` leaky tanh nodes. Each node has one
primary input feature; the node-to-feature map is round-robin, or follows
per-channel attribution weights when those are given.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_NODES_PER_CLASS = 4
DEFAULT_T_DRIVE = 10
_RESEED_OFFSET = 0x9E3779B9


class ReservoirError(ValueError):
    pass


@dataclass(frozen=True)
class ReservoirConfig:
    num_nodes: int
    num_features: int
    node_to_feature: tuple
    leak_alpha: float = 0.8
    spectral_radius: float = 0.9
    input_scaling: float = 1.0
    density: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.num_nodes < 1:
            raise ReservoirError("num_nodes must be positive")
        if len(self.node_to_feature) != self.num_nodes:
            raise ReservoirError(
                f"node_to_feature covers {len(self.node_to_feature)} nodes, expected {self.num_nodes}"
            )
        if any(not 0 <= f < self.num_features for f in self.node_to_feature):
            raise ReservoirError("node_to_feature refers to an unknown feature")
        if not 0.0 < self.leak_alpha <= 1.0:
            raise ReservoirError(f"leak_alpha must be in (0, 1], got {self.leak_alpha}")
        if not 0.0 < self.spectral_radius < 1.0:
            raise ReservoirError(f"spectral_radius must be in (0, 1), got {self.spectral_radius}")
        if not self.input_scaling > 0:
            raise ReservoirError("input_scaling must be positive")
        if not 0.0 < self.density <= 1.0:
            raise ReservoirError("density must be in (0, 1]")

    def node_counts(self) -> np.ndarray:
        return np.bincount(np.asarray(self.node_to_feature, dtype=int), minlength=self.num_features)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["node_to_feature"] = list(self.node_to_feature)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ReservoirConfig":
        d = dict(d)
        d["node_to_feature"] = tuple(int(f) for f in d["node_to_feature"])
        return cls(**d)


@dataclass(frozen=True)
class ReservoirWeights:
    W_in: np.ndarray  # [N, F]
    W: np.ndarray  # [N, N]


def _round_robin(n: int, count: int) -> list:
    return [i % count for i in range(n)]


def largest_remainder(total: int, weights: np.ndarray) -> np.ndarray:
    """Split ``total`` integer units proportionally to ``weights``.

    Ties in the fractional remainders go to the lower index.
    """
    w = np.asarray(weights, dtype=float)
    quotas = total * w / w.sum()
    counts = np.floor(quotas).astype(int)
    left = total - counts.sum()
    order = sorted(range(len(w)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:left]:
        counts[i] += 1
    return counts


def allocate_nodes(
    num_nodes: int,
    num_features: int,
    weights: Optional[Sequence[float]] = None,
    groups: Optional[Sequence[int]] = None,
    priority: Optional[Sequence[float]] = None,
) -> tuple:
    """Node-to-feature map.

    ``groups`` assigns each feature to a group (default: every feature is its
    own group). Without ``weights`` nodes go round-robin over groups. With
    ``weights`` (one per group) every group keeps one floor node (only the
    positive-weight groups when there are more groups than nodes) and the
    rest are split proportionally by largest remainder. Inside a group, nodes go
    round-robin over its member features, highest ``priority`` first (index
    order when not given).
    """
    groups = np.arange(num_features) if groups is None else np.asarray(groups, dtype=int)
    if len(groups) != num_features:
        raise ReservoirError("groups must have one entry per feature")
    if priority is not None and len(priority) != num_features:
        raise ReservoirError("priority must have one entry per feature")
    ids = sorted(set(groups.tolist()))
    members = {}
    for g in ids:
        feats = [j for j in range(num_features) if groups[j] == g]
        if priority is not None:
            feats.sort(key=lambda j: (-priority[j], j))
        members[g] = feats
    G = len(ids)

    if weights is None:
        per_group = np.bincount(_round_robin(num_nodes, G), minlength=G)
    else:
        w = np.clip(np.asarray(weights, dtype=float), 0.0, None)
        if len(w) != G:
            raise ReservoirError(f"expected {G} group weights, got {len(w)}")
        if not w.sum() > 0:
            raise ReservoirError("all group weights are nonpositive")
        # Floors go to every group when there is room, else to the groups
        # with positive weight only.
        floors = np.ones(G, dtype=int) if num_nodes >= G else (w > 0).astype(int)
        if floors.sum() > num_nodes:
            raise ReservoirError(f"{num_nodes} nodes cannot give a floor node to {int(floors.sum())} groups")
        per_group = floors + largest_remainder(num_nodes - int(floors.sum()), w)

    mapping = []
    for g, count in zip(ids, per_group):
        feats = members[g]
        mapping.extend(feats[i % len(feats)] for i in range(int(count)))
    return tuple(mapping)


def size_reservoir(
    num_classes: int,
    num_features: int,
    ranks: Optional[Sequence[float]] = None,
    nodes_per_class: int = DEFAULT_NODES_PER_CLASS,
    groups: Optional[Sequence[int]] = None,
    priority: Optional[Sequence[float]] = None,
    **kwargs,
) -> ReservoirConfig:
    """Reservoir config with ``num_classes * nodes_per_class`` nodes.

    ``ranks`` are nonnegative attribution weights, one per group of
    ``groups`` (or per feature when ``groups`` is None); ``priority`` orders
    features inside a group. Extra keyword arguments are passed to
    :class:`ReservoirConfig`.
    """
    if num_classes < 2:
        raise ReservoirError(f"need at least 2 classes, got {num_classes}")
    if num_features < 1:
        raise ReservoirError("need at least 1 feature")
    if nodes_per_class < 1:
        raise ReservoirError("nodes_per_class must be positive")
    n = num_classes * nodes_per_class
    mapping = allocate_nodes(n, num_features, ranks, groups, priority)
    return ReservoirConfig(n, num_features, mapping, **kwargs)


def spectral_radius(W: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(W)))) if W.size else 0.0


def _draw(cfg: ReservoirConfig, seed) -> ReservoirWeights:
    rng = np.random.default_rng(seed)
    N, F = cfg.num_nodes, cfg.num_features
    s = cfg.input_scaling
    W_in = rng.uniform(-0.1 * s, 0.1 * s, size=(N, F))
    sign = rng.choice([-1.0, 1.0], size=N)
    W_in[np.arange(N), cfg.node_to_feature] = sign * rng.uniform(0.5 * s, s, size=N)
    mask = rng.random((N, N)) < cfg.density
    W = np.where(mask, rng.uniform(-1.0, 1.0, size=(N, N)), 0.0)
    return ReservoirWeights(W_in, W)


def init_reservoir(cfg: ReservoirConfig) -> ReservoirWeights:
    """Draw input and recurrent weights and rescale W to the target radius.

    A sparse draw with (numerically) zero spectral radius cannot be rescaled;
    it is redrawn once from a derived seed before giving up.
    """
    for attempt, seed in enumerate([[cfg.seed], [cfg.seed, _RESEED_OFFSET]]):
        w = _draw(cfg, seed)
        radius = spectral_radius(w.W)
        if radius > 1e-8:
            W = w.W * (cfg.spectral_radius / radius)
            return ReservoirWeights(w.W_in, W)
        logger.warning("degenerate recurrent draw (radius %.3g), attempt %d", radius, attempt + 1)
    raise ReservoirError("could not draw a recurrent matrix with nonzero spectral radius")


def _step(w: ReservoirWeights, alpha: float, s: np.ndarray, x: np.ndarray) -> np.ndarray:
    return (1.0 - alpha) * s + alpha * np.tanh(x @ w.W_in.T + s @ w.W.T)


def run_reservoir(
    w: ReservoirWeights,
    cfg: ReservoirConfig,
    sequence: Sequence[np.ndarray],
    s0: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Drive the reservoir with ``sequence`` and return the final state."""
    seq = np.asarray(sequence, dtype=float)
    if seq.ndim != 2 or len(seq) == 0:
        raise ReservoirError("sequence must be a nonempty list of feature vectors")
    if seq.shape[1] != cfg.num_features:
        raise ReservoirError(f"expected {cfg.num_features} features, got {seq.shape[1]}")
    if not np.all(np.isfinite(seq)):
        raise ReservoirError("non-finite reservoir input")
    s = np.zeros(cfg.num_nodes) if s0 is None else np.asarray(s0, dtype=float).copy()
    for x in seq:
        s = _step(w, cfg.leak_alpha, s, x)
    return s


def collect_states(
    w: ReservoirWeights, cfg: ReservoirConfig, X: np.ndarray, t_drive: int = DEFAULT_T_DRIVE
) -> np.ndarray:
    """Final states ``[num_windows, N]``; each row of X is held for ``t_drive`` steps."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != cfg.num_features:
        raise ReservoirError(f"expected a [n, {cfg.num_features}] feature matrix")
    if t_drive < 1:
        raise ReservoirError("t_drive must be positive")
    if not np.all(np.isfinite(X)):
        raise ReservoirError("non-finite reservoir input")
    drive = X @ w.W_in.T
    S = np.zeros((X.shape[0], cfg.num_nodes))
    a = cfg.leak_alpha
    for _ in range(t_drive):
        S = (1.0 - a) * S + a * np.tanh(drive + S @ w.W.T)
    return S


def with_mapping(cfg: ReservoirConfig, node_to_feature: Sequence[int]) -> ReservoirConfig:
    return replace(cfg, node_to_feature=tuple(node_to_feature), num_nodes=len(node_to_feature))
