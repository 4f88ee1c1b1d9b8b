"""Variational linear-softmax readout trained with Bayes-by-Backprop.

The readout maps a reservoir state ``s`` (length N) to class logits
``W @ [s; 1]``. Each weight has an independent Gaussian posterior
``N(mu, softplus(rho_raw)**2)``; the prior for the weight linking node ``n``
to class ``k`` is the class-conditional moment prior of the node's primary
feature. Gradients are analytic (no autodiff dependency).
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .priors import PriorError, WeightPrior, kl_gaussian

logger = logging.getLogger(__name__)

BIAS_PRIOR_MEAN = 0.0
BIAS_PRIOR_VAR = 1.0
DIVERGENCE_LIMIT = 1e6


class ReadoutError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, trace: List[float]):
        super().__init__(message)
        self.trace = trace


def softplus(x):
    return np.logaddexp(0.0, x)


def inv_softplus(y):
    y = np.asarray(y, dtype=float)
    # log(expm1(y)) loses precision for large y; y + log(-expm1(-y)) does not.
    return y + np.log(-np.expm1(-y))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def entropy(p: np.ndarray) -> np.ndarray:
    """Shannon entropy in nats along the last axis (0 log 0 = 0)."""
    p = np.asarray(p, dtype=float)
    logp = np.log(np.where(p > 0, p, 1.0))
    return -np.sum(p * logp, axis=-1)


def with_bias(S: np.ndarray) -> np.ndarray:
    S = np.atleast_2d(np.asarray(S, dtype=float))
    return np.hstack([S, np.ones((S.shape[0], 1))])


@dataclass(frozen=True)
class VariationalPosterior:
    mu: np.ndarray  # [K, N+1], last column is the bias
    rho_raw: np.ndarray  # [K, N+1]

    @property
    def sigma(self) -> np.ndarray:
        return softplus(self.rho_raw)

    @property
    def shape(self) -> tuple:
        return self.mu.shape

    @classmethod
    def from_sigma(cls, mu, sigma) -> "VariationalPosterior":
        return cls(np.array(mu, dtype=float), inv_softplus(np.asarray(sigma, dtype=float)))

    def sample(self, eps: np.ndarray) -> np.ndarray:
        return self.mu + self.sigma * eps

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "sigma": self.sigma.tolist(), "rho_raw": self.rho_raw.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "VariationalPosterior":
        return cls(np.array(d["mu"], dtype=float), np.array(d["rho_raw"], dtype=float))


@dataclass(frozen=True)
class ReadoutPrior:
    """Node-level Gaussian prior on every readout weight, bias column last."""

    mean: np.ndarray
    var: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "var": self.var.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ReadoutPrior":
        return cls(np.array(d["mean"], dtype=float), np.array(d["var"], dtype=float))


def init_readout_from_priors(
    prior: WeightPrior, node_to_feature: Sequence[int], num_nodes: Optional[int] = None
) -> Tuple[VariationalPosterior, ReadoutPrior]:
    """Broadcast feature-level priors to nodes; the posterior starts at the prior."""
    mapping = np.asarray(node_to_feature, dtype=int)
    if num_nodes is not None and len(mapping) != num_nodes:
        raise ReadoutError(f"node_to_feature covers {len(mapping)} of {num_nodes} nodes")
    K, F = prior.mean.shape
    if prior.var.shape != (K, F):
        raise ReadoutError("prior mean/var shapes differ")
    if mapping.size == 0 or mapping.min() < 0 or mapping.max() >= F:
        raise ReadoutError(f"node_to_feature must index the prior's {F} features")
    mean = np.hstack([prior.mean[:, mapping], np.full((K, 1), BIAS_PRIOR_MEAN)])
    var = np.hstack([prior.var[:, mapping], np.full((K, 1), BIAS_PRIOR_VAR)])
    if np.any(var <= 0):
        raise ReadoutError("node-level prior has zero variance; use tau > 0")
    p = ReadoutPrior(mean, var)
    return VariationalPosterior.from_sigma(mean, np.sqrt(var)), p


@dataclass(frozen=True)
class TrainConfig:
    beta: Optional[float] = None  # None -> 1 / num_batches
    learning_rate: float = 0.01
    epochs: int = 200
    mc_train_samples: int = 2
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.beta is not None and self.beta < 0:
            raise ReadoutError("beta must be nonnegative")
        if not self.learning_rate > 0:
            raise ReadoutError("learning_rate must be positive")
        if self.epochs < 0 or self.mc_train_samples < 1 or self.batch_size < 1:
            raise ReadoutError("epochs >= 0, mc_train_samples >= 1, batch_size >= 1 required")


def elbo_loss_and_grad(
    S1: np.ndarray,
    y: np.ndarray,
    q: VariationalPosterior,
    p: ReadoutPrior,
    beta: float,
    eps: np.ndarray,
) -> Tuple[float, np.ndarray, np.ndarray]:
    """Negative ELBO of one batch and its gradients w.r.t. ``mu`` and ``rho_raw``.

    ``S1`` are bias-augmented states ``[B, N+1]``; ``eps`` has shape
    ``[M, K, N+1]`` (one standard-normal draw per Monte-Carlo sample). The
    likelihood term is the batch-summed NLL averaged over the M draws; the
    KL term is counted once.
    """
    if len(S1) == 0:
        raise ReadoutError("empty batch")
    M = eps.shape[0]
    sigma = q.sigma
    W = q.mu[None] + sigma[None] * eps  # [M, K, N+1]
    logits = np.einsum("bn,mkn->mbk", S1, W)
    logp = log_softmax(logits)
    rows = np.arange(len(y))
    nll = -logp[:, rows, y].sum(axis=1)  # [M]
    resid = np.exp(logp)
    resid[:, rows, y] -= 1.0
    gW = np.einsum("mbk,bn->mkn", resid, S1) / M  # d(mean nll)/dW_m

    kl = kl_gaussian(q.mu, sigma**2, p.mean, p.var)
    loss = float(nll.mean() + beta * kl.sum())
    if not math.isfinite(loss):
        bad = np.argwhere(~np.isfinite(W).all(axis=0) | ~np.isfinite(kl))
        where = tuple(bad[0]) if len(bad) else "unknown"
        raise ReadoutError(f"non-finite loss (offending weight index {where})")

    dsig = sigmoid(q.rho_raw)
    g_mu = gW.sum(axis=0) + beta * (q.mu - p.mean) / p.var
    g_sigma = (gW * eps).sum(axis=0) + beta * (sigma / p.var - 1.0 / sigma)
    return loss, g_mu, g_sigma * dsig


def elbo_loss(S1, y, q, p, beta, eps) -> float:
    return elbo_loss_and_grad(S1, y, q, p, beta, eps)[0]


def _check_labels(y: np.ndarray, K: int) -> np.ndarray:
    y = np.asarray(y, dtype=int)
    if y.min(initial=0) < 0 or y.max(initial=0) >= K:
        raise ReadoutError(f"class indices must lie in 0..{K - 1}")
    return y


LossGrad = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray, float], Tuple[float, np.ndarray, np.ndarray]]


def sgd_bbb(
    loss_and_grad: LossGrad,
    mu0: np.ndarray,
    rho0: np.ndarray,
    n: int,
    cfg: TrainConfig,
) -> Tuple[np.ndarray, np.ndarray, List[float]]:
    """Plain-SGD Bayes-by-Backprop loop shared by every variational model.

    ``loss_and_grad(idx, mu, rho, eps, beta)`` returns the minibatch negative
    ELBO and its gradients. Each epoch draws one permutation, then one
    ``[M, *mu.shape]`` noise block per batch.
    """
    num_batches = math.ceil(n / cfg.batch_size)
    beta = 1.0 / num_batches if cfg.beta is None else cfg.beta
    rng = np.random.default_rng(cfg.seed)
    mu, rho = mu0.copy(), rho0.copy()
    trace: List[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for b in range(num_batches):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            eps = rng.standard_normal((cfg.mc_train_samples,) + mu.shape)
            try:
                loss, g_mu, g_rho = loss_and_grad(idx, mu, rho, eps, beta)
            except (ReadoutError, PriorError) as e:
                trace.append(total / max(b, 1))
                raise TrainingDiverged(f"epoch {epoch}: {e}", trace) from None
            if not loss <= DIVERGENCE_LIMIT:
                trace.append(total / max(b, 1))
                raise TrainingDiverged(f"loss {loss:.3g} exceeded limit at epoch {epoch}", trace)
            mu -= cfg.learning_rate * g_mu
            rho -= cfg.learning_rate * g_rho
            total += loss
        trace.append(total / num_batches)
        logger.debug("epoch %d loss %.6f", epoch, trace[-1])
    return mu, rho, trace


def train_bbb(
    states: np.ndarray,
    labels: np.ndarray,
    q0: VariationalPosterior,
    p: ReadoutPrior,
    cfg: TrainConfig = TrainConfig(),
) -> Tuple[VariationalPosterior, List[float]]:
    """Train the readout; returns the posterior and per-epoch mean batch loss."""
    S1 = with_bias(states)
    K = q0.mu.shape[0]
    y = _check_labels(labels, K)
    if len(np.unique(y)) < 2:
        raise ReadoutError("training needs at least 2 classes present")
    if S1.shape[1] != q0.mu.shape[1]:
        raise ReadoutError(f"states have {S1.shape[1] - 1} nodes, readout expects {q0.mu.shape[1] - 1}")

    def loss_and_grad(idx, mu, rho, eps, beta):
        return elbo_loss_and_grad(S1[idx], y[idx], VariationalPosterior(mu, rho), p, beta, eps)

    mu, rho, trace = sgd_bbb(loss_and_grad, q0.mu, q0.rho_raw, len(y), cfg)
    return VariationalPosterior(mu, rho), trace


# --------------------------------------------------------------------------
# Prediction


@dataclass(frozen=True)
class PredictiveResult:
    """Arrays over windows: ``probs`` is ``[n, K]``, uncertainties are ``[n]`` in nats."""

    probs: np.ndarray
    total: np.ndarray
    aleatoric: np.ndarray
    epistemic: np.ndarray

    def __len__(self) -> int:
        return len(self.total)

    def row(self, i: int) -> dict:
        return {
            "probs": self.probs[i].tolist(),
            "total_uncertainty": float(self.total[i]),
            "aleatoric": float(self.aleatoric[i]),
            "epistemic": float(self.epistemic[i]),
        }


def _predict_one(q: VariationalPosterior, s1: np.ndarray, M: int, seed: int, index: int):
    rng = np.random.default_rng([seed, index])
    W = q.sample(rng.standard_normal((M,) + q.mu.shape))
    logp = log_softmax(W @ s1)  # [M, K]
    pm = np.exp(logp)
    probs = pm.mean(axis=0)
    total = float(entropy(probs))
    alea = float(np.mean(entropy(pm)))
    return probs, total, alea


def predict(
    q: VariationalPosterior,
    states: np.ndarray,
    mc_samples: int = 100,
    seed: int = 0,
    workers: int = 1,
) -> PredictiveResult:
    """Monte-Carlo predictive distribution and entropy decomposition.

    Window ``i`` draws its weights from ``default_rng([seed, i])``, so the
    result does not depend on ``workers``.
    """
    if mc_samples < 1:
        raise ReadoutError("mc_samples must be >= 1")
    S1 = with_bias(states)
    if S1.shape[1] != q.mu.shape[1]:
        raise ReadoutError("state width does not match readout")

    def run(rng_range):
        return [_predict_one(q, S1[i], mc_samples, seed, i) for i in rng_range]

    n = len(S1)
    if workers > 1 and n > 1:
        chunks = [range(a, min(a + math.ceil(n / workers), n)) for a in range(0, n, math.ceil(n / workers))]
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(run, chunks))
        out = [r for part in parts for r in part]
    else:
        out = run(range(n))
    probs = np.array([o[0] for o in out]).reshape(n, q.mu.shape[0])
    total = np.array([o[1] for o in out])
    alea = np.array([o[2] for o in out])
    return PredictiveResult(probs, total, alea, total - alea)


def predict_mean(q: VariationalPosterior, states: np.ndarray) -> np.ndarray:
    """Class probabilities at the posterior mean (deterministic plug-in)."""
    return np.exp(log_softmax(with_bias(states) @ q.mu.T))


# --------------------------------------------------------------------------
# Metropolis-Hastings refinement


@dataclass(frozen=True)
class MHResult:
    samples: np.ndarray  # thinned chain, [n_kept, *shape]
    acceptance_rate: float


def metropolis_hastings(
    log_target: Callable[[np.ndarray], float],
    x0: np.ndarray,
    steps: int,
    proposal_std: float,
    rng: np.random.Generator,
    thin: int = 10,
) -> MHResult:
    """Random-walk Metropolis with an isotropic Gaussian proposal."""
    if steps < 1:
        raise ReadoutError("steps must be >= 1")
    if proposal_std < 0:
        raise ReadoutError("proposal_std must be nonnegative")
    x = np.array(x0, dtype=float)
    lp = log_target(x)
    kept, accepted = [], 0
    for i in range(steps):
        cand = x + proposal_std * rng.standard_normal(x.shape)
        lp_c = log_target(cand)
        if math.log(rng.random()) < lp_c - lp:
            x, lp = cand, lp_c
            accepted += 1
        if (i + 1) % thin == 0:
            kept.append(x.copy())
    if not kept:
        kept.append(x.copy())
    return MHResult(np.array(kept), accepted / steps)


def readout_log_posterior(S1: np.ndarray, y: np.ndarray, p: ReadoutPrior) -> Callable:
    rows = np.arange(len(y))
    const = -0.5 * np.sum(np.log(2 * np.pi * p.var))

    def log_post(W: np.ndarray) -> float:
        ll = float(log_softmax(S1 @ W.T)[rows, y].sum()) if len(y) else 0.0
        return ll + const - 0.5 * float(np.sum((W - p.mean) ** 2 / p.var))

    return log_post


def mh_refine(
    q: VariationalPosterior,
    states: np.ndarray,
    labels: np.ndarray,
    p: ReadoutPrior,
    steps: int,
    proposal_std: float,
    seed: int = 0,
    thin: int = 10,
) -> MHResult:
    """Sample the readout weight posterior starting from the BBB mean."""
    K, width = q.mu.shape
    states = np.asarray(states, dtype=float).reshape(-1, width - 1)
    S1 = with_bias(states) if len(states) else np.zeros((0, width))
    y = _check_labels(labels, K) if len(states) else np.zeros(0, dtype=int)
    return metropolis_hastings(
        readout_log_posterior(S1, y, p), q.mu, steps, proposal_std, np.random.default_rng(seed), thin
    )
