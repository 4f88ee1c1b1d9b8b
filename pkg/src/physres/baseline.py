"""Dense fully-variational baseline: one tanh hidden layer, every weight Bayesian.

All weights have standard-normal priors and are trained end to end with the
same SGD loop as the reservoir readout, so the two models can be compared at
equal epochs and batch settings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .priors import kl_gaussian
from .readout import (
    ReadoutError,
    TrainConfig,
    inv_softplus,
    log_softmax,
    sgd_bbb,
    sigmoid,
    softplus,
    with_bias,
)

DEFAULT_HIDDEN = 64
INIT_SIGMA = 0.01


@dataclass(frozen=True)
class DenseBNN:
    """Flat parameter vectors; ``W1`` is ``[H, F+1]`` and ``W2`` is ``[K, H+1]``."""

    num_inputs: int
    num_hidden: int
    num_classes: int
    mu: np.ndarray
    rho_raw: np.ndarray

    @property
    def sizes(self) -> Tuple[int, int]:
        return self.num_hidden * (self.num_inputs + 1), self.num_classes * (self.num_hidden + 1)

    @property
    def trainable_parameters(self) -> int:
        return 2 * self.mu.size

    def unpack(self, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        n1, _ = self.sizes
        lead = w.shape[:-1]
        W1 = w[..., :n1].reshape(lead + (self.num_hidden, self.num_inputs + 1))
        W2 = w[..., n1:].reshape(lead + (self.num_classes, self.num_hidden + 1))
        return W1, W2

    def log_probs(self, X: np.ndarray, w: np.ndarray = None) -> np.ndarray:
        W1, W2 = self.unpack(self.mu if w is None else w)
        H = np.tanh(with_bias(X) @ W1.T)
        return log_softmax(with_bias(H) @ W2.T)


def init_dense_bnn(
    num_inputs: int, num_classes: int, num_hidden: int = DEFAULT_HIDDEN, seed: int = 0
) -> DenseBNN:
    """Fan-in scaled means and a small common sigma."""
    if num_inputs < 1 or num_hidden < 1 or num_classes < 2:
        raise ReadoutError("baseline needs >= 1 input, >= 1 hidden unit and >= 2 classes")
    rng = np.random.default_rng(seed)
    W1 = rng.standard_normal((num_hidden, num_inputs + 1)) / math.sqrt(num_inputs + 1)
    W2 = rng.standard_normal((num_classes, num_hidden + 1)) / math.sqrt(num_hidden + 1)
    mu = np.concatenate([W1.ravel(), W2.ravel()])
    rho = np.full_like(mu, float(inv_softplus(INIT_SIGMA)))
    return DenseBNN(num_inputs, num_hidden, num_classes, mu, rho)


def dense_loss_and_grad(
    net: DenseBNN, X: np.ndarray, y: np.ndarray, mu: np.ndarray, rho: np.ndarray, eps: np.ndarray, beta: float
) -> Tuple[float, np.ndarray, np.ndarray]:
    """Negative ELBO with N(0, 1) priors and manual backprop through both layers."""
    M = eps.shape[0]
    sigma = softplus(rho)
    w = mu[None] + sigma[None] * eps  # [M, P]
    W1, W2 = net.unpack(w)
    X1 = with_bias(X)
    A = np.einsum("bf,mhf->mbh", X1, W1)
    H = np.tanh(A)
    H1 = np.concatenate([H, np.ones(H.shape[:2] + (1,))], axis=2)
    logp = log_softmax(np.einsum("mbh,mkh->mbk", H1, W2))
    rows = np.arange(len(y))
    nll = -logp[:, rows, y].sum(axis=1)
    resid = np.exp(logp)
    resid[:, rows, y] -= 1.0
    gW2 = np.einsum("mbk,mbh->mkh", resid, H1)
    dA = np.einsum("mbk,mkh->mbh", resid, W2[..., :-1]) * (1.0 - H**2)
    gW1 = np.einsum("mbh,bf->mhf", dA, X1)
    gw = np.concatenate([gW1.reshape(M, -1), gW2.reshape(M, -1)], axis=1) / M

    kl = kl_gaussian(mu, sigma**2, 0.0, 1.0)
    loss = float(nll.mean() + beta * kl.sum())
    if not math.isfinite(loss):
        raise ReadoutError("non-finite baseline loss")
    g_mu = gw.sum(axis=0) + beta * mu
    g_sigma = (gw * eps).sum(axis=0) + beta * (sigma - 1.0 / sigma)
    return loss, g_mu, g_sigma * sigmoid(rho)


def train_dense_bnn(
    X: np.ndarray, y: np.ndarray, net: DenseBNN, cfg: TrainConfig = TrainConfig()
) -> Tuple[DenseBNN, List[float]]:
    """Train on standardized features ``X`` with class indices ``y``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.shape[1] != net.num_inputs:
        raise ReadoutError(f"expected {net.num_inputs} inputs, got {X.shape[1]}")
    if y.min() < 0 or y.max() >= net.num_classes:
        raise ReadoutError("class index out of range")

    def loss_and_grad(idx, mu, rho, eps, beta):
        return dense_loss_and_grad(net, X[idx], y[idx], mu, rho, eps, beta)

    mu, rho, trace = sgd_bbb(loss_and_grad, net.mu, net.rho_raw, len(y), cfg)
    return DenseBNN(net.num_inputs, net.num_hidden, net.num_classes, mu, rho), trace


def predict_dense(net: DenseBNN, X: np.ndarray, mc_samples: int = 100, seed: int = 0) -> np.ndarray:
    """Monte-Carlo averaged class probabilities ``[n, K]``."""
    rng = np.random.default_rng(seed)
    w = net.mu + softplus(net.rho_raw) * rng.standard_normal((mc_samples, net.mu.size))
    return np.mean([np.exp(net.log_probs(X, wi)) for wi in w], axis=0)
