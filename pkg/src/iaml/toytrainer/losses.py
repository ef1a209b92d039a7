"""MLE, IAML and reward-weighted objectives for the toy model.

Each returns ``(loss, grad)`` with the loss averaged over the batch. The IAML
loss is the MLE loss on a replica batch (original plus payoff draws), which
is the Monte Carlo form of the expected log-likelihood under the payoff
distribution.
"""
from __future__ import annotations

import numpy as np

from ..sampler import AugmentationConfig, replicate
from .model import ToyModelParams, weighted_nll_and_grad
from .screens import screen_tokens


def loss_mle(params: ToyModelParams, x, tokens):
    return weighted_nll_and_grad(params, x, tokens)


def iaml_replica_batch(screens, cfg: AugmentationConfig, *, offset: int = 0):
    """Features and tokens for ``cfg.k_replicas`` replicas of every screen.

    Rows are grouped replica-major: all originals first, then replica 1, etc.
    ``offset`` shifts the record index used to derive sampling streams.
    """
    reps = [replicate(s.gt_elements, cfg, offset + i) for i, s in enumerate(screens)]
    x = np.stack([s.features for s in screens])
    xs, toks = [], []
    for r in range(cfg.k_replicas):
        xs.append(x)
        toks.append(np.stack([screen_tokens(rep[r]) for rep in reps]))
    return np.concatenate(xs), np.concatenate(toks)


def loss_iaml(params: ToyModelParams, screens, cfg: AugmentationConfig):
    x, tokens = iaml_replica_batch(screens, cfg)
    return loss_mle(params, x, tokens)


def loss_weighted(params: ToyModelParams, x, tokens, rewards):
    """``-mean_b r_b * log p(y_b | x_b)``; rewards scale each sequence's likelihood."""
    return weighted_nll_and_grad(params, x, tokens, rewards)


def finite_difference_grad(fn, params: ToyModelParams, h: float = 1e-4) -> np.ndarray:
    """Central differences of the scalar ``fn(params)`` over every flat parameter."""
    base = params.flat()
    work = params.copy()
    out = np.empty_like(base)
    for i in range(base.size):
        v = base.copy()
        v[i] += h
        work.set_flat(v)
        up = fn(work)
        v[i] -= 2 * h
        work.set_flat(v)
        down = fn(work)
        out[i] = (up - down) / (2 * h)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest deviation relative to the largest gradient component."""
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)
