"""Rewards and exponentiated payoff distributions.

Two forms are provided: :func:`exact_payoff` normalizes ``exp(r / tau)`` over a
finite candidate list, and :func:`bin_payoff` weights reward-index bins by
``count * exp(-index / tau)`` as in the Monte Carlo coordinate sampler.
All logarithms are natural; entropies and divergences are in nats.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np

from .geometry import BBox, iou

N_REWARD_BINS = 100


@dataclass(frozen=True)
class DiscreteDistribution:
    support: tuple
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "support", tuple(self.support))
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 1 or len(probs) != len(self.support):
            raise ValueError("support and probs must have the same length")
        if np.any(probs < 0) or not np.isfinite(probs).all():
            raise ValueError("probabilities must be finite and non-negative")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {probs.sum()!r}, not 1")

    def __len__(self) -> int:
        return len(self.support)

    def prob(self, label: Hashable) -> float:
        return float(self.probs[self.support.index(label)])

    def as_dict(self) -> dict:
        return dict(zip(self.support, self.probs.tolist()))

    def mean(self) -> float:
        """Expectation of a numeric support."""
        return float(np.dot(np.asarray(self.support, dtype=float), self.probs))


@dataclass
class PayoffBins:
    """Candidate boxes grouped by reward index, keys ascending.

    Each bin holds an ``(m, 4)`` array of valid boxes.
    """

    bins: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.bins = {int(k): np.asarray(v, dtype=float).reshape(-1, 4)
                     for k, v in sorted(self.bins.items())}

    @classmethod
    def from_indices(cls, boxes: np.ndarray, indices: np.ndarray) -> "PayoffBins":
        boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
        indices = np.asarray(indices)
        order = np.argsort(indices, kind="stable")
        keys, starts = np.unique(indices[order], return_index=True)
        groups = np.split(boxes[order], starts[1:])
        return cls(dict(zip(keys.tolist(), groups)))

    @property
    def keys(self) -> list[int]:
        return list(self.bins)

    @property
    def counts(self) -> np.ndarray:
        return np.array([len(v) for v in self.bins.values()], dtype=np.int64)

    @property
    def total_count(self) -> int:
        return int(self.counts.sum())

    def __len__(self) -> int:
        return len(self.bins)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - np.max(z)
    e = np.exp(z)
    return e / e.sum()


def reward_iou(gt: BBox, cand: BBox) -> float:
    return iou(gt, cand)


def _levenshtein(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def reward_edit(gt_text: str, cand_text: str) -> float:
    """Negative character-level edit distance; the text-metric baseline reward."""
    return -float(_levenshtein(gt_text, cand_text))


def format_coord(v: float) -> str:
    return f"{v:.2f}"


def serialize_box(b) -> str:
    return ",".join(format_coord(v) for v in b)


def reward_index(iou_value: float) -> int:
    """Reverse 0..99 discretization of IoU; lower index means higher overlap."""
    if not 0.0 <= iou_value <= 1.0:
        raise ValueError(f"IoU {iou_value} outside [0, 1]")
    return max(0, N_REWARD_BINS - 1 - math.floor(N_REWARD_BINS * iou_value))


def reward_index_many(ious: np.ndarray) -> np.ndarray:
    ious = np.asarray(ious, dtype=float)
    return np.maximum(0, N_REWARD_BINS - 1 - np.floor(N_REWARD_BINS * ious)).astype(np.int64)


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")


def bin_logits(counts, indices, tau: float) -> np.ndarray:
    return np.log(np.asarray(counts, dtype=float)) - np.asarray(indices, dtype=float) / tau


def bin_payoff(bins: PayoffBins | Mapping[int, int], tau: float) -> DiscreteDistribution:
    """Distribution over occupied reward indices, ``p(i) ∝ |bin_i| * exp(-i / tau)``.

    ``bins`` may be a :class:`PayoffBins` or a plain ``{index: count}`` mapping.
    """
    _check_tau(tau)
    if isinstance(bins, PayoffBins):
        keys, counts = bins.keys, bins.counts
    else:
        keys = sorted(int(k) for k in bins)
        counts = np.array([bins[k] for k in keys], dtype=np.int64)
    if len(keys) == 0:
        raise ValueError("no bins to weight")
    if np.any(np.asarray(counts) <= 0):
        raise ValueError("empty bin in payoff census")
    return DiscreteDistribution(keys, softmax(bin_logits(counts, keys, tau)))


def exact_payoff(gt, candidates: Sequence, rewards: Sequence[float], tau: float) -> DiscreteDistribution:
    """``q(c) = exp(r(gt, c) / tau) / sum_c' exp(r(gt, c') / tau)`` over a finite candidate set.

    ``gt`` is carried for symmetry with the reward signature; the rewards
    are assumed to have been computed against it.
    """
    _check_tau(tau)
    if len(candidates) == 0:
        raise ValueError("empty candidate set")
    if len(rewards) != len(candidates):
        raise ValueError("rewards and candidates are misaligned")
    return DiscreteDistribution(candidates, softmax(np.asarray(rewards, dtype=float) / tau))


def _probs(d) -> np.ndarray:
    return d.probs if isinstance(d, DiscreteDistribution) else np.asarray(d, dtype=float)


def entropy(d) -> float:
    p = _probs(d)
    nz = p > 0
    return float(-np.sum(p[nz] * np.log(p[nz])))


def kl(q, p) -> float:
    """KL(q || p) in nats. Both arguments share a support; ``p`` must cover ``q``."""
    if isinstance(q, DiscreteDistribution) and isinstance(p, DiscreteDistribution):
        if q.support != p.support:
            raise ValueError("support mismatch")
    qa, pa = _probs(q), _probs(p)
    if qa.shape != pa.shape:
        raise ValueError("support mismatch")
    nz = qa > 0
    if np.any(pa[nz] <= 0):
        raise ValueError("q puts mass where p is zero")
    return float(max(0.0, np.sum(qa[nz] * (np.log(qa[nz]) - np.log(pa[nz])))))
