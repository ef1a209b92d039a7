"""IoU-based Monte Carlo coordinate sampling and element/sequence augmentation.

For a ground-truth box, ``n_trials`` perturbations with independent
``U(-epsilon, epsilon)`` offsets on each coordinate are clamped to the unit
square (degenerate results are redrawn), binned by reward index, and one box
is returned by choosing a bin with probability ``∝ count * exp(-index / tau)``
and then a member of that bin uniformly.

Every random decision is drawn from a stream derived from
``(master_seed, record_idx, element_idx, replica_idx)``, so augmenting a
dataset is a pure function of its contents and the config.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from ._census import OUT_OF_BITS, census_draws
from .geometry import BBox, RawBBox, clamp_boxes, iou_many
from .payoff import N_REWARD_BINS, PayoffBins, bin_payoff, reward_index_many

if TYPE_CHECKING:
    from .dataset import UIElement

STRATEGIES = ("iaml", "random")
_MAX_ATTEMPT_FACTOR = 10
_CHUNK_ELEMENTS = 1_000_000


class SamplingError(RuntimeError):
    """Too few valid perturbations could be produced for a box."""


@dataclass(frozen=True)
class AugmentationConfig:
    epsilon: float = 0.02
    n_trials: int = 10_000
    tau: float = 3.0
    k_replicas: int = 4
    master_seed: int = 0
    strategy: str = "iaml"

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if int(self.n_trials) < 1:
            raise ValueError(f"n_trials must be >= 1, got {self.n_trials}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if int(self.k_replicas) < 1:
            raise ValueError(f"k_replicas must be >= 1, got {self.k_replicas}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "AugmentationConfig":
        return dataclasses.replace(self, **changes)


def derive_stream(master_seed: int, record_idx: int = 0, element_idx: int = 0,
                  replica_idx: int = 0) -> np.random.Generator:
    """Independent generator for one index tuple, stable across runs and platforms."""
    key = [int(master_seed) & 0xFFFFFFFFFFFFFFFF, int(record_idx), int(element_idx), int(replica_idx)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


def perturb(b, epsilon: float, rng: np.random.Generator) -> RawBBox:
    delta = rng.uniform(-epsilon, epsilon, size=4)
    return RawBBox(*(np.asarray(tuple(b), dtype=float) + delta).tolist())


def _fill_invalid(ref, epsilon, n_trials, rng, boxes, valid):
    """Redraw the invalid rows of one ``(n_trials, 4)`` pool in place."""
    holes = np.flatnonzero(~valid)
    attempts = n_trials
    budget = _MAX_ATTEMPT_FACTOR * n_trials
    while holes.size:
        if attempts >= budget:
            raise SamplingError(
                f"only {n_trials - holes.size} of {n_trials} valid perturbations "
                f"after {attempts} attempts (epsilon={epsilon})")
        n_new = min(max(2 * holes.size, 64), budget - attempts)
        attempts += n_new
        fresh, ok = clamp_boxes(ref + rng.uniform(-epsilon, epsilon, size=(n_new, 4)))
        fresh = fresh[ok][: holes.size]
        boxes[holes[: len(fresh)]] = fresh
        holes = holes[len(fresh):]


def perturbation_pool(b, epsilon: float, n_trials: int, rng: np.random.Generator) -> np.ndarray:
    """``n_trials`` valid clamped perturbations of ``b`` as an ``(n_trials, 4)`` array."""
    ref = np.asarray(tuple(b), dtype=float)
    boxes, valid = clamp_boxes(ref + rng.uniform(-epsilon, epsilon, size=(n_trials, 4)))
    if not valid.all():
        _fill_invalid(ref, epsilon, n_trials, rng, boxes, valid)
    return boxes


def build_bins(b, epsilon: float, n_trials: int, rng: np.random.Generator) -> PayoffBins:
    pool = perturbation_pool(b, epsilon, n_trials, rng)
    return PayoffBins.from_indices(pool, reward_index_many(iou_many(b, pool)))


def draw_from_bins(bins: PayoffBins, tau: float, rng: np.random.Generator,
                   size: int | None = None) -> np.ndarray:
    """Pick a bin from the payoff distribution, then a member uniformly.

    Returns one ``(4,)`` box, or ``(size, 4)`` boxes when ``size`` is given.
    """
    dist = bin_payoff(bins, tau)
    n = 1 if size is None else size
    which = rng.choice(len(dist), size=n, p=dist.probs)
    counts = bins.counts
    members = np.floor(rng.random(n) * counts[which]).astype(np.int64)
    members = np.minimum(members, counts[which] - 1)
    groups = list(bins.bins.values())
    out = np.array([groups[w][m] for w, m in zip(which, members)])
    return out[0] if size is None else out


def sample_boxes(b, cfg: AugmentationConfig, rng: np.random.Generator, size: int,
                 *, epsilon: float | None = None) -> np.ndarray:
    """``size`` independent augmentation draws for one box, as a ``(size, 4)`` array.

    Each draw runs its own ``cfg.n_trials``-perturbation census; the loop is
    compiled, and offsets carry 32 bits of resolution.
    """
    eps = cfg.epsilon if epsilon is None else float(epsilon)
    if not 0.0 < eps < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {eps}")
    ref = np.asarray(tuple(b), dtype=float)
    if cfg.strategy == "random":
        return _sample_random(ref, eps, rng, size)

    n = int(cfg.n_trials)
    weights = np.exp(-np.arange(N_REWARD_BINS) / cfg.tau)
    out = np.empty((size, 4))
    choice_u = rng.random((size, 2))
    max_attempts = _MAX_ATTEMPT_FACTOR * n
    chunk = max(1, _CHUNK_ELEMENTS // n)
    d = 0
    slack = n // 8 + 64
    while d < size:
        m = min(chunk, size - d)
        # two words per perturbation, with slack for redrawn invalid boxes
        bits = rng.bit_generator.random_raw(2 * (m * n + slack))
        status, nd = census_draws(ref, eps, n, weights, bits, choice_u, max_attempts,
                                  out[: d + m], d)
        if status == OUT_OF_BITS and nd == d:
            # a single census outran the buffer; widen it up to the attempt budget
            slack = min(2 * slack + n, max_attempts)
        d = nd
        if status >= 0:
            raise SamplingError(
                f"fewer than {n} valid perturbations after {max_attempts} attempts "
                f"(epsilon={eps})")
    return out


def _sample_random(ref, eps, rng, size):
    # Uniform over valid perturbations: the first valid draw has that law.
    out, valid = clamp_boxes(ref + rng.uniform(-eps, eps, size=(size, 4)))
    for _ in range(_MAX_ATTEMPT_FACTOR * 100):
        bad = np.flatnonzero(~valid)
        if not bad.size:
            return out
        out[bad], valid[bad] = clamp_boxes(ref + rng.uniform(-eps, eps, size=(bad.size, 4)))
    raise SamplingError(f"could not produce a valid perturbation (epsilon={eps})")


def augment_bbox(b: BBox, cfg: AugmentationConfig, rng: np.random.Generator,
                 *, epsilon: float | None = None) -> BBox:
    return BBox.from_seq(sample_boxes(b, cfg, rng, 1, epsilon=epsilon)[0])


def augment_element(e: "UIElement", cfg: AugmentationConfig, rng: np.random.Generator) -> "UIElement":
    """Replace the element's box by one augmentation draw.

    With ``k_replicas == 1`` there are no augmented replicas and the element
    is returned unchanged. A per-element ``epsilon`` overrides the config.
    """
    if cfg.k_replicas == 1:
        return e
    box = augment_bbox(e.bbox, cfg, rng, epsilon=e.epsilon)
    return dataclasses.replace(e, bbox=box)


def augment_sequence(elems: Sequence["UIElement"], cfg: AugmentationConfig,
                     rng: np.random.Generator | None = None, *,
                     record_idx: int = 0, replica_idx: int = 1) -> list["UIElement"]:
    """Augment every element with its own stream, preserving order.

    Streams come from ``rng.spawn`` when a generator is passed, otherwise from
    :func:`derive_stream` on ``(cfg.master_seed, record_idx, i, replica_idx)``.
    """
    if rng is not None:
        streams = rng.spawn(len(elems))
    else:
        streams = [derive_stream(cfg.master_seed, record_idx, i, replica_idx)
                   for i in range(len(elems))]
    return [augment_element(e, cfg, s) for e, s in zip(elems, streams)]


def replicate(elems: Sequence["UIElement"], cfg: AugmentationConfig,
              record_idx: int) -> list[list["UIElement"]]:
    """``cfg.k_replicas`` element lists: the original first, then augmented copies."""
    reps = [list(elems)]
    for r in range(1, cfg.k_replicas):
        reps.append(augment_sequence(elems, cfg, record_idx=record_idx, replica_idx=r))
    return reps
