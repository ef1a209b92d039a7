"""Synthetic screens and coordinate tokenization for the toy model."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..dataset import AnnotationRecord, UIElement
from ..geometry import BBox

ELEMENT_TYPES = ("button", "text", "icon")
N_TOKENS = 100
SIZE_RANGE = (0.05, 0.4)
SLOTS_PER_ELEMENT = 4


@dataclass(frozen=True)
class SyntheticScreen:
    """One screen: noisy per-element cues plus the true elements.

    ``features`` concatenates, per element, a type one-hot and the noisy
    ``(cx, cy, w, h)`` of its box.
    """

    features: np.ndarray
    gt_elements: tuple
    seed: int
    index: int

    @property
    def record_id(self) -> str:
        return f"toy-{self.seed}-{self.index}"

    @property
    def elements(self) -> tuple:
        return self.gt_elements

    def to_record(self) -> AnnotationRecord:
        return AnnotationRecord(record_id=self.record_id, elements=self.gt_elements,
                                image_ref=f"synthetic://{self.seed}/{self.index}")


def feature_dim(elements_per_screen: int, n_types: int = len(ELEMENT_TYPES)) -> int:
    return elements_per_screen * (n_types + 4)


def _random_box(rng: np.random.Generator) -> BBox:
    w, h = rng.uniform(*SIZE_RANGE, size=2)
    x0 = rng.uniform(0.0, 1.0 - w)
    y0 = rng.uniform(0.0, 1.0 - h)
    return BBox(x0, y0, min(1.0, x0 + w), min(1.0, y0 + h))


def screen_features(elements, noise: float, rng: np.random.Generator) -> np.ndarray:
    parts = []
    for e in elements:
        onehot = np.zeros(len(ELEMENT_TYPES))
        onehot[ELEMENT_TYPES.index(e.element_type)] = 1.0
        b = e.bbox
        cues = np.array([(b.x_min + b.x_max) / 2, (b.y_min + b.y_max) / 2, b.width, b.height])
        if noise > 0:
            cues = cues + rng.normal(0.0, noise, size=4)
        parts.extend([onehot, cues])
    return np.concatenate(parts)


def gen_screens(n: int, elements_per_screen: int = 3, noise: float = 0.05,
                seed: int = 0) -> list[SyntheticScreen]:
    if n < 1 or elements_per_screen < 1:
        raise ValueError("need n >= 1 and elements_per_screen >= 1")
    rng = np.random.default_rng(seed)
    screens = []
    for i in range(n):
        elems = tuple(
            UIElement(element_type=ELEMENT_TYPES[rng.integers(len(ELEMENT_TYPES))],
                      bbox=_random_box(rng), description=f"element {j}")
            for j in range(elements_per_screen))
        screens.append(SyntheticScreen(screen_features(elems, noise, rng), elems, seed, i))
    return screens


def encode_value(v: float, n_tokens: int = N_TOKENS) -> int:
    # the 1e-9 guard keeps decimal inputs such as 0.29 in their own bin
    return min(n_tokens - 1, max(0, math.floor(n_tokens * v + 1e-9)))


def decode_value(t: int, n_tokens: int = N_TOKENS) -> float:
    return (t + 0.5) / n_tokens


def encode_box(b, n_tokens: int = N_TOKENS) -> tuple[int, int, int, int]:
    return tuple(encode_value(v, n_tokens) for v in b)


def encode_boxes(boxes: np.ndarray, n_tokens: int = N_TOKENS) -> np.ndarray:
    t = np.floor(np.asarray(boxes, dtype=float) * n_tokens + 1e-9).astype(np.int64)
    return np.clip(t, 0, n_tokens - 1)


def decode_box(tokens, n_tokens: int = N_TOKENS) -> BBox:
    """Token centers back to a box.

    Swapped min/max tokens are reordered; equal tokens are widened by one bin
    upward (downward at the last bin) so the result always has positive area.
    """
    t = [int(v) for v in tokens]
    for lo, hi in ((0, 2), (1, 3)):
        if t[hi] < t[lo]:
            t[lo], t[hi] = t[hi], t[lo]
        if t[hi] == t[lo]:
            if t[hi] < n_tokens - 1:
                t[hi] += 1
            else:
                t[lo] -= 1
    return BBox(*(decode_value(v, n_tokens) for v in t))


def screen_tokens(elements, n_tokens: int = N_TOKENS) -> np.ndarray:
    return np.array([tok for e in elements for tok in encode_box(e.bbox, n_tokens)], dtype=np.int64)
