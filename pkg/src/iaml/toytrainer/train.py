"""Training and sweeps for the toy coordinate model under the k-replica parity protocol.

MLE visits the original screens ``k`` times per round; IAML visits the ``k``
replicas (original plus ``k - 1`` payoff draws) once per round. Both use the
same shuffled index stream, so step counts and sample positions coincide and
only the target boxes differ.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..dataset import UIElement, subsample
from ..geometry import center, iou_many
from ..metrics import DEFAULT_THRESHOLDS, EvalReport, click_accuracy, evaluate_records
from ..sampler import AugmentationConfig, derive_stream, sample_boxes
from .model import ToyModelParams, greedy_decode, init_params, weighted_nll_and_grad
from .screens import N_TOKENS, SLOTS_PER_ELEMENT, decode_box, encode_boxes, feature_dim, gen_screens

logger = logging.getLogger(__name__)

LOSS_KINDS = ("mle", "iaml", "weighted", "random-noise")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    loss_kind: str = "mle"
    aug: AugmentationConfig = field(default_factory=AugmentationConfig)
    rounds: int = 30
    learning_rate: float = 0.02
    batch_size: int = 32
    hidden: int = 64
    embed: int = 16
    init_scale: float = 1.0
    n_train: int = 2000
    n_test: int = 500
    elements_per_screen: int = 3
    noise: float = 0.05
    fraction: float = 1.0
    seed: int = 0
    thresholds: tuple = DEFAULT_THRESHOLDS
    log_every: int = 50

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.rounds < 1 or self.batch_size < 1 or self.hidden < 1:
            raise ValueError("rounds, batch_size and hidden must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError("fraction must lie in (0, 1]")
        object.__setattr__(self, "thresholds", tuple(self.thresholds))

    @property
    def k_replicas(self) -> int:
        return self.aug.k_replicas

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["thresholds"] = list(self.thresholds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("aug"), dict):
            d["aug"] = AugmentationConfig(**d["aug"])
        return cls(**d)


@dataclass
class TrainResult:
    params: ToyModelParams
    report: EvalReport
    log: list[dict]
    steps: int
    click_accuracy: float
    seconds: float = 0.0

    def f1(self, threshold: float = 0.5) -> float:
        return self.report.entry(threshold).f1

    def log_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.log)


def _seed(seed: int, tag: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, tag])


def make_data(cfg: TrainConfig):
    """Training subset and held-out screens for one seed."""
    data_seed = int(_seed(cfg.seed, 1).generate_state(1)[0])
    test_seed = int(_seed(cfg.seed, 2).generate_state(1)[0])
    train = gen_screens(cfg.n_train, cfg.elements_per_screen, cfg.noise, data_seed)
    test = gen_screens(cfg.n_test, cfg.elements_per_screen, cfg.noise, test_seed)
    if cfg.fraction < 1.0:
        train = subsample(train, cfg.fraction, seed=int(_seed(cfg.seed, 3).generate_state(1)[0]))
    return train, test


def replica_boxes(boxes: np.ndarray, aug: AugmentationConfig, record_ids: Sequence[int],
                  strategy: str = "iaml") -> np.ndarray:
    """``(k, n, L, 4)`` target boxes: replica 0 is ``boxes``, the rest are payoff draws.

    Element ``j`` of record ``record_ids[i]`` in replica ``r`` draws from the
    stream ``derive_stream(aug.master_seed, record_ids[i], j, r)``.
    """
    boxes = np.asarray(boxes, dtype=float)
    k = aug.k_replicas
    out = np.repeat(boxes[None], k, axis=0)
    draw_cfg = aug.replace(strategy=strategy)
    for i, rid in enumerate(record_ids):
        for j in range(boxes.shape[1]):
            for r in range(1, k):
                rng = derive_stream(aug.master_seed, rid, j, r)
                out[r, i, j] = sample_boxes(boxes[i, j], draw_cfg, rng, 1)[0]
    return out


def replica_targets(boxes: np.ndarray, loss_kind: str, aug: AugmentationConfig,
                    record_ids: Sequence[int], n_tokens: int = N_TOKENS):
    """Token targets ``(k, n, 4L)`` and sequence weights ``(k, n)`` for a loss kind.

    ``mle`` repeats the originals; ``iaml`` uses payoff draws; ``random-noise``
    uses uniform valid perturbations; ``weighted`` uses uniform perturbations
    weighted by their mean element IoU with the original.
    """
    boxes = np.asarray(boxes, dtype=float)
    k, n = aug.k_replicas, boxes.shape[0]
    if loss_kind == "mle" or k == 1:
        reps = np.repeat(boxes[None], k, axis=0)
    else:
        reps = replica_boxes(boxes, aug, record_ids, "iaml" if loss_kind == "iaml" else "random")
    tokens = encode_boxes(reps, n_tokens).reshape(k, n, -1)
    weights = np.ones((k, n))
    if loss_kind == "weighted":
        for r in range(1, k):
            for i in range(n):
                weights[r, i] = np.mean([iou_many(boxes[i, j], reps[r, i, j][None])[0]
                                         for j in range(boxes.shape[1])])
    return tokens, weights


def screen_boxes(screens) -> np.ndarray:
    return np.array([[list(e.bbox) for e in s.gt_elements] for s in screens])


def index_stream(n: int, rounds: int, k: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Shuffled ``(screen, replica)`` visit order shared by every method.

    Round by round, pass ``r`` over a fresh permutation uses replica ``r``;
    MLE's replicas are all the original, so this is ``k`` plain epochs.
    """
    rng = np.random.Generator(np.random.PCG64(_seed(seed, 4)))
    screens, replicas = [], []
    for _ in range(rounds):
        for r in range(k):
            screens.append(rng.permutation(n))
            replicas.append(np.full(n, r))
    return np.concatenate(screens), np.concatenate(replicas)


def n_steps(n: int, cfg: TrainConfig) -> int:
    return math.ceil(cfg.rounds * cfg.k_replicas * n / cfg.batch_size)


def predict_elements(params: ToyModelParams, screens) -> dict:
    x = np.stack([s.features for s in screens])
    tokens = greedy_decode(params, x)
    preds = {}
    for s, row in zip(screens, tokens):
        preds[s.record_id] = [
            UIElement(e.element_type, decode_box(row[j * SLOTS_PER_ELEMENT:(j + 1) * SLOTS_PER_ELEMENT]))
            for j, e in enumerate(s.gt_elements)]
    return preds


def evaluate_model(params: ToyModelParams, screens, thresholds=DEFAULT_THRESHOLDS):
    preds = predict_elements(params, screens)
    report = evaluate_records(preds, screens, thresholds)
    clicks = [(center(p.bbox), g.bbox) for s in screens
              for p, g in zip(preds[s.record_id], s.gt_elements)]
    report.click_accuracy = click_accuracy(clicks)
    return report


def sgd(params: ToyModelParams, x, tokens, weights, order, replicas, *, learning_rate: float,
        batch_size: int, seed: int = 0, log_every: int = 50) -> tuple[int, list[dict]]:
    """Plain minibatch SGD over a precomputed visit order; updates ``params`` in place."""
    log = []
    step = 0
    for start in range(0, len(order), batch_size):
        i = order[start:start + batch_size]
        r = replicas[start:start + batch_size]
        loss, grad = weighted_nll_and_grad(params, x[i], tokens[r, i], weights[r, i])
        if not np.isfinite(loss):
            log.append({"step": step, "loss": None, "seed": seed, "event": "diverged"})
            logger.error("non-finite loss at step %d (seed %d)", step, seed)
            raise TrainingDiverged(f"non-finite loss at step {step} (seed {seed})")
        for name, g in grad.arrays().items():
            getattr(params, name)[...] -= learning_rate * g
        step += 1
        if step % log_every == 0 or start + batch_size >= len(order):
            log.append({"step": step, "loss": round(loss, 6), "seed": seed})
    return step, log


def train(cfg: TrainConfig) -> TrainResult:
    """Fit the toy model with plain minibatch SGD and score it on held-out screens."""
    t0 = time.perf_counter()
    train_set, test_set = make_data(cfg)
    x = np.stack([s.features for s in train_set])
    aug = cfg.aug.replace(master_seed=cfg.seed)
    tokens, weights = replica_targets(screen_boxes(train_set), cfg.loss_kind, aug,
                                      [s.index for s in train_set])
    params = init_params(feature_dim(cfg.elements_per_screen), tokens.shape[2], cfg.hidden,
                         seed=int(_seed(cfg.seed, 5).generate_state(1)[0]),
                         scale=cfg.init_scale, embed=cfg.embed)
    order, reps = index_stream(len(train_set), cfg.rounds, cfg.k_replicas, cfg.seed)
    steps, log = sgd(params, x, tokens, weights, order, reps, learning_rate=cfg.learning_rate,
                     batch_size=cfg.batch_size, seed=cfg.seed, log_every=cfg.log_every)
    report = evaluate_model(params, test_set, cfg.thresholds)
    return TrainResult(params, report, log, steps, report.click_accuracy,
                       time.perf_counter() - t0)


SWEEP_FIELDS = ("method", "tau", "k", "fraction", "threshold", "n_seeds",
                "f1_mean", "f1_sd", "precision_mean", "recall_mean", "click_mean", "steps")


def sweep(base: TrainConfig, *, methods=("mle", "iaml"), taus=(1.0, 3.0, 6.0), ks=(4,),
          fractions=(0.1, 1.0), seeds=5, progress=None, workers: int = 1):
    """Train every (method, tau, k, fraction, seed) cell; return ``(rows, runs)``.

    Methods that ignore tau (``mle``) are trained once per (k, fraction, seed)
    and the result is reported under each tau. ``workers > 1`` trains cells in
    separate processes; every run is seeded by its own cell, so results match.
    """
    seed_list = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    cells = []
    for method in methods:
        for tau in taus:
            for k in ks:
                for frac in fractions:
                    for seed in seed_list:
                        cells.append((method, tau, k, frac, seed))
    configs = {}
    for method, tau, k, frac, seed in cells:
        key = (method, None if method == "mle" else tau, k, frac, seed)
        if key not in configs:
            configs[key] = dataclasses.replace(
                base, loss_kind=method, fraction=frac, seed=seed,
                aug=base.aug.replace(tau=tau, k_replicas=k))
    cache = {}
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            for key, res in zip(configs, pool.map(train, configs.values())):
                cache[key] = res
                if progress:
                    progress(key, res)
    else:
        for key, cfg in configs.items():
            cache[key] = train(cfg)
            if progress:
                progress(key, cache[key])
    runs = []
    for method, tau, k, frac, seed in cells:
        res = cache[(method, None if method == "mle" else tau, k, frac, seed)]
        runs.append({"method": method, "tau": tau, "k": k, "fraction": frac,
                     "seed": seed, "steps": res.steps, "click": res.click_accuracy,
                     **{f"f1@{t:g}": res.f1(t) for t in base.thresholds}, "_result": res})
    rows = []
    for method in methods:
        for tau in taus:
            for k in ks:
                for frac in fractions:
                    cell = [r["_result"] for r in runs if r["method"] == method and r["tau"] == tau
                            and r["k"] == k and r["fraction"] == frac]
                    for t in base.thresholds:
                        f1 = np.array([c.f1(t) for c in cell])
                        rows.append({
                            "method": method, "tau": tau, "k": k, "fraction": frac, "threshold": t,
                            "n_seeds": len(cell), "f1_mean": float(f1.mean()),
                            "f1_sd": float(f1.std(ddof=1)) if len(cell) > 1 else 0.0,
                            "precision_mean": float(np.mean([c.report.entry(t).precision for c in cell])),
                            "recall_mean": float(np.mean([c.report.entry(t).recall for c in cell])),
                            "click_mean": float(np.mean([c.click_accuracy for c in cell])),
                            "steps": cell[0].steps,
                        })
    for r in runs:
        r.pop("_result")
    return rows, runs


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.6f}" if isinstance(v, float) and k not in ("tau", "fraction", "threshold")
                        else v) for k, v in r.items()})
    return buf.getvalue()


def gap(rows, *, threshold=0.5, fraction=0.1, tau=3.0, k=4, method="iaml", baseline="mle") -> float:
    """Mean F1 of ``method`` minus ``baseline`` in one sweep cell."""
    def pick(m):
        for r in rows:
            if (r["method"] == m and r["threshold"] == threshold and r["fraction"] == fraction
                    and r["tau"] == tau and r["k"] == k):
                return r["f1_mean"]
        raise KeyError((m, threshold, fraction, tau, k))
    return pick(method) - pick(baseline)
