"""scikit-learn style wrappers around the sampler and the toy coordinate model."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .geometry import iou_many
from .sampler import AugmentationConfig, derive_stream, sample_boxes
from .toytrainer.model import greedy_decode, init_params
from .toytrainer.screens import N_TOKENS, SLOTS_PER_ELEMENT, decode_box
from .toytrainer.train import LOSS_KINDS, index_stream, replica_targets, sgd


def check_boxes(X, *, name: str = "X") -> np.ndarray:
    """Validate an ``(n, 4)`` array of normalized, non-degenerate boxes."""
    X = check_array(X, dtype=float, ensure_min_samples=1)
    if X.shape[1] != 4:
        raise ValueError(f"{name} must have 4 columns (x0, y0, x1, y1), got {X.shape[1]}")
    if np.any(X < 0) or np.any(X > 1):
        raise ValueError(f"{name} coordinates must lie in [0, 1]")
    if np.any(X[:, 2] <= X[:, 0]) or np.any(X[:, 3] <= X[:, 1]):
        raise ValueError(f"{name} contains degenerate boxes (need x0 < x1 and y0 < y1)")
    return X


def check_box_targets(Y, n_samples: int) -> np.ndarray:
    """Validate flat ``(n, 4L)`` targets and reshape to ``(n, L, 4)``."""
    Y = check_array(Y, dtype=float)
    if Y.shape[0] != n_samples:
        raise ValueError(f"X has {n_samples} rows but Y has {Y.shape[0]}")
    if Y.shape[1] % 4:
        raise ValueError("Y must have 4 columns per element")
    check_boxes(Y.reshape(-1, 4), name="Y")
    return Y.reshape(n_samples, -1, 4)


class IoUAugmenter(TransformerMixin, BaseEstimator):
    """Replace each box with one draw from its binned IoU payoff.

    ``transform`` is deterministic given ``random_state``: row ``i`` uses the
    stream for record ``i``, element 0, replica ``replica``.
    """

    def __init__(self, epsilon=0.02, n_trials=10000, tau=3.0, strategy="iaml",
                 random_state=0, replica=1):
        self.epsilon = epsilon
        self.n_trials = n_trials
        self.tau = tau
        self.strategy = strategy
        self.random_state = random_state
        self.replica = replica

    def _config(self, k=2) -> AugmentationConfig:
        return AugmentationConfig(epsilon=self.epsilon, n_trials=self.n_trials, tau=self.tau,
                                  k_replicas=k, master_seed=int(self.random_state or 0),
                                  strategy=self.strategy)

    def fit(self, X, y=None):
        X = check_boxes(X)
        self.config_ = self._config()
        self.n_features_in_ = X.shape[1]
        return self

    def _draw(self, X, replica):
        out = np.empty_like(X)
        for i, row in enumerate(X):
            rng = derive_stream(self.config_.master_seed, i, 0, replica)
            out[i] = sample_boxes(row, self.config_, rng, 1)[0]
        return out

    def transform(self, X):
        check_is_fitted(self, "config_")
        return self._draw(check_boxes(X), self.replica)

    def replicate(self, X, k=4):
        """``(k, n, 4)``: the original boxes followed by ``k - 1`` augmented copies."""
        check_is_fitted(self, "config_")
        X = check_boxes(X)
        return np.stack([X] + [self._draw(X, r) for r in range(1, k)])


class ToyCoordinateRegressor(BaseEstimator):
    """Autoregressive token model mapping features to ``L`` boxes, fit by SGD.

    ``Y`` holds ``4L`` normalized coordinates per row. ``loss`` selects the
    replica targets: ``mle``, ``iaml``, ``weighted`` or ``random-noise``.
    """

    def __init__(self, loss="mle", k_replicas=4, tau=3.0, epsilon=0.02, n_trials=10000,
                 rounds=30, learning_rate=0.02, batch_size=32, hidden=64, embed=16,
                 random_state=0):
        self.loss = loss
        self.k_replicas = k_replicas
        self.tau = tau
        self.epsilon = epsilon
        self.n_trials = n_trials
        self.rounds = rounds
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.hidden = hidden
        self.embed = embed
        self.random_state = random_state

    def fit(self, X, Y):
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        X = check_array(X, dtype=float)
        boxes = check_box_targets(Y, X.shape[0])
        seed = int(self.random_state or 0)
        aug = AugmentationConfig(epsilon=self.epsilon, n_trials=self.n_trials, tau=self.tau,
                                 k_replicas=self.k_replicas, master_seed=seed)
        tokens, weights = replica_targets(boxes, self.loss, aug, range(len(X)))
        self.params_ = init_params(X.shape[1], tokens.shape[2], self.hidden, N_TOKENS,
                                   seed=seed, embed=self.embed)
        order, reps = index_stream(len(X), self.rounds, self.k_replicas, seed)
        self.n_steps_, self.log_ = sgd(self.params_, X, tokens, weights, order, reps,
                                       learning_rate=self.learning_rate,
                                       batch_size=self.batch_size, seed=seed)
        self.n_features_in_ = X.shape[1]
        self.n_elements_ = boxes.shape[1]
        return self

    def predict_tokens(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return greedy_decode(self.params_, X)

    def predict(self, X) -> np.ndarray:
        tokens = self.predict_tokens(X)
        out = np.empty((len(tokens), self.n_elements_ * 4))
        for i, row in enumerate(tokens):
            for j in range(self.n_elements_):
                seg = row[j * SLOTS_PER_ELEMENT:(j + 1) * SLOTS_PER_ELEMENT]
                out[i, 4 * j:4 * j + 4] = decode_box(seg).as_array()
        return out

    def score(self, X, Y, threshold=0.5) -> float:
        """Fraction of predicted boxes whose IoU with their target reaches ``threshold``."""
        pred = self.predict(X).reshape(-1, 4)
        gt = check_box_targets(Y, len(pred) // self.n_elements_).reshape(-1, 4)
        hits = [iou_many(g, p[None])[0] >= threshold for p, g in zip(pred, gt)]
        return float(np.mean(hits))
