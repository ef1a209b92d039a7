"""Autoregressive categorical model over coordinate tokens.

Per example the screen is encoded once, ``z = tanh(x @ W1 + b1)``. Slot ``s``
forms a state ``g_s = z @ A[s] + P[s] + c(y_{s-1}) * U[s]``, where ``c`` maps
the previous token to its centered coordinate value (0 before the first
slot), and scores every token with an output embedding shared by all slots:
``logits_s = g_s @ O + bo[s]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PARAM_NAMES = ("W1", "b1", "A", "P", "U", "O", "bo")


@dataclass
class ToyModelParams:
    W1: np.ndarray
    b1: np.ndarray
    A: np.ndarray
    P: np.ndarray
    U: np.ndarray
    O: np.ndarray
    bo: np.ndarray

    @property
    def n_slots(self) -> int:
        return self.P.shape[0]

    @property
    def n_tokens(self) -> int:
        return self.O.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def copy(self) -> "ToyModelParams":
        return ToyModelParams(**{k: v.copy() for k, v in self.arrays().items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.arrays().values()])

    def set_flat(self, vec: np.ndarray) -> None:
        i = 0
        for v in self.arrays().values():
            v[...] = vec[i:i + v.size].reshape(v.shape)
            i += v.size

    def to_json(self) -> str:
        """Named arrays as ``{name: {"shape": [...], "data": [...]}}``; floats round-trip exactly."""
        return json.dumps({k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                           for k, v in self.arrays().items()}) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ToyModelParams":
        d = json.loads(text)
        return cls(**{k: np.array(d[k]["data"], dtype=float).reshape(d[k]["shape"])
                      for k in PARAM_NAMES})

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ToyModelParams":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def init_params(n_features: int, n_slots: int, hidden: int = 64, n_tokens: int = 100,
                seed: int = 0, scale: float = 1.0, embed: int = 32) -> ToyModelParams:
    rng = np.random.default_rng(seed)
    return ToyModelParams(
        W1=rng.normal(0.0, scale / np.sqrt(n_features), size=(n_features, hidden)),
        b1=np.zeros(hidden),
        A=rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(n_slots, hidden, embed)),
        P=np.zeros((n_slots, embed)),
        U=rng.normal(0.0, 0.1, size=(n_slots, embed)),
        O=rng.normal(0.0, 1.0 / np.sqrt(embed), size=(embed, n_tokens)),
        bo=np.zeros((n_slots, n_tokens)),
    )


def zeros_like(params: ToyModelParams) -> ToyModelParams:
    return ToyModelParams(**{k: np.zeros_like(v) for k, v in params.arrays().items()})


def prev_values(tokens: np.ndarray, n_tokens: int) -> np.ndarray:
    """Centered value of each slot's previous token; 0 for the first slot."""
    c = np.zeros(tokens.shape)
    c[:, 1:] = (tokens[:, :-1] + 0.5) / n_tokens - 0.5
    return c


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _encode(params, x):
    return np.tanh(x @ params.W1 + params.b1)


def _forward(params, x, c):
    z = _encode(params, x)
    # (b, h) @ (s, h, e) -> (s, b, e) -> (b, s, e)
    g = np.matmul(z, params.A).transpose(1, 0, 2) + params.P + c[:, :, None] * params.U
    logits = g @ params.O + params.bo
    return z, g, logits


def slot_log_probs(params: ToyModelParams, x, tokens) -> np.ndarray:
    """Teacher-forced log-probabilities, shape ``(batch, slots, tokens)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    _, _, logits = _forward(params, x, prev_values(tokens, params.n_tokens))
    return _log_softmax(logits)


def sequence_nll(params: ToyModelParams, x, tokens) -> np.ndarray:
    """Per-example ``-sum_s log p(y_s | x, y_<s)``."""
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    logp = slot_log_probs(params, x, tokens)
    b, s = np.indices(tokens.shape)
    return -logp[b, s, tokens].sum(axis=1)


def nll(params: ToyModelParams, x, tokens) -> float:
    return float(sequence_nll(params, x, tokens)[0])


def weighted_nll_and_grad(params: ToyModelParams, x, tokens, weights=None):
    """``mean_b w_b * nll_b`` and its gradient as a :class:`ToyModelParams`."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    nb = tokens.shape[0]
    w = np.ones(nb) if weights is None else np.asarray(weights, dtype=float)
    c = prev_values(tokens, params.n_tokens)
    z, g, logits = _forward(params, x, c)
    logp = _log_softmax(logits)
    bi, si = np.indices(tokens.shape)
    per_example = -logp[bi, si, tokens].sum(axis=1)
    loss = float(np.dot(w, per_example) / nb)

    dlogits = np.exp(logp)
    dlogits[bi, si, tokens] -= 1.0
    dlogits *= (w / nb)[:, None, None]
    grad = zeros_like(params)
    e = g.shape[2]
    grad.O = g.reshape(-1, e).T @ dlogits.reshape(-1, params.n_tokens)
    grad.bo = dlogits.sum(axis=0)
    dg = dlogits @ params.O.T
    grad.P = dg.sum(axis=0)
    grad.U = np.einsum("bs,bse->se", c, dg)
    dg_sm = dg.transpose(1, 0, 2)
    grad.A = np.matmul(z.T, dg_sm)
    dz = np.matmul(dg_sm, params.A.transpose(0, 2, 1)).sum(axis=0)
    da = dz * (1.0 - z * z)
    grad.W1 = x.T @ da
    grad.b1 = da.sum(axis=0)
    return loss, grad


def greedy_decode(params: ToyModelParams, x) -> np.ndarray:
    """Argmax decoding where each slot conditions on the model's own previous token."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    z = _encode(params, x)
    out = np.empty((x.shape[0], params.n_slots), dtype=np.int64)
    c = np.zeros(x.shape[0])
    for s in range(params.n_slots):
        g = z @ params.A[s] + params.P[s] + c[:, None] * params.U[s]
        tok = (g @ params.O + params.bo[s]).argmax(axis=1)
        out[:, s] = tok
        c = (tok + 0.5) / params.n_tokens - 0.5
    return out
