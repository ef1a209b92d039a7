"""Exhaustive checks of the per-element KL decomposition and the loss = KL + entropy identity."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..payoff import entropy, kl

MAX_JOINT_OUTCOMES = 10**6


@dataclass(frozen=True)
class DecompositionResidual:
    kl_joint: float
    kl_sum: float
    loss: float
    entropy: float

    @property
    def kl_residual(self) -> float:
        return abs(self.kl_joint - self.kl_sum)

    @property
    def identity_residual(self) -> float:
        return abs(self.loss - (self.kl_joint + self.entropy))


def verify_kl_decomposition(q: Sequence, p) -> DecompositionResidual:
    """Compare the joint KL against per-element KLs by full enumeration.

    ``q`` lists the per-element target distributions (the joint target is
    their product). ``p`` is either a matching list of per-element model
    distributions, or a callable ``p(i, prefix) -> distribution`` giving the
    model's conditional for element ``i`` after outcomes ``prefix``; in that
    case the per-element terms are KLs averaged over the target's prefixes.
    """
    q = [np.asarray(qi, dtype=float) for qi in q]
    sizes = [len(qi) for qi in q]
    n_joint = int(np.prod(sizes, dtype=float))
    if n_joint > MAX_JOINT_OUTCOMES:
        raise ValueError(f"{n_joint} joint outcomes exceed the enumeration limit {MAX_JOINT_OUTCOMES}")
    if callable(p):
        cond: Callable = p
    else:
        fixed = [np.asarray(pi, dtype=float) for pi in p]
        if [len(pi) for pi in fixed] != sizes:
            raise ValueError("support mismatch between q and p")
        cond = lambda i, prefix: fixed[i]  # noqa: E731

    kl_joint = 0.0
    loss = 0.0
    for outcome in itertools.product(*(range(s) for s in sizes)):
        q_joint = 1.0
        log_q = 0.0
        log_p = 0.0
        for i, y in enumerate(outcome):
            q_joint *= q[i][y]
            log_q += np.log(q[i][y]) if q[i][y] > 0 else 0.0
            log_p += np.log(np.asarray(cond(i, outcome[:i]), dtype=float)[y])
        if q_joint > 0:
            kl_joint += q_joint * (log_q - log_p)
            loss -= q_joint * log_p

    kl_sum = 0.0
    for i in range(len(q)):
        for prefix in itertools.product(*(range(s) for s in sizes[:i])):
            weight = float(np.prod([q[j][y] for j, y in enumerate(prefix)]))
            if weight > 0:
                kl_sum += weight * kl(q[i], np.asarray(cond(i, prefix), dtype=float))
    h_joint = sum(entropy(qi) for qi in q)
    return DecompositionResidual(kl_joint, kl_sum, loss, h_joint)


def element_loss(q_i, p_i) -> float:
    """Cross-entropy ``-sum q_i log p_i`` for one element."""
    q_i = np.asarray(q_i, dtype=float)
    p_i = np.asarray(p_i, dtype=float)
    nz = q_i > 0
    return float(-np.sum(q_i[nz] * np.log(p_i[nz])))
