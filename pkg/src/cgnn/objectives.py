"""Training losses: cross-view contrastive regularizer and supervised CE.

The contrastive term treats the two augmented embeddings of a node as a
positive pair and every cross-view pair with the other nodes as negatives,
normalized by a temperature-scaled softmax over all N cross-view
similarities (the positive included). Cosine similarity is used, so inputs
are row-normalized internally and callers may pass raw or pre-normalized
embeddings interchangeably.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError
from .tensor import Tensor

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.5
    contrastive_weight: float = 1.0

    def validate(self) -> None:
        if self.temperature <= 0:
            raise ContractError(f"temperature must be positive, got {self.temperature}")
        if self.contrastive_weight < 0:
            raise ContractError(
                f"contrastive_weight must be non-negative, got {self.contrastive_weight}")


def _check_views(h1: Tensor, h2: Tensor):
    if h1.values.ndim != 2 or h1.shape != h2.shape:
        raise ContractError(f"views must share an N x e shape, got {h1.shape} and {h2.shape}")


def _cross_view_probs(h1: Tensor, h2: Tensor, tau: float) -> Tensor:
    """Row i = softmax over j of sim(h1_i, h2_j) / tau."""
    u1 = T.normalize_rows(h1)
    u2 = T.normalize_rows(h2)
    sims = T.matmul(u1, T.transpose(u2))
    return T.softmax_rows(T.scale(sims, 1.0 / tau))


def _mean_diag_log(probs: Tensor) -> Tensor:
    n = probs.shape[0]
    eye = Tensor(np.eye(n, dtype=probs.values.dtype))
    ones = Tensor(np.ones((n, 1), dtype=probs.values.dtype))
    diag = T.matmul(T.multiply(probs, eye), ones)
    return T.masked_mean(T.log(diag), np.ones(n, dtype=bool))


def ntxent_pair(i: int, h1: Tensor, h2: Tensor, tau: float) -> Tensor:
    """Contrastive loss of node i's positive pair against all N cross-view pairs."""
    _check_views(h1, h2)
    if tau <= 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    n = h1.shape[0]
    if not 0 <= i < n:
        raise ContractError(f"node id {i} out of range [0, {n})")
    u1 = T.normalize_rows(h1)
    u2 = T.normalize_rows(h2)
    row = T.matmul(T.gather_rows(u1, [i]), T.transpose(u2))
    probs = T.softmax_rows(T.scale(row, 1.0 / tau))
    pick = np.zeros((1, n), dtype=probs.values.dtype)
    pick[0, i] = 1.0
    target = T.matmul(T.multiply(probs, Tensor(pick)), Tensor(np.ones((n, 1), dtype=probs.values.dtype)))
    return T.scale(T.masked_mean(T.log(target), np.ones(1, dtype=bool)), -1.0)


def contrastive_loss(h1: Tensor, h2: Tensor, tau: float) -> Tensor:
    """Mean of both directed per-node terms over all N nodes."""
    _check_views(h1, h2)
    if tau <= 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    p12 = _cross_view_probs(h1, h2, tau)
    p21 = _cross_view_probs(h2, h1, tau)
    both = T.add(_mean_diag_log(p12), _mean_diag_log(p21))
    return T.scale(both, -0.5)


def supervised_loss(q: Tensor, working: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean negative log-probability of the working label over masked nodes."""
    mask = np.asarray(mask, dtype=bool)
    if q.values.ndim != 2 or mask.shape != (q.shape[0],):
        raise ContractError(f"mask shape {mask.shape} vs predictions {q.shape}")
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ContractError("supervised_loss: empty mask")
    labels = np.asarray(working, dtype=np.int64)[idx]
    if labels.min() < 0 or labels.max() >= q.shape[1]:
        raise ContractError("supervised_loss: masked node without a valid label")
    qm = T.gather_rows(q, idx)
    onehot = np.zeros((idx.size, q.shape[1]), dtype=q.values.dtype)
    onehot[np.arange(idx.size), labels] = 1.0
    picked = T.matmul(T.multiply(qm, Tensor(onehot)),
                      Tensor(np.ones((q.shape[1], 1), dtype=q.values.dtype)))
    clamped = int(np.sum(picked.values < PROB_FLOOR))
    if clamped:
        logger.warning("supervised_loss: clamped %d zero probabilities at %g",
                       clamped, PROB_FLOOR)
    safe = T.clamp_min(picked, PROB_FLOOR)
    return T.scale(T.masked_mean(T.log(safe), np.ones(idx.size, dtype=bool)), -1.0)


def total_loss(l_cl: Tensor | None, l_sup: Tensor, cfg: LossConfig) -> Tensor:
    """contrastive_weight * L_CL + L_SUP; weight zero (or L_CL None) disables the regularizer."""
    cfg.validate()
    if l_cl is None or cfg.contrastive_weight == 0.0:
        return l_sup
    return T.add(T.scale(l_cl, cfg.contrastive_weight), l_sup)
