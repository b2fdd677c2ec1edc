"""Neighborhood-based detection and relabeling of noisy train labels.

A train node is suspect when the most common effective label among its
neighbors disagrees with its own working label. Among the neighbors
carrying that majority label, the fraction whose embedding cosine
similarity to the node exceeds gamma is the consistency score; the label
is rewritten to the majority only when the score strictly exceeds omega.
All per-node decisions are made against a snapshot of the working labels
and committed together at the end of the pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .errors import ContractError, ValidationError
from .graph import UNLABELED, Graph, LabelStore, neighbors

KEPT = "kept"
RELABELED = "relabeled"
SKIPPED = "skipped"


@dataclass(frozen=True)
class CorrectionConfig:
    gamma: float = 0.8
    omega: float = 0.8

    def validate(self) -> None:
        if not -1.0 < self.gamma <= 1.0:
            raise ValidationError(f"gamma must be in (-1, 1], got {self.gamma}")
        if not 0.0 <= self.omega <= 1.0:
            raise ValidationError(f"omega must be in [0, 1], got {self.omega}")


@dataclass(frozen=True)
class CorrectionRecord:
    node: int
    majority: int | None
    score: float | None
    verdict: str
    old_label: int
    new_label: int

    def to_json(self) -> dict:
        return asdict(self)


def effective_labels(labels: LabelStore, q: np.ndarray) -> np.ndarray:
    """Working label where one exists, otherwise the model argmax class.

    Ties in the argmax resolve to the smallest class id. Refreshes the
    ``pseudo`` field of the store for unlabeled nodes as a side effect.
    """
    q = np.asarray(q)
    if q.ndim != 2 or q.shape != (labels.num_nodes, labels.num_classes):
        raise ContractError(
            f"predictions of shape {q.shape} do not match {labels.num_nodes} nodes"
            f" x {labels.num_classes} classes")
    pseudo = np.argmax(q, axis=1).astype(np.int64)
    unlabeled = ~labels.train_mask
    labels.pseudo[unlabeled] = pseudo[unlabeled]
    labels.pseudo[labels.train_mask] = UNLABELED
    return np.where(labels.train_mask, labels.working, pseudo)


def majority_label(i: int, g: Graph, ystar: np.ndarray) -> int | None:
    """Most common effective label among i's neighbors; None when isolated."""
    nbrs = neighbors(g, i)
    if nbrs.size == 0:
        return None
    counts = np.bincount(ystar[nbrs])
    return int(np.argmax(counts))


def similarity_consistency(i: int, c_i: int, g: Graph, h: np.ndarray,
                           ystar: np.ndarray, gamma: float) -> float:
    """Fraction of majority-labeled neighbors with cosine similarity above gamma.

    ``h`` rows must already be L2-normalized, so similarity is a dot product.
    """
    if c_i is None:
        raise ContractError("similarity_consistency: majority label undefined")
    nbrs = neighbors(g, i)
    carriers = nbrs[ystar[nbrs] == c_i]
    if carriers.size == 0:
        raise ContractError(
            f"similarity_consistency: no neighbor of {i} carries class {c_i}")
    sims = h[carriers] @ h[i]
    return float(np.count_nonzero(sims > gamma)) / carriers.size


def correct_labels(labels: LabelStore, g: Graph, h: np.ndarray, q: np.ndarray,
                   cfg: CorrectionConfig):
    """One correction round over all train nodes.

    Returns the updated store (new working labels) and the per-node audit
    records. Observed and clean labels are never modified.
    """
    cfg.validate()
    if g.num_nodes != labels.num_nodes:
        raise ContractError("graph and label store disagree on node count")
    ystar = effective_labels(labels, q)
    records = []
    new_working = labels.working.copy()
    for i in np.flatnonzero(labels.train_mask):
        i = int(i)
        old = int(labels.working[i])
        c_i = majority_label(i, g, ystar)
        if c_i is None:
            records.append(CorrectionRecord(i, None, None, SKIPPED, old, old))
            continue
        if c_i == old:
            records.append(CorrectionRecord(i, c_i, None, KEPT, old, old))
            continue
        score = similarity_consistency(i, c_i, g, h, ystar, cfg.gamma)
        if score > cfg.omega:
            new_working[i] = c_i
            records.append(CorrectionRecord(i, c_i, score, RELABELED, old, c_i))
        else:
            records.append(CorrectionRecord(i, c_i, score, KEPT, old, old))
    out = labels.copy()
    out.working = new_working
    out.validate()
    return out, records


def append_audit(path, records) -> None:
    """Append one JSON object per record to a corrections.jsonl audit log."""
    with open(path, "a", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
