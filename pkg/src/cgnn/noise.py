"""Controlled label corruption and planted-partition synthetic datasets.

Uniform noise re-draws a train node's label uniformly from the other
classes with probability p; pair noise flips it to a designated partner
class (default: cyclic successor). Both start from the clean labels, touch
only train-node observed/working labels, and never modify the clean copy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ValidationError
from .graph import UNLABELED, AttributeMatrix, Dataset, Graph, LabelStore


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "uniform"  # uniform | pair
    rate: float = 0.2
    pair_map: np.ndarray | None = None
    seed: int = 0

    def validate(self, num_classes: int | None = None) -> None:
        if self.kind not in ("uniform", "pair"):
            raise ValidationError(f"unknown noise kind '{self.kind}'")
        if not 0.0 <= self.rate <= 1.0:
            raise ValidationError(f"noise rate must be in [0, 1], got {self.rate}")
        if self.pair_map is not None:
            _check_pair_map(np.asarray(self.pair_map), num_classes)


def _check_pair_map(pair_map: np.ndarray, num_classes: int | None):
    pair_map = np.asarray(pair_map, dtype=np.int64)
    c = pair_map.shape[0]
    if num_classes is not None and c != num_classes:
        raise ContractError(f"pair_map covers {c} classes, expected {num_classes}")
    if sorted(pair_map.tolist()) != list(range(c)):
        raise ContractError("pair_map must be a permutation of the class ids")
    if np.any(pair_map == np.arange(c)):
        fixed = int(np.flatnonzero(pair_map == np.arange(c))[0])
        raise ContractError(f"pair_map has a fixed point at class {fixed}")
    return pair_map


def cyclic_pair_map(num_classes: int) -> np.ndarray:
    """Default partner map: class c -> (c + 1) mod C."""
    if num_classes < 2:
        raise ContractError("pair noise needs at least two classes")
    return (np.arange(num_classes, dtype=np.int64) + 1) % num_classes


def _require_clean_train(labels: LabelStore) -> np.ndarray:
    if labels.clean is None:
        raise ContractError("noise injection needs clean labels")
    if np.any(labels.clean[labels.train_mask] == UNLABELED):
        raise ContractError("noise injection needs clean labels on every train node")
    return labels.clean


def inject_uniform(labels: LabelStore, p: float, rng: np.random.Generator) -> LabelStore:
    """Flip each train label to a uniformly random other class with probability p."""
    if not 0.0 <= p <= 1.0:
        raise ContractError(f"noise rate must be in [0, 1], got {p}")
    if labels.num_classes < 2:
        raise ContractError("uniform noise needs at least two classes")
    clean = _require_clean_train(labels)
    out = labels.copy()
    train = np.flatnonzero(labels.train_mask)
    observed = clean[train].copy()
    flip = rng.random(train.size) < p
    # uniform over the other C-1 classes: draw an offset in [1, C) and rotate
    offsets = rng.integers(1, labels.num_classes, size=train.size)
    flipped = (clean[train] + offsets) % labels.num_classes
    observed[flip] = flipped[flip]
    out.observed[train] = observed
    out.working[train] = observed
    out.validate()
    return out


def inject_pair(labels: LabelStore, p: float, pair_map: np.ndarray | None,
                rng: np.random.Generator) -> LabelStore:
    """Flip each train label to its partner class with probability p."""
    if not 0.0 <= p <= 1.0:
        raise ContractError(f"noise rate must be in [0, 1], got {p}")
    if pair_map is None:
        pair_map = cyclic_pair_map(labels.num_classes)
    pair_map = _check_pair_map(np.asarray(pair_map, dtype=np.int64), labels.num_classes)
    clean = _require_clean_train(labels)
    out = labels.copy()
    train = np.flatnonzero(labels.train_mask)
    observed = clean[train].copy()
    flip = rng.random(train.size) < p
    observed[flip] = pair_map[clean[train][flip]]
    out.observed[train] = observed
    out.working[train] = observed
    out.validate()
    return out


def inject(labels: LabelStore, spec: NoiseSpec) -> LabelStore:
    spec.validate(labels.num_classes)
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "uniform":
        return inject_uniform(labels, spec.rate, rng)
    return inject_pair(labels, spec.rate, spec.pair_map, rng)


# ---------------------------------------------------------------------------
# synthetic datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    n: int = 400
    num_classes: int = 4
    p_in: float = 0.08
    p_out: float = 0.01
    d: int = 16
    attr_signal: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.n <= 0 or self.num_classes <= 0 or self.d <= 0:
            raise ValidationError("n, num_classes and d must be positive")
        if self.n < self.num_classes:
            raise ValidationError("need at least one node per class")
        if not (0.0 <= self.p_out <= self.p_in <= 1.0):
            raise ValidationError(
                f"need p_in >= p_out >= 0 for a homophilous graph, got {self.p_in}, {self.p_out}")


def gen_synthetic(spec: SynthSpec) -> Dataset:
    """Planted-partition graph with class-informative Gaussian attributes.

    Block memberships are contiguous and balanced; every unordered node
    pair gets an edge with probability p_in inside a block and p_out across
    blocks. Attributes are a class mean (random unit vector scaled by
    attr_signal) plus unit Gaussian noise. Clean labels carry the block
    ids; no observed labels or masks are set.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, c = spec.n, spec.num_classes
    sizes = np.full(c, n // c, dtype=np.int64)
    sizes[: n % c] += 1
    blocks = np.repeat(np.arange(c, dtype=np.int64), sizes)

    iu, ju = np.triu_indices(n, k=1)
    same = blocks[iu] == blocks[ju]
    probs = np.where(same, spec.p_in, spec.p_out)
    keep = rng.random(iu.size) < probs
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    graph = Graph.from_edges(n, edges)

    means = rng.standard_normal((c, spec.d))
    norms = np.linalg.norm(means, axis=1, keepdims=True)
    means = spec.attr_signal * means / np.maximum(norms, 1e-12)
    values = means[blocks] + rng.standard_normal((n, spec.d))
    attrs = AttributeMatrix.from_array(values.astype(np.float32))

    labels = LabelStore.create(
        num_classes=c,
        num_nodes=n,
        observed=np.full(n, UNLABELED, dtype=np.int64),
        train_mask=np.zeros(n, dtype=bool),
        test_mask=np.zeros(n, dtype=bool),
        clean=blocks,
    )
    ds = Dataset(graph, attrs, labels)
    ds.validate()
    return ds
