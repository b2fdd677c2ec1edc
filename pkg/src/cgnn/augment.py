"""Stochastic graph views for contrastive learning.

Two perturbations: undirected edges are dropped independently with
probability ``edge_drop_prob``, and whole attribute rows of independently
sampled nodes are zeroed with probability ``attr_mask_prob``. A view pair
uses four decorrelated substreams (edge/attribute draws per view), so the
two views are independent given the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .graph import AttributeMatrix, Graph


@dataclass(frozen=True)
class AugmentConfig:
    edge_drop_prob: float = 0.2
    attr_mask_prob: float = 0.2
    seed: int = 0

    def validate(self) -> None:
        for name in ("edge_drop_prob", "attr_mask_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ContractError(f"{name} must be in [0, 1], got {p}")


def drop_edges(g: Graph, p_e: float, rng: np.random.Generator) -> Graph:
    """Remove each undirected edge independently with probability p_e."""
    if not 0.0 <= p_e <= 1.0:
        raise ContractError(f"edge drop probability must be in [0, 1], got {p_e}")
    edges = g.undirected_edges()
    drop = rng.random(edges.shape[0]) < p_e
    return Graph.from_edges(g.num_nodes, edges[~drop])


def mask_attributes(x: AttributeMatrix, p_m: float, rng: np.random.Generator) -> AttributeMatrix:
    """Zero whole attribute rows of nodes sampled independently with probability p_m."""
    if not 0.0 <= p_m <= 1.0:
        raise ContractError(f"attribute mask probability must be in [0, 1], got {p_m}")
    masked = rng.random(x.num_rows) < p_m
    values = x.values.copy()
    values[masked] = 0.0
    return AttributeMatrix.from_array(values)


def make_views(g: Graph, x: AttributeMatrix, cfg: AugmentConfig,
               rng: np.random.Generator | None = None):
    """Two independent augmented (graph, attributes) views.

    ``rng`` overrides the config seed, letting a caller draw fresh views
    each epoch from its own stream.
    """
    cfg.validate()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    e1, a1, e2, a2 = rng.spawn(4)
    view1 = (drop_edges(g, cfg.edge_drop_prob, e1), mask_attributes(x, cfg.attr_mask_prob, a1))
    view2 = (drop_edges(g, cfg.edge_drop_prob, e2), mask_attributes(x, cfg.attr_mask_prob, a2))
    return view1, view2
