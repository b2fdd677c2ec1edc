"""K-layer message-passing encoder and MLP prediction head.

Each layer averages neighbor states (isolated nodes contribute zero),
averages that with the node's own state, and applies a learned affine map
followed by relu; the last encoder layer omits the relu. The head is one
hidden relu layer of the embedding width followed by a linear map and a
row softmax.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError, ValidationError
from .graph import AttributeMatrix, Graph
from .tensor import Tensor

# dense D^-1 A per graph; desk-scale graphs comfortably fit, larger ones
# fall back to the segmented-sum path
_DENSE_LIMIT = 4096
_AGG_CACHE: "weakref.WeakKeyDictionary[Graph, np.ndarray]" = weakref.WeakKeyDictionary()


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    num_layers: int = 3
    hidden_dim: int = 256
    embed_dim: int = 256

    def validate(self) -> None:
        if self.num_layers < 1:
            raise ValidationError("encoder needs at least one layer")
        for name in ("input_dim", "hidden_dim", "embed_dim"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")

    def layer_dims(self):
        """(in, out) widths for each of the K layers."""
        dims = []
        cur = self.input_dim
        for k in range(self.num_layers):
            out = self.embed_dim if k == self.num_layers - 1 else self.hidden_dim
            dims.append((cur, out))
            cur = out
        return dims


class ModelParams:
    """Encoder layer weights plus head weights, all trainable tensors."""

    def __init__(self, layers, head):
        self.layers = layers  # list of (w, b) per encoder layer
        self.head = head      # [(w0, b0), (w1, b1)]

    def named(self) -> dict[str, Tensor]:
        out = {}
        for k, (w, b) in enumerate(self.layers):
            out[f"enc.k.{k}.w"] = w
            out[f"enc.k.{k}.b"] = b
        for k, (w, b) in enumerate(self.head):
            out[f"head.{k}.w"] = w
            out[f"head.{k}.b"] = b
        return out

    def tensors(self):
        return list(self.named().values())

    @staticmethod
    def from_named(named: dict[str, Tensor]) -> "ModelParams":
        enc_idx = sorted({int(n.split(".")[2]) for n in named if n.startswith("enc.k.")})
        head_idx = sorted({int(n.split(".")[1]) for n in named if n.startswith("head.")})
        layers = [(named[f"enc.k.{k}.w"], named[f"enc.k.{k}.b"]) for k in enc_idx]
        head = [(named[f"head.{k}.w"], named[f"head.{k}.b"]) for k in head_idx]
        return ModelParams(layers, head)


def init_params(cfg: EncoderConfig, num_classes: int,
                rng: np.random.Generator) -> ModelParams:
    """Glorot-uniform weights; biases uniform in +-1/sqrt(fan_in).

    The nonzero bias range keeps fully-masked isolated nodes away from the
    exactly-zero embeddings that would make cosine similarity undefined.
    """
    cfg.validate()
    if num_classes < 1:
        raise ValidationError("num_classes must be positive")

    def affine(fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(np.float32)
        bb = 1.0 / np.sqrt(fan_in)
        b = rng.uniform(-bb, bb, size=fan_out).astype(np.float32)
        return Tensor(w, requires_grad=True), Tensor(b, requires_grad=True)

    layers = [affine(fi, fo) for fi, fo in cfg.layer_dims()]
    head = [affine(cfg.embed_dim, cfg.embed_dim), affine(cfg.embed_dim, num_classes)]
    return ModelParams(layers, head)


def _mean_matrix(g: Graph) -> np.ndarray:
    """Dense row-normalized adjacency (D^-1 A), cached per graph."""
    cached = _AGG_CACHE.get(g)
    if cached is None:
        deg = g.degrees()
        rows = np.repeat(np.arange(g.num_nodes), deg)
        cached = np.zeros((g.num_nodes, g.num_nodes), dtype=np.float32)
        cached[rows, g.neighbor_ids] = (1.0 / np.maximum(deg, 1))[rows].astype(np.float32)
        _AGG_CACHE[g] = cached
    return cached


def _mean_aggregate(g: Graph, h: np.ndarray) -> np.ndarray:
    """Row i = mean of h over neighbors(i); zero row for isolated nodes."""
    if g.num_nodes <= _DENSE_LIMIT:
        m = _mean_matrix(g)
        if h.dtype == np.float64:
            return m.astype(np.float64) @ h
        return m @ h
    deg = g.degrees()
    out = np.zeros_like(h, dtype=np.float64)
    if g.neighbor_ids.size:
        nonempty = deg > 0
        starts = g.offsets[:-1][nonempty]
        gathered = h[g.neighbor_ids].astype(np.float64, copy=False)
        out[nonempty] = np.add.reduceat(gathered, starts, axis=0)
        out /= np.maximum(deg, 1)[:, None]
    return out.astype(h.dtype)


def _mean_aggregate_t(g: Graph, grad: np.ndarray) -> np.ndarray:
    """Transpose of the aggregation: dL/dh_j = sum over i adjacent to j of g_i / deg_i."""
    if g.num_nodes <= _DENSE_LIMIT:
        m = _mean_matrix(g)
        if grad.dtype == np.float64:
            return m.T.astype(np.float64) @ grad
        return m.T @ grad
    deg = np.maximum(g.degrees(), 1)[:, None]
    # symmetric graph: sum-aggregate the degree-scaled grad, undo the mean's division
    return _mean_aggregate(g, grad / deg) * deg


def neighbor_mean(g: Graph, h: Tensor) -> Tensor:
    """Differentiable neighbor-mean aggregation over a symmetric graph."""
    if h.values.ndim != 2 or h.shape[0] != g.num_nodes:
        raise ShapeError(f"neighbor_mean: states {h.shape} vs {g.num_nodes} nodes")
    out = Tensor(_mean_aggregate(g, h.values))
    return T.record_op(out, [(h, lambda grad: _mean_aggregate_t(g, grad))])


def encode(g: Graph, x: AttributeMatrix, params: ModelParams) -> Tensor:
    """Per-node embeddings after K message-passing layers (no relu on the last)."""
    if x.num_rows != g.num_nodes:
        raise ShapeError(f"encode: {x.num_rows} attribute rows for {g.num_nodes} nodes")
    if x.dim != params.layers[0][0].shape[0]:
        raise ShapeError(
            f"encode: attribute dim {x.dim} vs first-layer input {params.layers[0][0].shape[0]}")
    h = Tensor(x.values)
    last = len(params.layers) - 1
    for k, (w, b) in enumerate(params.layers):
        p = neighbor_mean(g, h)
        combined = T.scale(T.add(h, p), 0.5)
        z = T.add(T.matmul(combined, w), b)
        h = z if k == last else T.relu(z)
    return h


def predict(h: Tensor, params: ModelParams) -> Tensor:
    """Per-node class distributions from embeddings (rows sum to one)."""
    (w0, b0), (w1, b1) = params.head
    if h.values.ndim != 2 or h.shape[1] != w0.shape[0]:
        raise ShapeError(f"predict: embeddings {h.shape} vs head input {w0.shape[0]}")
    hidden = T.relu(T.add(T.matmul(h, w0), b0))
    logits = T.add(T.matmul(hidden, w1), b1)
    return T.softmax_rows(logits)


def normalized_embeddings(h: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """L2-normalized copy of raw embedding rows (non-differentiable path).

    Zero rows stay zero instead of erroring; they compare as dissimilar to
    everything, which is the safe behavior for the correction rule.
    """
    norms = np.sqrt(np.sum(h.astype(np.float64) ** 2, axis=1))
    return (h / np.maximum(norms, eps)[:, None].astype(h.dtype)).astype(h.dtype)
