"""Graph, attribute, and label storage with validated file ingestion.

On-disk formats
---------------
Graph file: UTF-8 text, one edge per line as two whitespace-separated
zero-based node ids. Lines starting with ``#`` are ignored. An optional
header line ``N <count>`` fixes the node count; otherwise it is
1 + max node id. Input edges are symmetrized and deduplicated; self-loops
are dropped (with a logged count).

Attribute file: binary, little-endian. Magic ``NNA1``, two u64 values
(N, d), then N*d float32 values row-major. A CSV alternative (N rows of d
comma-separated values) is read when the path ends ``.csv``.

Label file: text lines ``node_id class``. Nodes absent from the file are
unlabeled. Integer class tokens are used as class ids directly; any
non-integer token switches the file to first-seen-order mapping, written
to a ``<path>.classes`` sidecar.

Split spec: either the string ``rate=<float>,seed=<int>`` or a path to a
file of ``node_id {train|test}`` lines.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError, ValidationError

logger = logging.getLogger(__name__)

_ATTR_MAGIC = b"NNA1"


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph in compressed sparse row form.

    ``offsets`` has length N+1; ``neighbor_ids[offsets[i]:offsets[i+1]]`` is
    the ascending neighbor list of node i. Storage is symmetric, self-loop
    free and duplicate free.
    """

    num_nodes: int
    offsets: np.ndarray
    neighbor_ids: np.ndarray
    num_undirected_edges: int

    @staticmethod
    def from_edges(num_nodes: int, edges: np.ndarray) -> "Graph":
        """Build from an (E, 2) int array; symmetrizes, dedupes, drops self-loops."""
        if num_nodes <= 0:
            raise ValidationError(f"graph needs a positive node count, got {num_nodes}")
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size:
            if edges.min() < 0 or edges.max() >= num_nodes:
                raise ValidationError(
                    f"edge endpoint out of range [0, {num_nodes})")
            edges = edges[edges[:, 0] != edges[:, 1]]
        if edges.size:
            lo = np.minimum(edges[:, 0], edges[:, 1])
            hi = np.maximum(edges[:, 0], edges[:, 1])
            und = np.unique(np.stack([lo, hi], axis=1), axis=0)
            both = np.concatenate([und, und[:, ::-1]], axis=0)
            order = np.lexsort((both[:, 1], both[:, 0]))
            both = both[order]
            counts = np.bincount(both[:, 0], minlength=num_nodes)
            offsets = np.zeros(num_nodes + 1, dtype=np.int64)
            np.cumsum(counts, out=offsets[1:])
            g = Graph(num_nodes, offsets, both[:, 1].copy(), und.shape[0])
        else:
            g = Graph(num_nodes, np.zeros(num_nodes + 1, dtype=np.int64),
                      np.zeros(0, dtype=np.int64), 0)
        g.offsets.setflags(write=False)
        g.neighbor_ids.setflags(write=False)
        return g

    def degrees(self) -> np.ndarray:
        return np.diff(self.offsets)

    def undirected_edges(self) -> np.ndarray:
        """(E, 2) array of undirected edges with lo < hi, lexicographic order."""
        rows = np.repeat(np.arange(self.num_nodes, dtype=np.int64), self.degrees())
        keep = rows < self.neighbor_ids
        return np.stack([rows[keep], self.neighbor_ids[keep]], axis=1)

    def dense_adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes), dtype=bool)
        rows = np.repeat(np.arange(self.num_nodes), self.degrees())
        a[rows, self.neighbor_ids] = True
        return a

    def validate(self) -> None:
        n = self.num_nodes
        if n <= 0:
            raise ValidationError("num_nodes must be positive")
        if self.offsets.shape != (n + 1,) or self.offsets[0] != 0:
            raise ValidationError("offsets must have length N+1 and start at 0")
        if np.any(np.diff(self.offsets) < 0):
            raise ValidationError("offsets must be non-decreasing")
        if self.offsets[-1] != self.neighbor_ids.shape[0]:
            raise ValidationError("offsets[N] must equal len(neighbor_ids)")
        ids = self.neighbor_ids
        if ids.size:
            if ids.min() < 0 or ids.max() >= n:
                raise ValidationError("neighbor id out of range")
        rows = np.repeat(np.arange(n), np.diff(self.offsets))
        if np.any(rows == ids):
            raise ValidationError("self-loop stored")
        pairs = np.stack([rows, ids], axis=1)
        if np.unique(pairs, axis=0).shape[0] != pairs.shape[0]:
            raise ValidationError("duplicate edge stored")
        fwd = set(map(tuple, pairs))
        for i, j in fwd:
            if (j, i) not in fwd:
                raise ValidationError(f"asymmetric edge ({i}, {j})")
        if self.num_undirected_edges * 2 != ids.shape[0]:
            raise ValidationError("edge count does not match neighbor list length")


def neighbors(g: Graph, i: int) -> np.ndarray:
    """Ascending neighbor ids of node i."""
    if not 0 <= i < g.num_nodes:
        raise IndexError(f"node id {i} out of range [0, {g.num_nodes})")
    return g.neighbor_ids[g.offsets[i]:g.offsets[i + 1]]


@dataclass(frozen=True)
class AttributeMatrix:
    """Per-node attribute rows, N x d float32, all entries finite."""

    values: np.ndarray

    @staticmethod
    def from_array(values) -> "AttributeMatrix":
        arr = np.asarray(values, dtype=np.float32)
        if arr.ndim != 2:
            raise ValidationError(f"attributes must be 2-D, got shape {arr.shape}")
        m = AttributeMatrix(arr)
        m.validate()
        arr.setflags(write=False)
        return m

    @property
    def num_rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def validate(self) -> None:
        if self.values.shape[0] <= 0 or self.values.shape[1] <= 0:
            raise ValidationError("attribute matrix must be non-empty")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("non-finite attribute value")


UNLABELED = -1


@dataclass
class LabelStore:
    """Observed / working / pseudo labels plus train and test masks.

    ``observed`` holds the (possibly noisy) supervision exactly on train
    nodes; ``working`` starts equal to observed and is the only field label
    correction rewrites; ``pseudo`` holds model argmax classes for unlabeled
    nodes and is refreshed by the correction pass; ``clean`` is the hidden
    ground truth used only by the evaluation harness. Undefined entries are
    ``UNLABELED``.
    """

    num_classes: int
    observed: np.ndarray
    working: np.ndarray
    pseudo: np.ndarray
    train_mask: np.ndarray
    test_mask: np.ndarray
    clean: np.ndarray | None = None

    @staticmethod
    def create(num_classes: int, num_nodes: int, observed: np.ndarray,
               train_mask: np.ndarray, test_mask: np.ndarray,
               clean: np.ndarray | None = None) -> "LabelStore":
        store = LabelStore(
            num_classes=int(num_classes),
            observed=np.asarray(observed, dtype=np.int64),
            working=np.asarray(observed, dtype=np.int64).copy(),
            pseudo=np.full(num_nodes, UNLABELED, dtype=np.int64),
            train_mask=np.asarray(train_mask, dtype=bool),
            test_mask=np.asarray(test_mask, dtype=bool),
            clean=None if clean is None else np.asarray(clean, dtype=np.int64),
        )
        store.validate()
        return store

    @property
    def num_nodes(self) -> int:
        return self.observed.shape[0]

    def copy(self) -> "LabelStore":
        return LabelStore(self.num_classes, self.observed.copy(), self.working.copy(),
                          self.pseudo.copy(), self.train_mask.copy(), self.test_mask.copy(),
                          None if self.clean is None else self.clean.copy())

    def validate(self) -> None:
        if self.num_classes <= 0:
            raise ValidationError("num_classes must be positive")
        n = self.observed.shape[0]
        for name in ("working", "pseudo"):
            if getattr(self, name).shape != (n,):
                raise ValidationError(f"{name} has wrong length")
        for name in ("train_mask", "test_mask"):
            if getattr(self, name).shape != (n,) or getattr(self, name).dtype != bool:
                raise ValidationError(f"{name} must be a boolean array of length N")
        if np.any(self.train_mask & self.test_mask):
            raise ValidationError("train and test masks overlap")
        if np.any((self.observed != UNLABELED) != self.train_mask):
            raise ValidationError("observed labels must exist exactly on train nodes")
        if np.any((self.working != UNLABELED) != self.train_mask):
            raise ValidationError("working labels must exist exactly on train nodes")
        for name in ("observed", "working", "pseudo", "clean"):
            arr = getattr(self, name)
            if arr is None:
                continue
            defined = arr[arr != UNLABELED]
            if defined.size and (defined.min() < 0 or defined.max() >= self.num_classes):
                raise ValidationError(f"{name} holds a class id outside [0, {self.num_classes})")


@dataclass
class Dataset:
    graph: Graph
    attrs: AttributeMatrix
    labels: LabelStore

    def validate(self) -> None:
        self.graph.validate()
        self.attrs.validate()
        self.labels.validate()
        if self.attrs.num_rows != self.graph.num_nodes:
            raise ValidationError(
                f"attribute rows ({self.attrs.num_rows}) != node count ({self.graph.num_nodes})")
        if self.labels.num_nodes != self.graph.num_nodes:
            raise ValidationError("label store length != node count")


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------


def make_split(n: int, label_rate: float, clean: np.ndarray, per_class: str = "proportional",
               rng: np.random.Generator | None = None, seed: int | None = None):
    """Stratified train/test masks selecting ceil(label_rate * n) train nodes.

    Every class must have at least one member; each receives at least one
    train node. ``per_class`` is ``proportional`` (largest-remainder on class
    sizes) or ``equal``.
    """
    if not 0.0 < label_rate < 1.0:
        raise ValidationError(f"label_rate must be in (0, 1), got {label_rate}")
    if rng is None:
        rng = np.random.default_rng(seed)
    clean = np.asarray(clean, dtype=np.int64)
    if clean.shape != (n,) or np.any(clean == UNLABELED):
        raise ValidationError("stratified split needs clean labels for every node")
    num_classes = int(clean.max()) + 1
    counts = np.bincount(clean, minlength=num_classes)
    if np.any(counts == 0):
        missing = int(np.flatnonzero(counts == 0)[0])
        raise ValidationError(f"class {missing} has zero members; cannot stratify")
    total = int(np.ceil(label_rate * n))
    if total < num_classes:
        raise ValidationError(
            f"label budget {total} cannot cover {num_classes} classes with one node each")

    if per_class == "proportional":
        ideal = total * counts / n
        alloc = np.maximum(np.floor(ideal).astype(np.int64), 1)
        alloc = np.minimum(alloc, counts)
        remainder = ideal - np.floor(ideal)
        # distribute the leftover budget by largest remainder, smallest id first on ties
        order = np.lexsort((np.arange(num_classes), -remainder))
        k = 0
        while alloc.sum() < total:
            c = order[k % num_classes]
            if alloc[c] < counts[c]:
                alloc[c] += 1
            k += 1
            if k > 2 * num_classes * (total + 1):
                raise ValidationError("cannot satisfy split allocation")
        order_desc = np.argsort(-alloc, kind="stable")
        k = 0
        while alloc.sum() > total:
            c = order_desc[k % num_classes]
            if alloc[c] > 1:
                alloc[c] -= 1
            k += 1
    elif per_class == "equal":
        base = total // num_classes
        alloc = np.full(num_classes, base, dtype=np.int64)
        alloc[: total - base * num_classes] += 1
        if np.any(alloc == 0):
            raise ValidationError("equal split leaves a class empty")
        if np.any(alloc > counts):
            c = int(np.flatnonzero(alloc > counts)[0])
            raise ValidationError(f"class {c} has too few members for an equal split")
    else:
        raise ValidationError(f"unknown per_class policy '{per_class}'")

    train_mask = np.zeros(n, dtype=bool)
    for c in range(num_classes):
        members = np.flatnonzero(clean == c)
        picked = rng.choice(members, size=int(alloc[c]), replace=False)
        train_mask[picked] = True
    test_mask = ~train_mask
    return train_mask, test_mask


def parse_split_spec(spec: str):
    """``rate=<float>,seed=<int>`` -> ('rate', rate, seed); otherwise a file path."""
    if spec.startswith("rate="):
        parts = dict(p.split("=", 1) for p in spec.split(",") if "=" in p)
        try:
            rate = float(parts["rate"])
            seed = int(parts.get("seed", "0"))
        except (KeyError, ValueError) as e:
            raise ValidationError(f"bad split spec '{spec}'") from e
        return ("rate", rate, seed)
    return ("file", spec, None)


def read_split_file(path, n: int):
    train = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    for ln, line in enumerate(_text_lines(path), start=1):
        parts = line.split()
        if len(parts) != 2 or parts[1] not in ("train", "test"):
            raise ParseError(f"{path}:{ln}: expected 'node_id train|test'")
        try:
            node = int(parts[0])
        except ValueError as e:
            raise ParseError(f"{path}:{ln}: bad node id '{parts[0]}'") from e
        if not 0 <= node < n:
            raise ValidationError(f"{path}:{ln}: node id {node} out of range [0, {n})")
        if train[node] or test[node]:
            raise ValidationError(f"{path}:{ln}: node {node} listed twice")
        (train if parts[1] == "train" else test)[node] = True
    return train, test


# ---------------------------------------------------------------------------
# file readers / writers
# ---------------------------------------------------------------------------


def _text_lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            yield line


def read_graph_file(path) -> Graph:
    edges = []
    num_nodes = None
    with open(path, "r", encoding="utf-8") as fh:
        raw_lines = fh.readlines()
    for ln, raw in enumerate(raw_lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "N":
            if len(parts) != 2:
                raise ParseError(f"{path}:{ln}: bad header, expected 'N <count>'")
            try:
                num_nodes = int(parts[1])
            except ValueError as e:
                raise ParseError(f"{path}:{ln}: bad node count '{parts[1]}'") from e
            continue
        if len(parts) != 2:
            raise ParseError(f"{path}:{ln}: expected two node ids, got {len(parts)} fields")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError as e:
            raise ParseError(f"{path}:{ln}: non-integer node id") from e
        if u < 0 or v < 0:
            raise ValidationError(f"{path}:{ln}: negative node id")
        edges.append((u, v))
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if num_nodes is None:
        if edges.size == 0:
            raise ValidationError(f"{path}: empty edge list and no 'N <count>' header")
        num_nodes = int(edges.max()) + 1
    elif edges.size and edges.max() >= num_nodes:
        raise ValidationError(
            f"{path}: node id {int(edges.max())} out of range for header N {num_nodes}")
    loops = int(np.sum(edges[:, 0] == edges[:, 1])) if edges.size else 0
    if loops:
        logger.warning("%s: dropped %d self-loop edge(s)", path, loops)
    return Graph.from_edges(num_nodes, edges)


def write_graph_file(path, g: Graph) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"N {g.num_nodes}\n")
        for u, v in g.undirected_edges():
            fh.write(f"{u} {v}\n")


def read_attr_file(path) -> AttributeMatrix:
    path = Path(path)
    if path.suffix == ".csv":
        rows = []
        width = None
        for ln, line in enumerate(_text_lines(path), start=1):
            fields = line.split(",")
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise ParseError(f"{path}:{ln}: expected {width} values, got {len(fields)}")
            try:
                rows.append([float(f) for f in fields])
            except ValueError as e:
                raise ParseError(f"{path}:{ln}: non-numeric attribute value") from e
        if not rows:
            raise ValidationError(f"{path}: empty attribute file")
        return AttributeMatrix.from_array(np.asarray(rows, dtype=np.float32))
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _ATTR_MAGIC:
            raise ParseError(f"{path}: bad magic {magic!r}, expected {_ATTR_MAGIC!r}")
        n, d = struct.unpack("<QQ", fh.read(16))
        buf = fh.read(4 * n * d)
        if len(buf) != 4 * n * d:
            raise ParseError(f"{path}: truncated payload")
        values = np.frombuffer(buf, dtype="<f4").reshape(n, d)
        return AttributeMatrix.from_array(values.astype(np.float32))


def write_attr_file(path, attrs: AttributeMatrix) -> None:
    with open(path, "wb") as fh:
        fh.write(_ATTR_MAGIC)
        fh.write(struct.pack("<QQ", attrs.num_rows, attrs.dim))
        fh.write(np.ascontiguousarray(attrs.values, dtype="<f4").tobytes())


def read_label_file(path, n: int):
    """Per-node labels (UNLABELED where absent) and the class-id mapping used."""
    entries = []
    tokens_are_ints = True
    for ln, line in enumerate(_text_lines(path), start=1):
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"{path}:{ln}: expected 'node_id class'")
        try:
            node = int(parts[0])
        except ValueError as e:
            raise ParseError(f"{path}:{ln}: bad node id '{parts[0]}'") from e
        if not 0 <= node < n:
            raise ValidationError(f"{path}:{ln}: node id {node} out of range [0, {n})")
        token = parts[1]
        if tokens_are_ints and not (token.isdigit() or (token[0] == "-" and token[1:].isdigit())):
            tokens_are_ints = False
        entries.append((node, token, ln))

    labels = np.full(n, UNLABELED, dtype=np.int64)
    mapping: dict[str, int] = {}
    for node, token, ln in entries:
        if labels[node] != UNLABELED:
            raise ValidationError(f"{path}:{ln}: node {node} labeled twice")
        if tokens_are_ints:
            cid = int(token)
            if cid < 0:
                raise ValidationError(f"{path}:{ln}: negative class id")
        else:
            cid = mapping.setdefault(token, len(mapping))
        labels[node] = cid
    if not tokens_are_ints and mapping:
        sidecar = str(path) + ".classes"
        with open(sidecar, "w", encoding="utf-8") as fh:
            for token, cid in mapping.items():
                fh.write(f"{cid} {token}\n")
        logger.info("%s: wrote class mapping for %d string labels to %s",
                    path, len(mapping), sidecar)
    return labels, mapping


def write_label_file(path, labels: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for node in np.flatnonzero(labels != UNLABELED):
            fh.write(f"{node} {labels[node]}\n")


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------


def load_dataset(graph_path, attr_path, label_path, split_spec: str,
                 clean_path=None) -> Dataset:
    """Assemble a Dataset from on-disk files.

    ``clean_path`` points at a ground-truth label file for harness-side
    evaluation; when omitted, a ``<label_path>.clean`` sibling is used if it
    exists, otherwise the label file itself is treated as clean.
    """
    g = read_graph_file(graph_path)
    attrs = read_attr_file(attr_path)
    if attrs.num_rows != g.num_nodes:
        raise ValidationError(
            f"{attr_path}: {attrs.num_rows} attribute rows for {g.num_nodes} nodes")
    y_full, _ = read_label_file(label_path, g.num_nodes)

    if clean_path is None:
        sibling = Path(str(label_path) + ".clean")
        clean_path = sibling if sibling.exists() else None
    if clean_path is not None:
        clean, _ = read_label_file(clean_path, g.num_nodes)
    else:
        clean = y_full.copy()

    kind, arg, seed = parse_split_spec(split_spec)
    if kind == "rate":
        train_mask, test_mask = make_split(g.num_nodes, arg, clean, seed=seed)
    else:
        train_mask, test_mask = read_split_file(arg, g.num_nodes)

    if np.any((y_full == UNLABELED) & train_mask):
        missing = int(np.flatnonzero((y_full == UNLABELED) & train_mask)[0])
        raise ValidationError(f"{label_path}: train node {missing} has no label")
    observed = np.where(train_mask, y_full, UNLABELED)

    defined = [arr[arr != UNLABELED] for arr in (observed, clean)]
    if not any(arr.size for arr in defined):
        raise ValidationError(f"{label_path}: no labels defined anywhere")
    num_classes = int(max(arr.max() for arr in defined if arr.size)) + 1

    labels = LabelStore.create(num_classes, g.num_nodes, observed, train_mask, test_mask,
                               clean=None if not (clean != UNLABELED).any() else clean)
    ds = Dataset(g, attrs, labels)
    ds.validate()
    return ds


def write_dataset(out_dir, ds: Dataset, write_split: bool = True) -> dict:
    """Write the standard file set; returns the path map."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "graph": out / "graph.txt",
        "attrs": out / "attrs.bin",
        "labels": out / "labels.txt",
        "clean": out / "labels.txt.clean",
    }
    write_graph_file(paths["graph"], ds.graph)
    write_attr_file(paths["attrs"], ds.attrs)
    source = ds.labels.observed if ds.labels.train_mask.any() else ds.labels.clean
    if source is None:
        raise ContractError("dataset has neither observed nor clean labels to write")
    write_label_file(paths["labels"], source)
    if ds.labels.clean is not None:
        write_label_file(paths["clean"], ds.labels.clean)
    if write_split and ds.labels.train_mask.any():
        paths["split"] = out / "split.txt"
        with open(paths["split"], "w", encoding="utf-8") as fh:
            for node in np.flatnonzero(ds.labels.train_mask):
                fh.write(f"{node} train\n")
            for node in np.flatnonzero(ds.labels.test_mask):
                fh.write(f"{node} test\n")
    return paths
