"""Dense tensors with reverse-mode automatic differentiation.

Tensors are thin wrappers around numpy buffers (rank 2 at most). Every
differentiable operation appends a record to the active :class:`Tape`;
``backward`` replays the records in reverse, accumulating exact analytic
gradients into every ``requires_grad`` ancestor.

Values default to float32; reductions (sums, means, softmax denominators)
accumulate in float64 before casting back. Operations preserve float64
buffers end to end, which is what ``grad_check`` relies on.
"""

from __future__ import annotations

import struct
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "no_grad",
    "record_op",
    "backward",
    "grad_check",
    "matmul",
    "add",
    "scale",
    "normalize_rows",
    "relu",
    "exp",
    "log",
    "softmax_rows",
    "masked_mean",
    "multiply",
    "transpose",
    "gather_rows",
    "clamp_min",
    "sum_all",
    "save_params",
    "load_params",
]

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """A dense real array with an optional gradient buffer."""

    __slots__ = ("values", "requires_grad", "grad", "_tape")

    def __init__(self, values, requires_grad=False, dtype=None):
        arr = np.asarray(values)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        if arr.ndim > 2:
            raise ShapeError(f"tensors are rank <= 2, got shape {arr.shape}")
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def item(self):
        if self.values.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class _OpRecord:
    __slots__ = ("out", "pairs")

    def __init__(self, out, pairs):
        self.out = out
        self.pairs = pairs  # list of (input Tensor, vjp callable)


class Tape:
    """Ordered record of executed operations, in topological order.

    A module-level default tape is always active; ``with Tape():`` confines
    recording to a local scope (one training step, one gradient check) so
    that records are dropped when the scope exits.
    """

    def __init__(self):
        self.records = []

    def clear(self):
        self.records.clear()

    def __len__(self):
        return len(self.records)

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False


class no_grad:
    """Context manager that suspends recording entirely."""

    def __enter__(self):
        _TAPE_STACK.append(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False


_TAPE_STACK: list = [Tape()]


def _active_tape():
    return _TAPE_STACK[-1]


def record_op(out: Tensor, pairs) -> Tensor:
    """Attach a backward rule to ``out``.

    ``pairs`` is a sequence of ``(input_tensor, vjp)`` where ``vjp`` maps the
    upstream gradient to the gradient w.r.t. that input. Recording is skipped
    when no input requires a gradient or recording is suspended.
    """
    tape = _active_tape()
    needs = any(t.requires_grad for t, _ in pairs)
    if tape is None or not needs:
        out.requires_grad = False
        return out
    out.requires_grad = True
    out._tape = tape
    tape.records.append(_OpRecord(out, [(t, fn) for t, fn in pairs]))
    return out


def _finite(name: str, arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite result in op '{name}'")
    return arr


def _deposit(t: Tensor, g: np.ndarray):
    g = g.astype(t.values.dtype, copy=False)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(ancestor) into every requires_grad ancestor.

    Repeated calls without clearing gradients accumulate. The tape that
    recorded ``loss`` must still be alive.
    """
    if loss.values.size != 1:
        raise ContractError(f"backward() requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = loss._tape
    seed = np.ones_like(loss.values)
    if tape is None:
        _deposit(loss, seed)
        return
    flows: dict[int, np.ndarray] = {id(loss): seed}
    keep = {id(loss): loss}
    for rec in reversed(tape.records):
        g = flows.pop(id(rec.out), None)
        if g is None:
            continue
        keep.pop(id(rec.out), None)
        _deposit(rec.out, g)
        for inp, vjp in rec.pairs:
            if not inp.requires_grad:
                continue
            gi = vjp(g)
            if inp._tape is tape:
                key = id(inp)
                if key in flows:
                    flows[key] = flows[key] + gi
                else:
                    flows[key] = gi
                    keep[key] = inp
            else:
                _deposit(inp, gi)
    # anything left in flows is a leaf that was seeded directly
    for key, g in flows.items():
        _deposit(keep[key], g)


def zero_grads(tensors: Sequence[Tensor]) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    out = Tensor(_finite("matmul", a.values @ b.values))

    def vjp_a(g):
        return g @ b.values.T

    def vjp_b(g):
        return a.values.T @ g

    return record_op(out, [(a, vjp_a), (b, vjp_b)])


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; a 1-D right operand broadcasts as a bias row."""
    a, b = _as_tensor(a), _as_tensor(b)
    bias = a.values.ndim == 2 and b.values.ndim == 1
    if not bias and a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} + {b.shape}")
    if bias and a.shape[1] != b.shape[0]:
        raise ShapeError(f"add: {a.shape} + bias {b.shape}")
    out = Tensor(_finite("add", a.values + b.values))

    def vjp_a(g):
        return g

    def vjp_b(g):
        if bias:
            return np.sum(g, axis=0, dtype=np.float64)
        return g

    return record_op(out, [(a, vjp_a), (b, vjp_b)])


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    out = Tensor(_finite("scale", a.values * c))
    return record_op(out, [(a, lambda g: g * c)])


def multiply(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"multiply: {a.shape} * {b.shape}")
    out = Tensor(_finite("multiply", a.values * b.values))
    return record_op(out, [(a, lambda g: g * b.values), (b, lambda g: g * a.values)])


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.values, 0))
    mask = a.values > 0
    return record_op(out, [(a, lambda g: g * mask)])


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(_finite("exp", np.exp(a.values)))
    return record_op(out, [(a, lambda g: g * out.values)])


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.log(a.values)
    out = Tensor(_finite("log", vals))
    return record_op(out, [(a, lambda g: g / a.values)])


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor) elementwise; gradient passes where a >= floor."""
    a = _as_tensor(a)
    floor = float(floor)
    out = Tensor(np.maximum(a.values, floor))
    mask = a.values >= floor
    return record_op(out, [(a, lambda g: g * mask)])


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if a.values.ndim != 2:
        raise ShapeError(f"transpose: rank-2 tensor required, got {a.shape}")
    out = Tensor(a.values.T.copy())
    return record_op(out, [(a, lambda g: g.T)])


def normalize_rows(a: Tensor) -> Tensor:
    """Scale every row to unit L2 norm. A zero-norm row is a numeric error."""
    a = _as_tensor(a)
    if a.values.ndim != 2:
        raise ShapeError(f"normalize_rows: rank-2 tensor required, got {a.shape}")
    norms = np.sqrt(np.sum(a.values.astype(np.float64) ** 2, axis=1))
    if np.any(norms == 0.0):
        raise NumericError("normalize_rows: zero-norm row (direction undefined)")
    inv = (1.0 / norms).astype(a.values.dtype)
    out = Tensor(_finite("normalize_rows", a.values * inv[:, None]))

    def vjp(g):
        u = out.values
        proj = np.sum(g * u, axis=1, dtype=np.float64).astype(a.values.dtype)
        return (g - u * proj[:, None]) * inv[:, None]

    return record_op(out, [(a, vjp)])


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction; float64 accumulation."""
    a = _as_tensor(a)
    x = np.atleast_2d(a.values).astype(np.float64)
    shifted = x - np.max(x, axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / np.sum(e, axis=1, keepdims=True)
    out = Tensor(_finite("softmax_rows", s.reshape(a.shape).astype(a.values.dtype)))

    def vjp(g):
        p = np.atleast_2d(out.values)
        g2 = np.atleast_2d(g)
        dot = np.sum(g2 * p, axis=1, keepdims=True, dtype=np.float64).astype(p.dtype)
        return (p * (g2 - dot)).reshape(a.shape)

    return record_op(out, [(a, vjp)])


def masked_mean(a: Tensor, mask: np.ndarray) -> Tensor:
    """Mean of the masked entries of a vector (or n-by-1 column); rank-0 output."""
    a = _as_tensor(a)
    flat = a.values.reshape(-1)
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if mask.shape != flat.shape:
        raise ShapeError(f"masked_mean: mask {mask.shape} vs values {flat.shape}")
    m = int(mask.sum())
    if m == 0:
        raise ContractError("masked_mean: empty mask")
    val = np.sum(flat[mask], dtype=np.float64) / m
    out = Tensor(np.asarray(val, dtype=a.values.dtype))

    def vjp(g):
        d = np.zeros_like(flat)
        d[mask] = np.asarray(g, dtype=flat.dtype) / m
        return d.reshape(a.shape)

    return record_op(out, [(a, vjp)])


def sum_all(a: Tensor) -> Tensor:
    """Sum of all entries; rank-0 output; float64 accumulation."""
    a = _as_tensor(a)
    val = np.sum(a.values, dtype=np.float64)
    out = Tensor(np.asarray(val, dtype=a.values.dtype))
    return record_op(out, [(a, lambda g: np.broadcast_to(np.asarray(g, dtype=a.values.dtype), a.shape).copy())])


def gather_rows(a: Tensor, idx) -> Tensor:
    a = _as_tensor(a)
    if a.values.ndim != 2:
        raise ShapeError(f"gather_rows: rank-2 tensor required, got {a.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("gather_rows: index must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {a.shape[0]} rows")
    out = Tensor(a.values[idx].copy())

    def vjp(g):
        d = np.zeros(a.shape, dtype=a.values.dtype)
        np.add.at(d, idx, g.astype(a.values.dtype, copy=False))
        return d

    return record_op(out, [(a, vjp)])


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], step: float = 1e-4,
               tol: float | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be deterministic (two forward passes are compared bit for bit)
    and return a scalar tensor. Inputs should carry float64 buffers for the
    comparison to be meaningful; they are perturbed in place and restored.
    Raises when ``tol`` is given and exceeded.
    """
    if step <= 0:
        raise ContractError("grad_check: step must be positive")
    inputs = list(inputs)
    with Tape():
        out = f(*inputs)
        if out.values.size != 1:
            raise ContractError("grad_check: f must return a scalar")
        ref = out.values.copy()
        with no_grad():
            again = f(*inputs)
        if not np.array_equal(ref, again.values):
            raise ContractError("grad_check: f is not deterministic")
        for t in inputs:
            t.grad = None
        backward(out)
    analytic = [np.zeros_like(t.values) if t.grad is None else np.asarray(t.grad) for t in inputs]

    def eval_scalar():
        with Tape(), no_grad():
            return float(f(*inputs).values.reshape(()))

    worst = 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.values.reshape(-1)
        gflat = ga.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            fp = eval_scalar()
            flat[j] = orig - step
            fm = eval_scalar()
            flat[j] = orig
            num = (fp - fm) / (2.0 * step)
            ana = float(gflat[j])
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, err)
    if tol is not None and worst > tol:
        raise NumericError(f"grad_check: max relative error {worst:.3e} exceeds tol {tol:.3e}")
    return worst


# ---------------------------------------------------------------------------
# parameter checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"CGNN"
_VERSION = 1


def save_params(path, named: dict[str, Tensor]) -> None:
    """Write named parameters: magic, u32 version, then per entry
    u32 name length + UTF-8 name, u32 rank, u32 dims, little-endian f32 payload."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        for name, t in named.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            dims = t.values.shape
            fh.write(struct.pack("<I", len(dims)))
            for d in dims:
                fh.write(struct.pack("<I", d))
            fh.write(np.ascontiguousarray(t.values, dtype="<f4").tobytes())


def load_params(path) -> dict[str, Tensor]:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a parameter checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        named = {}
        while True:
            head = fh.read(4)
            if not head:
                break
            (nlen,) = struct.unpack("<I", head)
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            n = int(np.prod(dims)) if dims else 1
            buf = np.frombuffer(fh.read(4 * n), dtype="<f4").reshape(dims)
            named[name] = Tensor(buf.astype(np.float32), requires_grad=True)
        return named
