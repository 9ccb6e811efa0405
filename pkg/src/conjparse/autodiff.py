"""Minimal reverse-mode autodiff over dense numpy tensors.

Exactly the operations the model needs, nothing else: no general
broadcasting, no GPU, no higher-order derivatives. Every op builds a node in
an implicit tape (creation order is a topological order); `backward` walks the
tape once and accumulates gradients into leaf tensors.

Two precisions: float32 for training speed, float64 for gradient checking
(central finite differences are unreliable at 32 bit).
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import zipfile
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractViolation

_GRAD_ENABLED = True
_DEBUG_CHECKS = False


def set_debug_checks(on: bool) -> None:
    """Enable NaN/Inf assertions after every forward op (slow; for tests)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = on


@contextlib.contextmanager
def no_grad():
    """Skip tape construction inside the block (inference fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_bwd", "_spent")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _bwd=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._bwd = _bwd
        self._spent = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


def leaf(data, name=None) -> Tensor:
    """A trainable leaf tensor (parameter)."""
    return Tensor(np.asarray(data), requires_grad=True, name=name)


def constant(data, dtype=None) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype))


def _node(data, parents, bwd) -> Tensor:
    if _DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise ContractViolation("non-finite values produced by a forward op")
    if not _GRAD_ENABLED:
        return Tensor(data)
    return Tensor(data, _parents=tuple(parents), _bwd=bwd)


def _shapes(*ts) -> str:
    return " vs ".join(str(t.data.shape) for t in ts)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
    else:
        t.grad += g


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ContractViolation(f"add: shape mismatch {_shapes(a, b)}")
    out_data = a.data + b.data

    def bwd(out):
        _accum(a, out.grad)
        _accum(b, out.grad)
    return _node(out_data, (a, b), bwd)


def add_n(tensors: list[Tensor]) -> Tensor:
    if not tensors:
        raise ContractViolation("add_n: empty operand list")
    shape = tensors[0].data.shape
    for t in tensors[1:]:
        if t.data.shape != shape:
            raise ContractViolation(f"add_n: shape mismatch {_shapes(*tensors)}")
    out_data = tensors[0].data.copy()
    for t in tensors[1:]:
        out_data += t.data

    def bwd(out):
        for t in tensors:
            _accum(t, out.grad)
    return _node(out_data, tensors, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ContractViolation(f"mul: shape mismatch {_shapes(a, b)}")
    out_data = a.data * b.data

    def bwd(out):
        _accum(a, out.grad * b.data)
        _accum(b, out.grad * a.data)
    return _node(out_data, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    out_data = a.data * c

    def bwd(out):
        _accum(a, out.grad * c)
    return _node(out_data, (a,), bwd)


def add_bias(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise bias add: (n, m) + (m,). The only broadcast the model needs."""
    if a.data.ndim != 2 or b.data.ndim != 1 or a.data.shape[1] != b.data.shape[0]:
        raise ContractViolation(f"add_bias: shape mismatch {_shapes(a, b)}")
    out_data = a.data + b.data[None, :]

    def bwd(out):
        _accum(a, out.grad)
        _accum(b, out.grad.sum(axis=0))
    return _node(out_data, (a, b), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ContractViolation(f"matmul: shape mismatch {_shapes(a, b)}")
    out_data = a.data @ b.data

    def bwd(out):
        _accum(a, out.grad @ b.data.T)
        _accum(b, a.data.T @ out.grad)
    return _node(out_data, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ContractViolation(f"transpose: expected 2-d, got {a.data.shape}")
    out_data = np.ascontiguousarray(a.data.T)

    def bwd(out):
        _accum(a, out.grad.T)
    return _node(out_data, (a,), bwd)


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    if axis not in (0, 1):
        raise ContractViolation(f"concat: axis must be 0 or 1, got {axis}")
    for t in tensors:
        if t.data.ndim != 2:
            raise ContractViolation(f"concat: expected 2-d operands, got {t.data.shape}")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(out):
        for i, t in enumerate(tensors):
            sl = slice(offsets[i], offsets[i + 1])
            _accum(t, out.grad[sl, :] if axis == 0 else out.grad[:, sl])
    return _node(out_data, tensors, bwd)


def slice_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    if a.data.ndim != 2 or not (0 <= lo < hi <= a.data.shape[1]):
        raise ContractViolation(f"slice_cols: bad range [{lo}:{hi}] for {a.data.shape}")
    out_data = a.data[:, lo:hi].copy()

    def bwd(out):
        g = np.zeros_like(a.data)
        g[:, lo:hi] = out.grad
        _accum(a, g)
    return _node(out_data, (a,), bwd)


def take_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    if a.data.ndim != 2:
        raise ContractViolation(f"take_rows: expected 2-d, got {a.data.shape}")
    out_data = a.data[idx]

    def bwd(out):
        g = np.zeros_like(a.data)
        np.add.at(g, idx, out.grad)
        _accum(a, g)
    return _node(out_data, (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    out_data = a.data.reshape(shape)

    def bwd(out):
        _accum(a, out.grad.reshape(a.data.shape))
    return _node(out_data, (a,), bwd)


def embedding_sum(table: Tensor, bags: list[list[int]]) -> Tensor:
    """Row i of the output is the sum of table rows listed in bags[i]
    (embedding lookup generalized to bag-of-ids sums)."""
    if table.data.ndim != 2:
        raise ContractViolation(f"embedding_sum: table must be 2-d, got {table.data.shape}")
    d = table.data.shape[1]
    out_data = np.zeros((len(bags), d), dtype=table.data.dtype)
    flat = []
    rows = []
    for i, bag in enumerate(bags):
        if not bag:
            raise ContractViolation(f"embedding_sum: empty bag at row {i}")
        out_data[i] = table.data[bag].sum(axis=0)
        flat.extend(bag)
        rows.extend([i] * len(bag))
    flat_idx = np.asarray(flat, dtype=np.intp)
    row_idx = np.asarray(rows, dtype=np.intp)

    def bwd(out):
        g = np.zeros_like(table.data)
        np.add.at(g, flat_idx, out.grad[row_idx])
        _accum(table, g)
    return _node(out_data, (table,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    # stable piecewise evaluation
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def bwd(out):
        _accum(a, out.grad * out_data * (1.0 - out_data))
    return _node(out_data, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def bwd(out):
        _accum(a, out.grad * (1.0 - out_data * out_data))
    return _node(out_data, (a,), bwd)


def softmax_rows(a: Tensor, temperature: float = 1.0) -> Tensor:
    """Row-wise softmax of a/temperature with max-subtraction stabilization."""
    if a.data.ndim != 2:
        raise ContractViolation(f"softmax_rows: expected 2-d, got {a.data.shape}")
    if temperature <= 0:
        raise ContractViolation(f"softmax_rows: temperature must be positive, got {temperature}")
    s = a.data / temperature
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)
    out_data = e / e.sum(axis=1, keepdims=True)

    def bwd(out):
        dot = (out.grad * out_data).sum(axis=1, keepdims=True)
        _accum(a, out_data * (out.grad - dot) / temperature)
    return _node(out_data, (a,), bwd)


def sum_axis(a: Tensor, axis=None) -> Tensor:
    out_data = a.data.sum(axis=axis)

    def bwd(out):
        if axis is None:
            _accum(a, np.full_like(a.data, out.grad))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(out.grad, axis), a.data.shape).copy())
    return _node(out_data, (a,), bwd)


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Sum of binary cross-entropy terms between sigmoid(logits) and 0/1
    targets, computed stably from the logits:
    max(x, 0) - x*t + log(1 + exp(-|x|)), summed over all entries."""
    t = np.asarray(targets, dtype=logits.data.dtype)
    if t.shape != logits.data.shape:
        raise ContractViolation(f"bce_with_logits: shape mismatch {logits.data.shape} vs {t.shape}")
    x = logits.data
    out_data = np.array((np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))).sum(),
                        dtype=x.dtype)

    def bwd(out):
        p = np.empty_like(x)
        pos = x >= 0
        p[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        p[~pos] = ex / (1.0 + ex)
        _accum(logits, out.grad * (p - t))
    return _node(out_data, (logits,), bwd)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into .grad of every reachable leaf.

    The tape may be consumed once; calling backward twice on the same loss
    node without rebuilding the graph is a contract violation.
    """
    if loss.data.ndim != 0:
        raise ContractViolation(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if loss._spent:
        raise ContractViolation("backward called twice on the same tape")
    loss._spent = True

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones((), dtype=loss.data.dtype)
    for node in reversed(topo):
        if node._bwd is not None and node.grad is not None:
            node._bwd(node)


def zero_grads(params) -> None:
    for p in (params.values() if isinstance(params, dict) else params):
        p.grad = None


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def uniform_init(rng: np.random.Generator, shape, d: int, dtype, name=None) -> Tensor:
    """uniform(-1/sqrt(d), 1/sqrt(d)) init for weight matrices and embeddings."""
    bound = 1.0 / np.sqrt(d)
    return leaf(rng.uniform(-bound, bound, size=shape).astype(dtype), name=name)


def zeros_init(shape, dtype, name=None) -> Tensor:
    return leaf(np.zeros(shape, dtype=dtype), name=name)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    worst_index: tuple
    analytic: float
    numeric: float


@dataclass
class GradCheckReport:
    tolerance: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.max_rel_err < self.tolerance for e in self.entries)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def summary(self) -> str:
        lines = [f"{'PASS' if self.passed else 'FAIL'} (tol {self.tolerance:g}, "
                 f"max rel err {self.max_rel_err:.3g})"]
        for e in self.entries:
            flag = "ok " if e.max_rel_err < self.tolerance else "BAD"
            lines.append(f"  [{flag}] {e.name:40s} max_rel_err={e.max_rel_err:.3g} "
                         f"at {e.worst_index} (analytic={e.analytic:.6g}, numeric={e.numeric:.6g})")
        return "\n".join(lines)


def grad_check(loss_fn, params: dict[str, Tensor], epsilon: float = 1e-5,
               tolerance: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of loss_fn() against central differences.

    loss_fn must rebuild the graph on every call and return a scalar Tensor.
    Requires 64-bit parameters; finite differences drown in float32 noise.
    """
    for name, p in params.items():
        if p.data.dtype != np.float64:
            raise ConfigError(f"grad_check requires float64 parameters, {name} is {p.data.dtype}")

    zero_grads(params)
    loss = loss_fn()
    backward(loss)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in params.items()}

    report = GradCheckReport(tolerance=tolerance)
    for name in sorted(params):
        p = params[name]
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = float(loss_fn().data)
            flat[i] = orig - epsilon
            lo = float(loss_fn().data)
            flat[i] = orig
            num_flat[i] = (hi - lo) / (2.0 * epsilon)
        a = analytic[name]
        # the floor keeps central-difference noise (~1e-10 absolute at typical
        # loss scales) from dominating components whose true gradient is ~0
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-5)
        rel = np.abs(a - numeric) / denom
        worst = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.size else ()
        report.entries.append(GradCheckEntry(
            name=name,
            max_rel_err=float(rel.max()) if rel.size else 0.0,
            worst_index=tuple(int(w) for w in worst),
            analytic=float(a[worst]) if rel.size else 0.0,
            numeric=float(numeric[worst]) if rel.size else 0.0,
        ))
    return report


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------
# A zip archive holding manifest.json plus one raw little-endian payload per
# tensor. Records default to float32; float64 payloads keep a dtype marker so
# a 64-bit training run can resume bit-for-bit.

_DTYPE_CODES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8")}


def save_archive(path: str, arrays: dict[str, np.ndarray], manifest: dict,
                 keep_dtype: bool = False) -> None:
    records = []
    payloads = {}
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        if keep_dtype and arr.dtype == np.float64:
            code = "f8"
        else:
            code = "f4"
        data = np.ascontiguousarray(arr, dtype=_DTYPE_CODES[code])
        records.append({"name": name, "shape": list(arr.shape), "dtype": code})
        payloads[name] = data.tobytes()
    full = dict(manifest)
    full["records"] = records
    tmp = f"{path}.tmp"
    with zipfile.ZipFile(tmp, "w", zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("manifest.json", json.dumps(full, indent=1, sort_keys=True))
        for name in sorted(payloads):
            zf.writestr(f"tensors/{name}.bin", payloads[name])
    import os
    os.replace(tmp, path)


def load_archive(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        arrays = {}
        for rec in manifest["records"]:
            raw = zf.read(f"tensors/{rec['name']}.bin")
            arr = np.frombuffer(raw, dtype=_DTYPE_CODES[rec["dtype"]])
            arrays[rec["name"]] = arr.reshape(rec["shape"]).copy()
    return arrays, manifest


def config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()
