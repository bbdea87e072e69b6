"""Dense float64 tensors with tape-based reverse-mode differentiation.

A :class:`Tape` records every differentiable operation in execution order;
``Tape.gradients`` replays the records in exact reverse order, accumulating
adjoints keyed by tensor identity. Tensors without a tape are constants and
add no recording overhead. All storage is float64 and all operations are
pure: ``.data`` arrays are never mutated, which keeps replayed runs
bit-identical under a fixed seed.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ZeroNormError

# Row norms below this are treated as exactly zero by the fallback cosine
# variants; it guards the 1/norm backward terms against overflow.
_NORM_FLOOR = 1e-30


class Tensor:
    """A float64 array plus the tape (if any) that is recording it."""

    __slots__ = ("data", "tape")

    def __init__(self, data, tape: "Tape | None" = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, taped={self.tape is not None})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Execution-ordered record of differentiable operations.

    One tape per logical training step; a tape must not be shared across
    threads. ``gradients`` walks the records strictly in reverse execution
    order, which is a valid topological order because inputs always exist
    before the op that consumes them.
    """

    def __init__(self):
        self._records: list[Callable[[dict], None]] = []

    def tensor(self, data) -> Tensor:
        """Wrap ``data`` as a tensor tracked by this tape (no copy for float64 arrays)."""
        return Tensor(data, tape=self)

    def _record(self, fn: Callable[[dict], None]) -> None:
        self._records.append(fn)

    def __len__(self):
        return len(self._records)

    def gradients(self, loss: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """Adjoints of scalar ``loss`` with respect to each source tensor."""
        if loss.data.shape != ():
            raise ValueError(f"loss must be a scalar, got shape {loss.data.shape}")
        adj: dict[int, np.ndarray] = {id(loss): np.ones(())}
        for fn in reversed(self._records):
            fn(adj)
        return [
            np.asarray(adj.get(id(s), np.zeros_like(s.data)), dtype=np.float64)
            for s in sources
        ]


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*ts: Tensor) -> Tape | None:
    tape = None
    for t in ts:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError("operands belong to different tapes")
            tape = t.tape
    return tape


def _acc(adj: dict, t: Tensor, g: np.ndarray) -> None:
    cur = adj.get(id(t))
    adj[id(t)] = g if cur is None else cur + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, (gs, s) in enumerate(zip(g.shape, shape)):
        if s == 1 and gs != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    tape = _tape_of(a, b)
    out = Tensor(a.data + b.data, tape)
    if tape is not None:

        def bw(adj, out=out):
            g = adj.get(id(out))
            if g is None:
                return
            if a.tape is not None:
                _acc(adj, a, _unbroadcast(g, a.data.shape))
            if b.tape is not None:
                _acc(adj, b, _unbroadcast(g, b.data.shape))

        tape._record(bw)
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    tape = _tape_of(a, b)
    out = Tensor(a.data - b.data, tape)
    if tape is not None:

        def bw(adj, out=out):
            g = adj.get(id(out))
            if g is None:
                return
            if a.tape is not None:
                _acc(adj, a, _unbroadcast(g, a.data.shape))
            if b.tape is not None:
                _acc(adj, b, _unbroadcast(-g, b.data.shape))

        tape._record(bw)
    return out


def neg(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(-a.data, a.tape)
    if a.tape is not None:

        def bw(adj, out=out):
            g = adj.get(id(out))
            if g is not None:
                _acc(adj, a, -g)

        a.tape._record(bw)
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    tape = _tape_of(a, b)
    out = Tensor(a.data * b.data, tape)
    if tape is not None:

        def bw(adj, out=out):
            g = adj.get(id(out))
            if g is None:
                return
            if a.tape is not None:
                _acc(adj, a, _unbroadcast(g * b.data, a.data.shape))
            if b.tape is not None:
                _acc(adj, b, _unbroadcast(g * a.data, b.data.shape))

        tape._record(bw)
    return out


def matmul(a, b) -> Tensor:
    """Matrix product for (2-D @ 2-D) or (1-D @ 2-D) operands."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.ndim != 2 or a.ndim not in (1, 2):
        raise ValueError(f"unsupported matmul shapes {a.shape} @ {b.shape}")
    tape = _tape_of(a, b)
    out = Tensor(a.data @ b.data, tape)
    if tape is not None:

        def bw(adj, out=out):
            g = adj.get(id(out))
            if g is None:
                return
            if a.tape is not None:
                _acc(adj, a, g @ b.data.T if a.ndim == 2 else b.data @ g)
            if b.tape is not None:
                _acc(adj, b, a.data.T @ g if a.ndim == 2 else np.outer(a.data, g))

        tape._record(bw)
    return out


def dot(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 1 or b.ndim != 1:
        raise ValueError("dot expects 1-D operands")
    tape = _tape_of(a, b)
    out = Tensor(a.data @ b.data, tape)
    if tape is not None:

        def bw(adj, out=out):
            g = adj.get(id(out))
            if g is None:
                return
            if a.tape is not None:
                _acc(adj, a, g * b.data)
            if b.tape is not None:
                _acc(adj, b, g * a.data)

        tape._record(bw)
    return out


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    tape = _tape_of(*parts)
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis), tape)
    if tape is not None:
        sizes = [p.data.shape[axis] for p in parts]
        offsets = np.cumsum([0] + sizes)

        def bw(adj, out=out):
            g = adj.get(id(out))
            if g is None:
                return
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if p.tape is not None:
                    idx = [slice(None)] * g.ndim
                    idx[axis] = slice(lo, hi)
                    _acc(adj, p, g[tuple(idx)])

        tape._record(bw)
    return out


def split(t, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    t = _as_tensor(t)
    if sum(sizes) != t.data.shape[axis]:
        raise ValueError(f"split sizes {sizes} do not cover axis of length {t.data.shape[axis]}")
    offsets = np.cumsum([0] + list(sizes))
    outs = []
    for lo, hi in zip(offsets[:-1], offsets[1:]):
        idx = [slice(None)] * t.data.ndim
        idx[axis] = slice(lo, hi)
        outs.append(Tensor(t.data[tuple(idx)].copy(), t.tape))
    if t.tape is not None:

        def bw(adj, outs=tuple(outs)):
            if not any(id(o) in adj for o in outs):
                return
            pieces = [adj.get(id(o), np.zeros(o.data.shape)) for o in outs]
            _acc(adj, t, np.concatenate(pieces, axis=axis))

        t.tape._record(bw)
    return outs


def stack(vectors: Sequence) -> Tensor:
    """Stack 1-D tensors into a matrix, one row each."""
    vectors = [_as_tensor(v) for v in vectors]
    tape = _tape_of(*vectors)
    out = Tensor(np.stack([v.data for v in vectors], axis=0), tape)
    if tape is not None:

        def bw(adj, out=out):
            g = adj.get(id(out))
            if g is None:
                return
            for i, v in enumerate(vectors):
                if v.tape is not None:
                    _acc(adj, v, g[i])

        tape._record(bw)
    return out


def reshape(t, shape) -> Tensor:
    t = _as_tensor(t)
    out = Tensor(t.data.reshape(shape), t.tape)
    if t.tape is not None:

        def bw(adj, out=out):
            g = adj.get(id(out))
            if g is not None:
                _acc(adj, t, g.reshape(t.data.shape))

        t.tape._record(bw)
    return out


def gather_rows(m, indices) -> Tensor:
    """Select rows of a matrix; backward scatter-adds into the source."""
    m = _as_tensor(m)
    idx = np.asarray(indices, dtype=np.intp)
    out = Tensor(m.data[idx], m.tape)
    if m.tape is not None:

        def bw(adj, out=out):
            g = adj.get(id(out))
            if g is None:
                return
            buf = np.zeros_like(m.data)
            np.add.at(buf, idx, g)
            _acc(adj, m, buf)

        m.tape._record(bw)
    return out


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0), a.tape)
    if a.tape is not None:
        mask = a.data > 0

        def bw(adj, out=out):
            g = adj.get(id(out))
            if g is not None:
                _acc(adj, a, g * mask)

        a.tape._record(bw)
    return out


def absolute(a) -> Tensor:
    """Elementwise |a| with subgradient 0 at 0."""
    a = _as_tensor(a)
    out = Tensor(np.abs(a.data), a.tape)
    if a.tape is not None:
        sgn = np.sign(a.data)

        def bw(adj, out=out):
            g = adj.get(id(out))
            if g is not None:
                _acc(adj, a, g * sgn)

        a.tape._record(bw)
    return out


def mean(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.mean(axis=axis), a.tape)
    if a.tape is not None:
        count = a.data.size if axis is None else a.data.shape[axis]

        def bw(adj, out=out):
            g = adj.get(id(out))
            if g is None:
                return
            if axis is not None:
                g = np.expand_dims(g, axis)
            _acc(adj, a, np.broadcast_to(g / count, a.data.shape))

        a.tape._record(bw)
    return out


def l2_normalize(a) -> Tensor:
    """Normalize the last axis to unit euclidean norm (norms floored at 1e-12)."""
    a = _as_tensor(a)
    norms = np.sqrt(np.sum(a.data * a.data, axis=-1, keepdims=True))
    n = np.maximum(norms, 1e-12)
    y = a.data / n
    out = Tensor(y, a.tape)
    if a.tape is not None:

        def bw(adj, out=out):
            g = adj.get(id(out))
            if g is None:
                return
            _acc(adj, a, (g - y * np.sum(y * g, axis=-1, keepdims=True)) / n)

        a.tape._record(bw)
    return out


def softmax_cross_entropy(logits, onehot) -> Tensor:
    """Mean softmax cross-entropy between (n, k) logits and one-hot targets.

    Targets are treated as constants in the backward pass.
    """
    logits = _as_tensor(logits)
    targets = onehot.data if isinstance(onehot, Tensor) else np.asarray(onehot, dtype=np.float64)
    if logits.data.shape != targets.shape:
        raise ValueError(f"logits shape {logits.data.shape} != targets shape {targets.shape}")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax + np.log(np.sum(np.exp(z - zmax), axis=1, keepdims=True))
    logp = z - lse
    n = z.shape[0]
    out = Tensor(-np.sum(targets * logp) / n, logits.tape)
    if logits.tape is not None:
        probs = np.exp(logp)

        def bw(adj, out=out):
            g = adj.get(id(out))
            if g is not None:
                _acc(adj, logits, g * (probs - targets) / n)

        logits.tape._record(bw)
    return out


def euclidean_distance(a, b) -> Tensor:
    """||a - b|| for 1-D vectors, with subgradient 0 at coincident points."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 1 or b.ndim != 1:
        raise ValueError("euclidean_distance expects 1-D operands")
    diff = a.data - b.data
    d = float(np.sqrt(diff @ diff))
    tape = _tape_of(a, b)
    out = Tensor(d, tape)
    if tape is not None:

        def bw(adj, out=out):
            g = adj.get(id(out))
            if g is None or d <= _NORM_FLOOR:
                return
            ga = g * diff / d
            if a.tape is not None:
                _acc(adj, a, ga)
            if b.tape is not None:
                _acc(adj, b, -ga)

        tape._record(bw)
    return out


def row_euclidean(a, b) -> Tensor:
    """Per-row ||a_i - b_i|| for (n, d) operands; returns shape (n,)."""
    a, b = _as_tensor(a), _as_tensor(b)
    diff = a.data - b.data
    d = np.sqrt(np.sum(diff * diff, axis=1))
    tape = _tape_of(a, b)
    out = Tensor(d, tape)
    if tape is not None:
        safe = np.maximum(d, _NORM_FLOOR)
        live = (d > _NORM_FLOOR).astype(np.float64)

        def bw(adj, out=out):
            g = adj.get(id(out))
            if g is None:
                return
            ga = (g * live / safe)[:, None] * diff
            if a.tape is not None:
                _acc(adj, a, ga)
            if b.tape is not None:
                _acc(adj, b, -ga)

        tape._record(bw)
    return out


def cosine_similarity(a, b) -> Tensor:
    """cos(a, b) for 1-D vectors of equal positive norm; symmetric by construction."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 1 or b.ndim != 1 or a.data.shape != b.data.shape:
        raise ValueError(f"cosine expects equal-length 1-D vectors, got {a.shape}, {b.shape}")
    na = float(np.sqrt(a.data @ a.data))
    nb = float(np.sqrt(b.data @ b.data))
    if na == 0.0 or nb == 0.0:
        raise ZeroNormError("cosine similarity of a zero vector is undefined")
    u = a.data / na
    v = b.data / nb
    c = float(u @ v)
    tape = _tape_of(a, b)
    out = Tensor(c, tape)
    if tape is not None:

        def bw(adj, out=out):
            g = adj.get(id(out))
            if g is None:
                return
            if a.tape is not None:
                _acc(adj, a, g * (v - c * u) / na)
            if b.tape is not None:
                _acc(adj, b, g * (u - c * v) / nb)

        tape._record(bw)
    return out


def row_cosine_or_zero(a, b) -> tuple[Tensor, np.ndarray]:
    """Per-row cosine for (n, d) operands; zero-norm rows yield 0 with no gradient.

    Returns (similarities, zero_mask) where zero_mask marks the rows that hit
    the zero-norm fallback.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    na = np.sqrt(np.sum(a.data * a.data, axis=1))
    nb = np.sqrt(np.sum(b.data * b.data, axis=1))
    zero = (na <= _NORM_FLOOR) | (nb <= _NORM_FLOOR)
    sa = np.where(zero, 1.0, na)
    sb = np.where(zero, 1.0, nb)
    u = a.data / sa[:, None]
    v = b.data / sb[:, None]
    c = np.where(zero, 0.0, np.sum(u * v, axis=1))
    tape = _tape_of(a, b)
    out = Tensor(c, tape)
    if tape is not None:
        live = (~zero).astype(np.float64)

        def bw(adj, out=out):
            g = adj.get(id(out))
            if g is None:
                return
            gl = (g * live)[:, None]
            if a.tape is not None:
                _acc(adj, a, gl * (v - c[:, None] * u) / sa[:, None])
            if b.tape is not None:
                _acc(adj, b, gl * (u - c[:, None] * v) / sb[:, None])

        tape._record(bw)
    return out, zero
