"""Dense float64 tensors, a reverse-mode tape, and seedable randomness.

Everything downstream runs on these three pieces: real row-major tensors
(complex values live as trailing (re, im) pairs so there is a single autodiff
pathway), a tape whose backward pass walks nodes once in reverse insertion
order, and an xorshift128+ generator with 128 bits of state.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "NonFiniteError",
    "Rng",
    "Tensor",
    "Tape",
    "add",
    "sub",
    "mul",
    "neg",
    "exp",
    "log",
    "tanh",
    "pow_const",
    "maximum_const",
    "matmul",
    "tsum",
    "tmean",
    "reshape",
    "concat",
    "take",
    "flip",
    "gather_rows",
    "sigmoid",
    "gelu",
    "round_half_away",
    "softmax",
    "categorical_sample",
    "derive_seed",
]

_MASK64 = (1 << 64) - 1


class NonFiniteError(ArithmeticError):
    """A tensor operation produced NaN or Inf."""


# ---------------------------------------------------------------------------
# random numbers


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, tag: int) -> int:
    """Deterministically derive an independent child seed for one consumer."""
    return _splitmix64(_splitmix64(seed & _MASK64) ^ _splitmix64((tag + 1) & _MASK64))


class Rng:
    """xorshift128+ generator: 128-bit state, identical stream for equal seeds.

    The algorithm id is recorded in checkpoints so a saved run pins the
    generator family it was produced with. Single-owner: not safe for
    concurrent mutation; use split() to hand independent streams out.
    """

    ALGORITHM = "xorshift128plus"

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        s = self.seed
        s0 = _splitmix64(s)
        s1 = _splitmix64(s0)
        if s0 == 0 and s1 == 0:  # all-zero state would be a fixed point
            s1 = 1
        self._s0 = s0
        self._s1 = s1

    def _next_u64(self) -> int:
        s1 = self._s0
        s0 = self._s1
        result = (s0 + s1) & _MASK64
        self._s0 = s0
        s1 ^= (s1 << 23) & _MASK64
        self._s1 = s1 ^ s0 ^ (s1 >> 18) ^ (s0 >> 5)
        return result

    def uniform(self) -> float:
        """One draw in [0, 1), consuming 53 bits of the stream."""
        return (self._next_u64() >> 11) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        """Integer in [0, n) via the uniform stream (one draw)."""
        if n <= 0:
            raise ValueError("below() needs n >= 1")
        return min(int(self.uniform() * n), n - 1)

    def normal(self) -> float:
        """Standard normal via Box-Muller (two uniform draws, no caching)."""
        u1 = self.uniform()
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(1.0 - u1))
        return r * math.cos(2.0 * math.pi * u2)

    def normal_array(self, shape) -> np.ndarray:
        out = np.empty(int(np.prod(shape)), dtype=np.float64)
        for i in range(out.size):
            out[i] = self.normal()
        return out.reshape(shape)

    def uniform_array(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        out = np.empty(int(np.prod(shape)), dtype=np.float64)
        span = high - low
        for i in range(out.size):
            out[i] = low + span * self.uniform()
        return out.reshape(shape)

    def split(self, tag: int) -> "Rng":
        return Rng(derive_seed(self.seed, tag))


# ---------------------------------------------------------------------------
# tensors and the tape


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim > 0 and not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


class Tensor:
    """Immutable-by-convention float64 array, optionally attached to a tape."""

    __slots__ = ("data", "tape", "node", "requires_grad")

    def __init__(self, data, tape: "Tape | None" = None, node: int | None = None,
                 requires_grad: bool = False):
        self.data = _as_array(data)
        self.tape = tape
        self.node = node
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, taped={self.tape is not None})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class _Node:
    __slots__ = ("op", "inputs", "back")

    def __init__(self, op: str, inputs: tuple[int, ...], back: Callable):
        self.op = op
        self.inputs = inputs
        self.back = back


class Tape:
    """Ordered op records; insertion order is a topological order by
    construction. Single-owner: one forward/backward at a time."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._leaves: dict[int, tuple[int, ...]] = {}

    def leaf(self, data, requires_grad: bool = False) -> Tensor:
        t = Tensor(data, tape=self, node=len(self.nodes), requires_grad=requires_grad)
        self.nodes.append(_Node("leaf", (), lambda g, acc: None))
        if requires_grad:
            self._leaves[t.node] = t.data.shape
        return t

    def record(self, op: str, out: np.ndarray, inputs: Sequence[Tensor],
               back: Callable) -> Tensor:
        """Append one op record. ``back(g, accumulate)`` receives the output
        adjoint and a callback ``accumulate(input_position, grad_array)``."""
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(f"op '{op}' produced non-finite values")
        ids = tuple(t.node for t in inputs)
        t = Tensor(out, tape=self, node=len(self.nodes), requires_grad=True)
        self.nodes.append(_Node(op, ids, back))
        return t

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Reverse sweep from a scalar loss.

        Returns adjoints for every requires_grad leaf; leaves the loss does
        not depend on get zeros. Each node is visited exactly once, in
        reverse insertion order.
        """
        if loss.tape is not self:
            raise ValueError("loss does not belong to this tape")
        if loss.data.size != 1:
            raise ValueError("backward requires a scalar loss")
        grads: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.data)}
        for nid in range(len(self.nodes) - 1, -1, -1):
            g = grads.pop(nid, None)
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient at node {nid}")
            node = self.nodes[nid]
            if node.op == "leaf":
                grads[nid] = g  # keep leaf adjoints
                continue

            def accumulate(pos: int, garr: np.ndarray, _ids=node.inputs):
                tid = _ids[pos]
                prev = grads.get(tid)
                grads[tid] = garr if prev is None else prev + garr

            node.back(g, accumulate)
        out: dict[int, np.ndarray] = {}
        for leaf_id, shape in self._leaves.items():
            g = grads.get(leaf_id)
            out[leaf_id] = np.zeros(shape, dtype=np.float64) if g is None else g
        return out


# --- op plumbing -----------------------------------------------------------


def _coerce(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _tape_of(*ts: Tensor) -> Tape | None:
    tape = None
    for t in ts:
        if t.tape is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise ValueError("operands belong to different tapes")
    return tape


def _finish(op: str, out: np.ndarray, inputs: Sequence[Tensor], back: Callable) -> Tensor:
    tape = _tape_of(*inputs)
    if tape is None:
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(f"op '{op}' produced non-finite values")
        return Tensor(out)
    # constants must become tape leaves so input ids exist
    bound = [t if t.tape is not None else tape.leaf(t.data) for t in inputs]
    return tape.record(op, out, bound, back)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# --- elementwise -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data + b.data

    def back(g, acc):
        acc(0, _unbroadcast(g, a.data.shape))
        acc(1, _unbroadcast(g, b.data.shape))

    return _finish("add", out, [a, b], back)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data - b.data

    def back(g, acc):
        acc(0, _unbroadcast(g, a.data.shape))
        acc(1, _unbroadcast(-g, b.data.shape))

    return _finish("sub", out, [a, b], back)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def back(g, acc):
        acc(0, _unbroadcast(g * bd, ad.shape))
        acc(1, _unbroadcast(g * ad, bd.shape))

    return _finish("mul", out, [a, b], back)


def neg(a) -> Tensor:
    a = _coerce(a)
    return _finish("neg", -a.data, [a], lambda g, acc: acc(0, -g))


def exp(a) -> Tensor:
    a = _coerce(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _finish("exp", out, [a], lambda g, acc: acc(0, g * out))


def log(a) -> Tensor:
    a = _coerce(a)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(a.data)
    ad = a.data
    return _finish("log", out, [a], lambda g, acc: acc(0, g / ad))


def tanh(a) -> Tensor:
    a = _coerce(a)
    out = np.tanh(a.data)
    return _finish("tanh", out, [a], lambda g, acc: acc(0, g * (1.0 - out * out)))


def pow_const(a, k: float) -> Tensor:
    a = _coerce(a)
    out = a.data ** k
    ad = a.data
    return _finish("pow", out, [a], lambda g, acc: acc(0, g * k * ad ** (k - 1.0)))


def maximum_const(a, k: float) -> Tensor:
    """Elementwise max with a constant; gradient flows where a >= k."""
    a = _coerce(a)
    out = np.maximum(a.data, k)
    mask = (a.data >= k).astype(np.float64)
    return _finish("maxc", out, [a], lambda g, acc: acc(0, g * mask))


# --- shape and reduction ---------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul expects operands with ndim >= 2")
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def back(g, acc):
        acc(0, _unbroadcast(g @ bd.swapaxes(-1, -2), ad.shape))
        acc(1, _unbroadcast(ad.swapaxes(-1, -2) @ g, bd.shape))

    return _finish("matmul", out, [a, b], back)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.data.shape

    def back(g, acc):
        if axis is None:
            acc(0, np.broadcast_to(g, shape).copy())
            return
        axes = axis if isinstance(axis, tuple) else (axis,)
        gg = g
        if not keepdims:
            for ax in sorted(ax % len(shape) for ax in axes):
                gg = np.expand_dims(gg, ax)
        acc(0, np.broadcast_to(gg, shape).copy())

    return _finish("sum", np.asarray(out), [a], back)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= a.data.shape[ax]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    old = a.data.shape
    out = a.data.reshape(shape)
    return _finish("reshape", out, [a], lambda g, acc: acc(0, g.reshape(old)))


def concat(tensors: Iterable, axis: int) -> Tensor:
    ts = [_coerce(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]

    def back(g, acc):
        start = 0
        for i, s in enumerate(sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + s)
            acc(i, g[tuple(sl)])
            start += s

    return _finish("concat", out, ts, back)


def take(a, key) -> Tensor:
    """Basic (non-fancy) slicing; backward scatters into a zero buffer."""
    a = _coerce(a)
    out = a.data[key]
    shape = a.data.shape

    def back(g, acc):
        buf = np.zeros(shape, dtype=np.float64)
        buf[key] += g
        acc(0, buf)

    return _finish("take", np.ascontiguousarray(out), [a], back)


def flip(a, axis: int) -> Tensor:
    a = _coerce(a)
    out = np.flip(a.data, axis=axis).copy()
    return _finish("flip", out, [a], lambda g, acc: acc(0, np.flip(g, axis=axis).copy()))


def gather_rows(table, idx: np.ndarray) -> Tensor:
    """Row lookup (embedding); backward scatter-adds with np.add.at."""
    table = _coerce(table)
    idx = np.asarray(idx)
    out = table.data[idx]
    shape = table.data.shape

    def back(g, acc):
        buf = np.zeros(shape, dtype=np.float64)
        np.add.at(buf, idx, g)
        acc(0, buf)

    return _finish("gather", out, [table], back)


# --- composed activations --------------------------------------------------


def sigmoid(x) -> Tensor:
    return mul(add(tanh(mul(x, 0.5)), 1.0), 0.5)


_GELU_C = 0.7978845608
_GELU_A = 0.044715


def gelu(x) -> Tensor:
    """tanh-approximation GELU; one formula shared by every execution mode."""
    inner = mul(add(x, mul(pow_const(x, 3.0), _GELU_A)), _GELU_C)
    return mul(mul(x, add(tanh(inner), 1.0)), 0.5)


def gelu_np(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        inner = _GELU_C * (x + _GELU_A * x ** 3)
        return 0.5 * x * (1.0 + np.tanh(inner))


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


# ---------------------------------------------------------------------------
# sampling


def round_half_away(x):
    """Round half away from zero (the one rounding rule used everywhere)."""
    x = np.asarray(x, dtype=np.float64)
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax over the last axis of a plain array."""
    logits = np.asarray(logits, dtype=np.float64)
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def categorical_sample(logits, rng: Rng) -> int:
    """Index ~ softmax(logits) using one uniform draw and the inverse CDF."""
    if isinstance(logits, Tensor):
        logits = logits.data
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.size == 0:
        raise ValueError("categorical_sample needs a nonempty 1-d logits vector")
    if not np.all(np.isfinite(logits)):
        raise NonFiniteError("logits must be finite")
    probs = softmax(logits)
    u = rng.uniform()
    acc = 0.0
    for i in range(probs.size - 1):
        acc += probs[i]
        if u < acc:
            return i
    return probs.size - 1
