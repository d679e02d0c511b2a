"""
Dense float64 tensors with a reverse-mode gradient tape.

Every tensor wraps a numpy ``float64`` array of rank 0, 1 or 2. Operations on
tensors that carry a :class:`Tape` are recorded on that tape; operations on
untaped tensors are plain numpy evaluations with no bookkeeping, which is what
inference uses.

Broadcasting
------------
Binary elementwise ops require equal shapes, with one documented exception:
the right operand may be a rank-1 *bias* of length ``n`` (added to every row of
an ``m x n`` matrix) or of length ``1`` (added to every entry). Nothing else
broadcasts.

Conventions
-----------
- Per-utterance vectors are ``1 x n`` rows.
- ``relu'(0) = 0``.
- ``softmax`` works along the last axis and subtracts the row max first.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "Parameter",
    "OpRecord",
    "ShapeError",
    "EmptyAttentionError",
    "NonFiniteError",
    "make_rng",
    "glorot_uniform",
    "matmul",
    "linear",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "tanh",
    "relu",
    "sigmoid",
    "softmax",
    "log",
    "concat",
    "rows",
    "take_row",
    "transpose",
    "embedding_lookup",
    "pick",
    "total",
    "elementwise",
    "GradCheckReport",
    "format_tol",
    "finite_diff_check",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class EmptyAttentionError(ValueError):
    """Softmax was asked to normalise zero entries."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf showed up where finite values are required."""


def make_rng(seed: int | Sequence[int]) -> np.random.Generator:
    """Return the project's one RNG: numpy's PCG64 seeded via SeedSequence.

    PCG64 output for a given seed is fixed across platforms and numpy
    versions, so every stream in the package is reproducible from its seed.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


class Tensor:
    """A float64 array, optionally linked to a gradient tape.

    ``node`` is the tensor's slot on its tape (``-1`` when untaped).
    """

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: Optional["Tape"] = None, node: int = -1):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeError(f"tensors are rank <= 2, got shape {arr.shape}")
        self.data = arr
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def tape_id(self) -> Optional[int]:
        return None if self.tape is None else id(self.tape)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        taped = "" if self.tape is None else f", node={self.node}"
        return f"Tensor(shape={self.shape}{taped})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Parameter:
    """A named trainable tensor. ``grad`` is filled by :meth:`Tape.backward`."""

    name: str
    value: Tensor
    grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def data(self) -> np.ndarray:
        return self.value.data


@dataclass
class OpRecord:
    kind: str
    inputs: tuple[int, ...]
    output: int
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    """Append-only log of ops; appending in execution order keeps it topological.

    One tape serves one forward/backward pass and is not shared across threads.
    With ``debug=True`` every recorded output is checked for NaN/Inf.
    """

    debug: bool = False
    records: list[OpRecord] = field(default_factory=list)
    _n_nodes: int = 0
    _watched: dict[int, tuple[Parameter, Tensor]] = field(default_factory=dict)

    def watch(self, param: Parameter) -> Tensor:
        """Return the taped view of ``param`` (shares its storage)."""
        key = id(param)
        hit = self._watched.get(key)
        if hit is not None:
            return hit[1]
        t = Tensor(param.value.data, self, self._new_node())
        self._watched[key] = (param, t)
        return t

    def _new_node(self) -> int:
        self._n_nodes += 1
        return self._n_nodes - 1

    def record(self, kind: str, out: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
        if self.debug and not np.all(np.isfinite(out)):
            raise NonFiniteError(f"non-finite output from {kind}")
        t = Tensor(out, self, self._new_node())
        self.records.append(OpRecord(kind, tuple(x.node for x in inputs), t.node, backward))
        return t

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Sweep the tape in reverse and store gradients on watched parameters.

        Parameters the loss never reached get zero gradients. Returns the
        gradients keyed by parameter name.
        """
        if loss.tape is not self:
            raise ValueError("loss is not recorded on this tape")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: list[Optional[np.ndarray]] = [None] * self._n_nodes
        grads[loss.node] = np.ones_like(loss.data)
        for rec in reversed(self.records):
            g = grads[rec.output]
            if g is None:
                continue
            for node, gi in zip(rec.inputs, rec.backward(g)):
                if node < 0 or gi is None:
                    continue
                if grads[node] is None:
                    grads[node] = gi
                else:
                    grads[node] = grads[node] + gi
        out = {}
        for param, t in self._watched.values():
            g = grads[t.node]
            param.grad = np.zeros_like(param.value.data) if g is None else np.array(g, dtype=np.float64)
            out[param.name] = param.grad
        return out


def _tape_of(*xs: Tensor) -> Optional[Tape]:
    tape = None
    for x in xs:
        if x.tape is not None:
            if tape is not None and x.tape is not tape:
                raise ValueError("operands belong to different tapes")
            tape = x.tape
    return tape


def _emit(kind: str, out: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor(out)
    return tape.record(kind, out, inputs, backward)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    A, B = a.data, b.data
    return _emit("matmul", A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """``x @ w.T + b`` for ``x: m x k``, ``w: n x k``, ``b: (n,)``."""
    X, W = x.data, w.data
    if X.ndim != 2 or W.ndim != 2 or X.shape[1] != W.shape[1]:
        raise ShapeError(f"linear dimension mismatch: input {x.shape}, weight {w.shape}")
    out = X @ W.T
    if b is None:
        return _emit("linear", out, (x, w), lambda g: (g @ W, g.T @ X))
    if b.shape != (W.shape[0],):
        raise ShapeError(f"linear bias shape {b.shape} does not match weight {w.shape}")
    out = out + b.data
    return _emit("linear", out, (x, w, b), lambda g: (g @ W, g.T @ X, g.sum(axis=0)))


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got {x.shape}")
    return _emit("transpose", x.data.T, (x,), lambda g: (g.T,))


# ---------------------------------------------------------------------------
# elementwise


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    if b.data.ndim == 1 and a.data.ndim >= 1 and b.shape[0] in (1, a.shape[-1]):
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == (1,):
        return np.array([g.sum()])
    return g.reshape(-1, shape[0]).sum(axis=0)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "add")
    sb = b.shape
    return _emit("add", a.data + b.data, (a, b), lambda g: (g, _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "sub")
    sb = b.shape
    return _emit("sub", a.data - b.data, (a, b), lambda g: (g, -_unbroadcast(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "mul")
    A, B = a.data, b.data
    sb = b.shape
    return _emit("mul", A * B, (a, b), lambda g: (g * B, _unbroadcast(g * A, sb)))


def scale(a: Tensor, c: float) -> Tensor:
    return _emit("scale", a.data * c, (a,), lambda g: (g * c,))


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _emit("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0
    return _emit("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    X = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(X))
    y = np.where(X >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _emit("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def log(x: Tensor, floor: float = 1e-12) -> Tensor:
    """Natural log with the input clamped at ``floor`` (no gradient below it)."""
    X = x.data
    live = X > floor
    y = np.log(np.where(live, X, floor))
    return _emit("log", y, (x,), lambda g: (np.where(live, g / np.where(live, X, 1.0), 0.0),))


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "tanh": tanh, "relu": relu, "sigmoid": sigmoid}


def elementwise(op: str, *args: Tensor) -> Tensor:
    """Dispatch by name: ``elementwise("mul", a, b)``."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {sorted(_ELEMENTWISE)}") from None
    return fn(*args)


# ---------------------------------------------------------------------------
# normalisation and reductions


def softmax(x: Tensor) -> Tensor:
    X = x.data
    if X.ndim == 0 or X.shape[-1] == 0:
        raise EmptyAttentionError(f"softmax over an empty axis (shape {x.shape})")
    e = np.exp(X - X.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)
    return _emit("softmax", s, (x,), lambda g: (s * (g - (g * s).sum(axis=-1, keepdims=True)),))


def total(x: Tensor) -> Tensor:
    """Sum of all entries, as a rank-0 tensor."""
    shape = x.shape
    return _emit("sum", np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def pick(x: Tensor, row: int, col: int) -> Tensor:
    """Entry ``x[row, col]`` as a rank-0 tensor."""
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        out[row, col] = g
        return (out,)

    return _emit("pick", np.array(x.data[row, col]), (x,), back)


# ---------------------------------------------------------------------------
# structural


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Join along ``axis``. Zero-length pieces are allowed."""
    if not tensors:
        raise ShapeError("concat of nothing")
    ndim = tensors[0].data.ndim
    if ndim == 0 or any(t.data.ndim != ndim for t in tensors):
        raise ShapeError(f"concat rank mismatch: {[t.shape for t in tensors]}")
    ax = axis % ndim
    ref = tensors[0].shape
    for t in tensors[1:]:
        if any(t.shape[d] != ref[d] for d in range(ndim) if d != ax):
            raise ShapeError(f"concat off-axis mismatch on axis {ax}: {[t.shape for t in tensors]}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    cuts = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return _emit("concat", out, tuple(tensors), lambda g: tuple(np.split(g, cuts, axis=ax)))


def rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Row block ``x[start:stop]`` of a matrix."""
    if x.data.ndim != 2 or not 0 <= start <= stop <= x.shape[0]:
        raise IndexError(f"rows[{start}:{stop}] out of range for shape {x.shape}")
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        out[start:stop] = g
        return (out,)

    return _emit("rows", x.data[start:stop], (x,), back)


def take_row(x: Tensor, i: int) -> Tensor:
    return rows(x, i, i + 1)


def embedding_lookup(table: Tensor, index: int) -> Tensor:
    """Row ``index`` of ``table`` as a ``1 x d`` copy."""
    L = table.shape[0]
    if not 0 <= index < L:
        raise IndexError(f"embedding index {index} out of range for {L} rows")
    return rows(table, index, index + 1)


# ---------------------------------------------------------------------------
# finite differences


def format_tol(x: float) -> str:
    """Short scientific form without exponent padding: ``1e-06`` becomes ``1e-6``."""
    mant, _, exp = f"{x:g}".partition("e")
    return f"{mant}e{int(exp)}" if exp else mant


@dataclass
class GradCheckReport:
    per_param: dict[str, float]
    tol: float
    step: float

    @property
    def max_rel_err(self) -> float:
        return max(self.per_param.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def lines(self) -> list[str]:
        out = [f"{name:<24s} max_rel_err={err:.3e}" for name, err in self.per_param.items()]
        verdict = "PASS" if self.passed else "FAIL"
        cmp = "<" if self.passed else ">="
        out.append(f"{verdict} max_rel_err {cmp} {format_tol(self.tol)} (observed {self.max_rel_err:.3e})")
        return out


def finite_diff_check(
    f: Callable[[Optional[Tape]], Tensor],
    params: Iterable[Parameter],
    step: float = 1e-5,
    tol: float = 1e-6,
) -> GradCheckReport:
    """Compare tape gradients of ``f`` with central differences.

    ``f(tape)`` must build its scalar loss from ``tape.watch(p)`` views of
    ``params`` when given a tape, and from the raw values when given ``None``.
    The error per entry is ``|g_ad - g_fd| / max(1, |g_fd|)``.
    """
    params = list(params)
    tape = Tape(debug=True)
    tape.backward(f(tape))
    per_param = {}
    for p in params:
        w = p.value.data
        flat = w.reshape(-1)
        ad = p.grad.reshape(-1)
        worst = 0.0
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = f(None).item()
            flat[k] = orig - step
            down = f(None).item()
            flat[k] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteError(f"non-finite loss while perturbing {p.name}[{k}]")
            fd = (up - down) / (2.0 * step)
            worst = max(worst, abs(ad[k] - fd) / max(1.0, abs(fd)))
        per_param[p.name] = worst
    return GradCheckReport(per_param, tol, step)
