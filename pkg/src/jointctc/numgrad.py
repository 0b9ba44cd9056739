"""Dense float64 matrices with tape-based reverse-mode gradients.

Every value flowing through the models is a :class:`Tensor` wrapping a 2-D
``float64`` array.  While a :class:`Tape` is active, each operation that
touches a tensor requiring gradients appends a backward closure to the tape;
:meth:`Tape.backward` replays them in reverse order.  Outside a tape (or
inside :func:`no_grad`) operations are plain numpy evaluations.

Probability zero is ``-inf`` in log space throughout the package.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Param",
    "Tape",
    "no_grad",
    "zero_grads",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "tanh",
    "sigmoid",
    "concat_cols",
    "concat_rows",
    "take_rows",
    "transpose",
    "sum_all",
    "add_n",
    "softmax",
    "log_softmax",
    "nll_from_logits",
    "log_sum_exp",
    "check_gradients",
    "GradCheckReport",
    "DimensionError",
    "EvaluationError",
]

LOG_ZERO = -math.inf


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class EvaluationError(ArithmeticError):
    """A function evaluated to a non-finite value where a finite one is required."""


_local = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_local, "tape", None)


class Tensor:
    """A 2-D float64 array, optionally tracked for reverse-mode gradients."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError(f"Tensor must be 2-D, got shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__


class Param(Tensor):
    """A trainable tensor; its gradient buffer always exists."""

    __slots__ = ()

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True, name=name)
        self.data = np.ascontiguousarray(self.data)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


def zero_grads(params: Iterable[Param]) -> None:
    for p in params:
        p.zero_grad()


class Tape:
    """Records backward closures in execution order.

    Use as a context manager; tapes nest, the innermost one records.
    """

    def __init__(self):
        self._records: list[Callable[[], None]] = []
        self._saved = None

    def __len__(self) -> int:
        return len(self._records)

    def __enter__(self) -> "Tape":
        self._saved = _active_tape()
        _local.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _local.tape = self._saved
        self._saved = None

    def record(self, fn: Callable[[], None]) -> None:
        self._records.append(fn)

    def backward(self, out: Tensor, seed: np.ndarray | None = None) -> None:
        """Propagate d(out)/d(.) through every recorded operation.

        ``out`` is usually a 1x1 loss; ``seed`` overrides the all-ones
        output adjoint.
        """
        if not out.requires_grad:
            return
        out.grad = np.ones_like(out.data) if seed is None else np.array(seed, dtype=np.float64)
        for fn in reversed(self._records):
            fn()
        self._records.clear()


class no_grad:
    """Suspend recording, e.g. for finite differences or decoding."""

    def __enter__(self):
        self._saved = _active_tape()
        _local.tape = None
        return self

    def __exit__(self, *exc):
        _local.tape = self._saved


def _tracking(*tensors: Tensor) -> "Tape | None":
    tape = _active_tape()
    if tape is None:
        return None
    for t in tensors:
        if t.requires_grad:
            return tape
    return None


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _result(data: np.ndarray, tape: "Tape | None") -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = tape is not None
    out.name = ""
    return out


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    (ar, ac), (br, bc) = a.shape, b.shape
    if (ar != br and 1 not in (ar, br)) or (ac != bc and 1 not in (ac, bc)):
        raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}")


# -- elementary operations ---------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise DimensionError(f"matmul: {a.shape} x {b.shape}")
    tape = _tracking(a, b)
    out = _result(a.data @ b.data, tape)
    if tape is not None:

        def backward():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _acc(a, g @ b.data.T)
            if b.requires_grad:
                _acc(b, a.data.T @ g)

        tape.record(backward)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    tape = _tracking(a, b)
    out = _result(a.data + b.data, tape)
    if tape is not None:

        def backward():
            g = out.grad
            if g is None:
                return
            _acc(a, _unbroadcast(g, a.shape))
            _acc(b, _unbroadcast(g, b.shape))

        tape.record(backward)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    tape = _tracking(a, b)
    out = _result(a.data - b.data, tape)
    if tape is not None:

        def backward():
            g = out.grad
            if g is None:
                return
            _acc(a, _unbroadcast(g, a.shape))
            _acc(b, _unbroadcast(-g, b.shape))

        tape.record(backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    tape = _tracking(a, b)
    out = _result(a.data * b.data, tape)
    if tape is not None:

        def backward():
            g = out.grad
            if g is None:
                return
            _acc(a, _unbroadcast(g * b.data, a.shape))
            _acc(b, _unbroadcast(g * a.data, b.shape))

        tape.record(backward)
    return out


def scale(a: Tensor, s: float) -> Tensor:
    tape = _tracking(a)
    out = _result(a.data * s, tape)
    if tape is not None:

        def backward():
            if out.grad is not None:
                _acc(a, out.grad * s)

        tape.record(backward)
    return out


def tanh(a: Tensor) -> Tensor:
    tape = _tracking(a)
    y = np.tanh(a.data)
    out = _result(y, tape)
    if tape is not None:

        def backward():
            if out.grad is not None:
                _acc(a, out.grad * (1.0 - y * y))

        tape.record(backward)
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form avoids overflow in exp for large |x|
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def sigmoid(a: Tensor) -> Tensor:
    tape = _tracking(a)
    y = _sigmoid(a.data)
    out = _result(y, tape)
    if tape is not None:

        def backward():
            if out.grad is not None:
                _acc(a, out.grad * y * (1.0 - y))

        tape.record(backward)
    return out


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    rows = parts[0].rows
    if any(p.rows != rows for p in parts):
        raise DimensionError("concat_cols: row counts differ")
    tape = _tracking(*parts)
    out = _result(np.concatenate([p.data for p in parts], axis=1), tape)
    if tape is not None:
        bounds = np.cumsum([0] + [p.cols for p in parts])

        def backward():
            g = out.grad
            if g is None:
                return
            for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
                _acc(p, g[:, lo:hi])

        tape.record(backward)
    return out


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    cols = parts[0].cols
    if any(p.cols != cols for p in parts):
        raise DimensionError("concat_rows: column counts differ")
    tape = _tracking(*parts)
    out = _result(np.concatenate([p.data for p in parts], axis=0), tape)
    if tape is not None:
        bounds = np.cumsum([0] + [p.rows for p in parts])

        def backward():
            g = out.grad
            if g is None:
                return
            for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
                _acc(p, g[lo:hi])

        tape.record(backward)
    return out


def take_rows(a: Tensor, index) -> Tensor:
    """Gather rows ``a[index]``; ``index`` may be an int, slice or int array."""
    if isinstance(index, (int, np.integer)):
        index = slice(int(index), int(index) + 1)
    tape = _tracking(a)
    out = _result(a.data[index], tape)
    if tape is not None:

        def backward():
            g = out.grad
            if g is None:
                return
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            if isinstance(index, slice):
                a.grad[index] += g
            else:
                np.add.at(a.grad, index, g)

        tape.record(backward)
    return out


def transpose(a: Tensor) -> Tensor:
    tape = _tracking(a)
    out = _result(a.data.T.copy(), tape)
    if tape is not None:

        def backward():
            if out.grad is not None:
                _acc(a, out.grad.T)

        tape.record(backward)
    return out


def sum_all(a: Tensor) -> Tensor:
    tape = _tracking(a)
    out = _result(np.array([[a.data.sum()]]), tape)
    if tape is not None:

        def backward():
            if out.grad is not None:
                _acc(a, np.full_like(a.data, out.grad[0, 0]))

        tape.record(backward)
    return out


def add_n(parts: Sequence[Tensor]) -> Tensor:
    """Sum of equally shaped tensors as a single tape entry."""
    shape = parts[0].shape
    if any(p.shape != shape for p in parts):
        raise DimensionError("add_n: shapes differ")
    tape = _tracking(*parts)
    total = parts[0].data.copy()
    for p in parts[1:]:
        total += p.data
    out = _result(total, tape)
    if tape is not None:

        def backward():
            g = out.grad
            if g is None:
                return
            for p in parts:
                _acc(p, g)

        tape.record(backward)
    return out


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def softmax(a: Tensor, gamma: float = 1.0) -> Tensor:
    """Row-wise ``exp(gamma * a) / sum(exp(gamma * a))``."""
    if not gamma > 0:
        raise ValueError(f"softmax scale must be positive, got {gamma}")
    if not np.all(np.isfinite(a.data)):
        raise EvaluationError("softmax: non-finite logits")
    tape = _tracking(a)
    y = _softmax_rows(gamma * a.data)
    out = _result(y, tape)
    if tape is not None:

        def backward():
            g = out.grad
            if g is None:
                return
            inner = (g * y).sum(axis=1, keepdims=True)
            _acc(a, gamma * y * (g - inner))

        tape.record(backward)
    return out


def _log_softmax_rows(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def log_softmax(a: Tensor) -> Tensor:
    tape = _tracking(a)
    y = _log_softmax_rows(a.data)
    out = _result(y, tape)
    if tape is not None:

        def backward():
            g = out.grad
            if g is None:
                return
            _acc(a, g - np.exp(y) * g.sum(axis=1, keepdims=True))

        tape.record(backward)
    return out


def nll_from_logits(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """``-sum_i log softmax(logits[i])[targets[i]]`` as a 1x1 tensor."""
    targets = np.asarray(targets, dtype=np.intp).reshape(-1)
    if targets.shape[0] != logits.rows:
        raise DimensionError(f"nll: {logits.rows} rows but {targets.shape[0]} targets")
    tape = _tracking(logits)
    lp = _log_softmax_rows(logits.data)
    rows = np.arange(logits.rows)
    out = _result(np.array([[-lp[rows, targets].sum()]]), tape)
    if tape is not None:

        def backward():
            if out.grad is None:
                return
            g = np.exp(lp)
            g[rows, targets] -= 1.0
            _acc(logits, g * out.grad[0, 0])

        tape.record(backward)
    return out


# -- log-space helpers ------------------------------------------------------


def log_sum_exp(values: Iterable[float]) -> float:
    """``log(sum(exp(v)))`` with max-shift; ``-inf`` entries are probability zero."""
    v = np.fromiter(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty sequence")
    m = v.max()
    if m == LOG_ZERO:
        return LOG_ZERO
    if not math.isfinite(m):
        raise EvaluationError(f"log_sum_exp: non-finite input {m}")
    return float(m + math.log(np.exp(v - m).sum()))


# -- finite-difference harness -----------------------------------------------


@dataclass
class GradCheckReport:
    """Per-parameter maximum relative error between tape and central differences."""

    max_rel_error: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol

    def __str__(self) -> str:
        lines = [f"{name}: {err:.3e}" for name, err in self.max_rel_error.items()]
        status = "PASS" if self.passed else "FAIL"
        lines.append(f"{status} worst={self.worst:.3e} tol={self.tol:.1e}")
        return "\n".join(lines)


def _eval(f: Callable[[], Tensor]) -> float:
    with no_grad():
        val = f().item()
    if not math.isfinite(val):
        raise EvaluationError(f"function value is not finite: {val}")
    return val


def check_gradients(
    f: Callable[[], Tensor],
    params: Sequence[Param],
    eps: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-4,
) -> GradCheckReport:
    """Compare tape gradients of scalar ``f()`` against central differences.

    The relative error of one entry is ``|a - n| / max(|a|, |n|, floor)``;
    ``floor`` keeps entries whose true gradient is ~0 from dividing
    round-off by round-off.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    zero_grads(params)
    with Tape() as tape:
        out = f()
    if not math.isfinite(out.item()):
        raise EvaluationError(f"function value is not finite: {out.item()}")
    tape.backward(out)
    analytic = [p.grad.copy() for p in params]

    report = GradCheckReport(tol=tol)
    for k, (p, ga) in enumerate(zip(params, analytic)):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = _eval(f)
            flat[i] = orig - eps
            fm = _eval(f)
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            err = abs(gflat[i] - num) / max(abs(gflat[i]), abs(num), floor)
            worst = max(worst, err)
        report.max_rel_error[p.name or f"param{k}"] = worst
    return report
