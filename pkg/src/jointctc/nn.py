"""Neural building blocks on top of :mod:`jointctc.numgrad`.

LSTM gate order is input, forget, candidate, output; no peepholes.  All
weights start uniform in ``[-0.1, 0.1]``, forget-gate bias included.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .numgrad import (
    DimensionError,
    Param,
    Tensor,
    _acc,
    _result,
    _sigmoid,
    _tracking,
    add,
    concat_cols,
    concat_rows,
    matmul,
    softmax,
)

__all__ = [
    "INIT_RANGE",
    "LayerSpec",
    "LstmState",
    "Linear",
    "Lstm",
    "init_uniform",
    "lstm_step",
    "lstm_layer",
    "blstm_layer",
    "blstm_layer_stepwise",
    "conv1d_time",
    "softmax",
    "make_rng",
]

INIT_RANGE = (-0.1, 0.1)


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def init_uniform(shape, lo: float = INIT_RANGE[0], hi: float = INIT_RANGE[1], rng_seed=0, name: str = "") -> Param:
    """A parameter with i.i.d. entries drawn from U[lo, hi].

    ``rng_seed`` is an integer seed or a ``numpy.random.Generator`` (which is
    advanced, so successive calls with one generator give distinct draws).
    """
    if not lo < hi:
        raise ValueError(f"init_uniform needs lo < hi, got lo={lo}, hi={hi}")
    rng = make_rng(rng_seed)
    return Param(rng.uniform(lo, hi, size=shape), name=name)


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int
    output_dim: int
    kind: Literal["linear", "lstm", "blstm", "conv1d"]

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError(f"layer dims must be >= 1, got {self.input_dim}, {self.output_dim}")


@dataclass(frozen=True)
class LstmState:
    hidden: Tensor
    cell: Tensor

    @classmethod
    def zeros(cls, size: int) -> "LstmState":
        return cls(Tensor(np.zeros((1, size))), Tensor(np.zeros((1, size))))


class Linear:
    """Affine map ``x @ weight + bias`` applied row-wise."""

    def __init__(self, input_dim: int, output_dim: int, rng, name: str = "linear"):
        self.spec = LayerSpec(input_dim, output_dim, "linear")
        self.weight = init_uniform((input_dim, output_dim), rng_seed=rng, name=f"{name}.weight")
        self.bias = init_uniform((1, output_dim), rng_seed=rng, name=f"{name}.bias")

    def params(self) -> list[Param]:
        return [self.weight, self.bias]

    def __call__(self, x: Tensor) -> Tensor:
        if x.cols != self.spec.input_dim:
            raise DimensionError(f"{self.weight.name}: input width {x.cols}, expected {self.spec.input_dim}")
        return add(matmul(x, self.weight), self.bias)


class Lstm:
    """Weights of one LSTM direction: input kernel, recurrent kernel, bias."""

    def __init__(self, input_dim: int, hidden_dim: int, rng, name: str = "lstm"):
        self.spec = LayerSpec(input_dim, hidden_dim, "lstm")
        self.hidden_dim = hidden_dim
        self.w_input = init_uniform((input_dim, 4 * hidden_dim), rng_seed=rng, name=f"{name}.w_input")
        self.w_hidden = init_uniform((hidden_dim, 4 * hidden_dim), rng_seed=rng, name=f"{name}.w_hidden")
        self.bias = init_uniform((1, 4 * hidden_dim), rng_seed=rng, name=f"{name}.bias")

    def params(self) -> list[Param]:
        return [self.w_input, self.w_hidden, self.bias]

    def input_projection(self, x: Tensor) -> Tensor:
        if x.cols != self.spec.input_dim:
            raise DimensionError(f"{self.w_input.name}: input width {x.cols}, expected {self.spec.input_dim}")
        return add(matmul(x, self.w_input), self.bias)


def _lstm_cell(zx: Tensor, row: int, state: LstmState, w_hidden: Tensor) -> LstmState:
    """One recurrence step given the precomputed input projection ``zx[row]``.

    A single tape entry covers the gate arithmetic; the closure returns
    gradients to ``zx``, the previous state and ``w_hidden``.
    """
    h, c = state.hidden, state.cell
    H = h.cols
    z = zx.data[row : row + 1] + h.data @ w_hidden.data
    i = _sigmoid(z[:, :H])
    f = _sigmoid(z[:, H : 2 * H])
    g = np.tanh(z[:, 2 * H : 3 * H])
    o = _sigmoid(z[:, 3 * H :])
    c_new = f * c.data + i * g
    tc = np.tanh(c_new)
    h_new = o * tc

    tape = _tracking(zx, h, c, w_hidden)
    h_out = _result(h_new, tape)
    c_out = _result(c_new, tape)
    if tape is not None:

        def backward():
            gh, gc = h_out.grad, c_out.grad
            if gh is None and gc is None:
                return
            dc = np.zeros_like(c_new) if gc is None else gc.copy()
            if gh is not None:
                do = gh * tc
                dc += gh * o * (1.0 - tc * tc)
            else:
                do = np.zeros_like(o)
            dz = np.concatenate(
                [dc * g * i * (1.0 - i), dc * c.data * f * (1.0 - f), dc * i * (1.0 - g * g), do * o * (1.0 - o)],
                axis=1,
            )
            if zx.requires_grad:
                if zx.grad is None:
                    zx.grad = np.zeros_like(zx.data)
                zx.grad[row : row + 1] += dz
            if h.requires_grad:
                _acc(h, dz @ w_hidden.data.T)
            if c.requires_grad:
                _acc(c, dc * f)
            if w_hidden.requires_grad:
                _acc(w_hidden, h.data.T @ dz)

        tape.record(backward)
    return LstmState(h_out, c_out)


def lstm_step(params: Lstm, input: Tensor, state: LstmState) -> LstmState:
    """Advance one LSTM step; ``state`` is left untouched."""
    if input.rows != 1:
        raise DimensionError(f"lstm_step expects a single 1xD frame, got {input.shape}")
    if state.hidden.cols != params.hidden_dim or state.cell.cols != params.hidden_dim:
        raise DimensionError(f"lstm_step: state width {state.hidden.cols}, expected {params.hidden_dim}")
    return _lstm_cell(params.input_projection(input), 0, state, params.w_hidden)


def lstm_layer(params: Lstm, x: Tensor, reverse: bool = False) -> Tensor:
    """Run one direction over all rows of ``x`` (T x D) and return T x H hidden states."""
    T = x.rows
    if T < 1:
        raise ValueError("lstm_layer needs at least one frame")
    zx = params.input_projection(x)
    state = LstmState.zeros(params.hidden_dim)
    outputs: list[Tensor] = [None] * T  # type: ignore[list-item]
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        state = _lstm_cell(zx, t, state, params.w_hidden)
        outputs[t] = state.hidden
    return concat_rows(outputs)


def _gate_scale(H: int) -> np.ndarray:
    sc = np.full(4 * H, 0.5)
    sc[2 * H : 3 * H] = 1.0
    return sc


def _bilstm_recurrence(zf: Tensor, zb: Tensor, wf: Tensor, wb: Tensor) -> Tensor:
    """Both directions of a BLSTM layer stepped together as one tape entry.

    ``zf``/``zb`` are the T x 4H input projections, ``wf``/``wb`` the
    recurrent kernels.  Returns T x 2H, forward states first.
    """
    T, H4 = zf.shape
    H = H4 // 4
    sc = _gate_scale(H)
    # sigmoid(x) = 0.5 * tanh(x / 2) + 0.5, so one tanh serves all four gates
    off = np.where(sc == 0.5, 0.5, 0.0)
    zz = np.empty((T, 2, H4))
    zz[:, 0] = zf.data
    zz[:, 1] = zb.data[::-1]
    W = np.stack([wf.data, wb.data])  # 2 x H x 4H
    hs = np.zeros((T + 1, 2, H))  # hs[t] = state before step t
    cs = np.zeros((T + 1, 2, H))
    acts = np.empty((T, 2, H4))  # gate activations
    tcs = np.empty((T, 2, H))
    h = hs[0]
    c = cs[0]
    for t in range(T):
        z = zz[t] + np.matmul(h[:, None, :], W)[:, 0]
        a = np.tanh(z * sc) * sc + off
        c = a[:, H : 2 * H] * c + a[:, :H] * a[:, 2 * H : 3 * H]
        tc = np.tanh(c)
        h = a[:, 3 * H :] * tc
        acts[t] = a
        tcs[t] = tc
        hs[t + 1] = h
        cs[t + 1] = c
    out_data = np.concatenate([hs[1:, 0], hs[:0:-1, 1]], axis=1)

    tape = _tracking(zf, zb, wf, wb)
    out = _result(out_data, tape)
    if tape is not None:

        def backward():
            G = out.grad
            if G is None:
                return
            gl = np.empty((T, 2, H))
            gl[:, 0] = G[:, :H]
            gl[:, 1] = G[::-1, H:]
            Wt = W.transpose(0, 2, 1)
            dzz = np.empty((T, 2, H4))
            dh = np.zeros((2, H))
            dc = np.zeros((2, H))
            for t in range(T - 1, -1, -1):
                a = acts[t]
                i, f, g, o = a[:, :H], a[:, H : 2 * H], a[:, 2 * H : 3 * H], a[:, 3 * H :]
                tc = tcs[t]
                gh = gl[t] + dh
                dc = dc + gh * o * (1.0 - tc * tc)
                dz = dzz[t]
                dz[:, :H] = dc * g * i * (1.0 - i)
                dz[:, H : 2 * H] = dc * cs[t] * f * (1.0 - f)
                dz[:, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
                dz[:, 3 * H :] = gh * tc * o * (1.0 - o)
                dh = np.matmul(dz[:, None, :], Wt)[:, 0]
                dc = dc * f
            if zf.requires_grad:
                _acc(zf, dzz[:, 0])
            if zb.requires_grad:
                _acc(zb, dzz[::-1, 1])
            if wf.requires_grad:
                _acc(wf, hs[:-1, 0].T @ dzz[:, 0])
            if wb.requires_grad:
                _acc(wb, hs[:-1, 1].T @ dzz[:, 1])

        tape.record(backward)
    return out


def blstm_layer(forward: Lstm, backward: Lstm, x: Tensor) -> Tensor:
    """Bidirectional layer: ``[forward_t ; backward_t]`` per frame, width 2H."""
    if x.rows < 1:
        raise ValueError("blstm_layer needs a non-empty input sequence")
    if forward.hidden_dim != backward.hidden_dim:
        raise DimensionError("forward and backward directions must have the same width")
    return _bilstm_recurrence(
        forward.input_projection(x), backward.input_projection(x), forward.w_hidden, backward.w_hidden
    )


def blstm_layer_stepwise(forward: Lstm, backward: Lstm, x: Tensor) -> Tensor:
    """Same result as :func:`blstm_layer`, recorded one cell at a time."""
    if x.rows < 1:
        raise ValueError("blstm_layer needs a non-empty input sequence")
    return concat_cols([lstm_layer(forward, x), lstm_layer(backward, x, reverse=True)])


_window_cache: dict[tuple[int, int], np.ndarray] = {}


def _window_index(L: int, width: int) -> np.ndarray:
    key = (L, width)
    idx = _window_cache.get(key)
    if idx is None:
        idx = np.arange(L)[:, None] + np.arange(width)[None, :]
        if len(_window_cache) < 4096:
            _window_cache[key] = idx
    return idx


def conv1d_time(filters: Tensor, signal: Tensor) -> Tensor:
    """Centered 'same' convolution of a 1 x L signal with each row of ``filters``.

    Returns L x num_filters; the signal is zero padded by ``width // 2`` on
    both sides.
    """
    nf, width = filters.shape
    if width % 2 == 0:
        raise ValueError(f"conv1d_time needs an odd filter width for centering, got {width}")
    if signal.rows != 1 or signal.cols < 1:
        raise DimensionError(f"conv1d_time expects a 1 x L signal, got {signal.shape}")
    L = signal.cols
    half = width // 2
    padded = np.zeros(L + 2 * half)
    padded[half : half + L] = signal.data[0]
    windows = padded[_window_index(L, width)]
    flipped = filters.data[:, ::-1]
    tape = _tracking(filters, signal)
    out = _result(windows @ flipped.T, tape)
    if tape is not None:

        def backward():
            g = out.grad
            if g is None:
                return
            if filters.requires_grad:
                _acc(filters, (g.T @ windows)[:, ::-1])
            if signal.requires_grad:
                dwin = g @ flipped
                gpad = np.zeros(L + 2 * half)
                for j in range(width):
                    gpad[j : j + L] += dwin[:, j]
                _acc(signal, gpad[half : half + L].reshape(1, L))

        tape.record(backward)
    return out
