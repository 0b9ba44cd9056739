"""Attention decoder with content- or location-based energies.

Step ``u`` first feeds the previous label and context to the recurrent
state (``s_{u-1} = Recurrency(s_{u-2}, c_{u-1}, y_{u-1})``), then scores the
encoder frames against that state, takes the sharpened softmax, forms the
context and generates label scores from ``[c_u ; s_{u-1}]``.  The very first
step starts from a zero state, zero context, uniform alignment and ``sos``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .encoder import EncoderOutput
from .nn import Linear, Lstm, LstmState, conv1d_time, init_uniform, lstm_step, make_rng
from .numgrad import (
    DimensionError,
    Param,
    Tensor,
    add,
    concat_cols,
    concat_rows,
    matmul,
    nll_from_logits,
    softmax,
    take_rows,
    tanh,
    transpose,
)

__all__ = [
    "AttnConfig",
    "AttnStep",
    "AttnTrace",
    "AttentionDecoder",
    "energy",
    "align",
    "context",
    "decoder_step",
    "initial_step_inputs",
    "attention_loss",
]


@dataclass(frozen=True)
class AttnConfig:
    mechanism: Literal["content", "location"] = "location"
    gamma: float = 2.0
    num_conv_filters: int = 10
    conv_width: int = 201
    attn_dim: int = 320
    decoder_cells: int = 320
    embed_dim: int | None = None

    def __post_init__(self):
        if self.mechanism not in ("content", "location"):
            raise ValueError(f"unknown attention mechanism {self.mechanism!r}")
        if not self.gamma > 0:
            raise ValueError(f"sharpening factor must be positive, got {self.gamma}")
        if self.mechanism == "location":
            if self.num_conv_filters < 1:
                raise ValueError("location attention needs at least one convolution filter")
            if self.conv_width < 1 or self.conv_width % 2 == 0:
                raise ValueError(f"convolution width must be odd and positive, got {self.conv_width}")
        if self.attn_dim < 1 or self.decoder_cells < 1:
            raise ValueError("attention dims must be positive")
        if self.embed_dim is None:
            object.__setattr__(self, "embed_dim", self.decoder_cells)


@dataclass
class AttnStep:
    """One decoder step: ``state`` is the recurrent state the step conditioned on."""

    alignment: Tensor  # 1 x L
    context: Tensor  # 1 x enc_dim
    state: LstmState
    logits: Tensor  # 1 x num_labels


@dataclass
class AttnTrace:
    alignments: np.ndarray  # U x L, row u = a_u
    predictions: tuple[int, ...] = ()


class AttentionDecoder:
    """Parameters of the attention mechanism, Recurrency and Generate.

    ``num_labels`` counts the attention outputs: base symbols plus the
    shared sos/eos token, which is the last index.
    """

    def __init__(self, config: AttnConfig, enc_dim: int, num_labels: int, rng=0):
        rng = make_rng(rng)
        self.config = config
        self.enc_dim = enc_dim
        self.num_labels = num_labels
        A, Hd = config.attn_dim, config.decoder_cells
        self.state_proj = init_uniform((Hd, A), rng_seed=rng, name="att.W")
        self.enc_proj = init_uniform((enc_dim, A), rng_seed=rng, name="att.V")
        self.bias = init_uniform((1, A), rng_seed=rng, name="att.b")
        self.score = init_uniform((A, 1), rng_seed=rng, name="att.w")
        if config.mechanism == "location":
            self.filters = init_uniform((config.num_conv_filters, config.conv_width), rng_seed=rng, name="att.F")
            self.loc_proj = init_uniform((config.num_conv_filters, A), rng_seed=rng, name="att.U")
        else:
            self.filters = self.loc_proj = None
        self.embedding = init_uniform((num_labels, config.embed_dim), rng_seed=rng, name="dec.embedding")
        self.recurrency = Lstm(enc_dim + config.embed_dim, Hd, rng, name="dec.lstm")
        self.generate = Linear(enc_dim + Hd, num_labels, rng, name="dec.generate")

    @property
    def sos(self) -> int:
        return self.num_labels - 1

    eos = sos

    def params(self) -> list[Param]:
        out = [self.state_proj, self.enc_proj, self.bias, self.score]
        if self.config.mechanism == "location":
            out += [self.filters, self.loc_proj]
        return out + [self.embedding] + self.recurrency.params() + self.generate.params()

    def project(self, h: EncoderOutput) -> Tensor:
        """``V h_l`` for all frames; reused by every step of one utterance."""
        return matmul(h.h, self.enc_proj)


def energy(
    config: AttnConfig,
    params: AttentionDecoder,
    s_prev: LstmState,
    h: EncoderOutput,
    a_prev: Tensor | None = None,
    projected: Tensor | None = None,
) -> Tensor:
    """Unnormalised scores e_{u,l} over the L encoder frames (1 x L)."""
    if len(h) < 1:
        raise ValueError("empty encoder output")
    if projected is None:
        projected = params.project(h)
    pre = add(add(projected, matmul(s_prev.hidden, params.state_proj)), params.bias)
    if config.mechanism == "location":
        if a_prev is None:
            raise RuntimeError("location-based attention needs the previous alignment")
        if a_prev.cols != len(h):
            raise DimensionError(f"previous alignment has length {a_prev.cols}, encoder has {len(h)}")
        pre = add(pre, matmul(conv1d_time(params.filters, a_prev), params.loc_proj))
    return transpose(matmul(tanh(pre), params.score))


def align(e: Tensor, gamma: float) -> Tensor:
    """a_{u,l} = exp(gamma e_{u,l}) / sum_l exp(gamma e_{u,l})."""
    return softmax(e, gamma)


def context(a_u: Tensor, h: EncoderOutput) -> Tensor:
    if a_u.cols != len(h):
        raise DimensionError(f"alignment length {a_u.cols} does not match {len(h)} encoder frames")
    return matmul(a_u, h.h)


def initial_step_inputs(params: AttentionDecoder, h: EncoderOutput) -> tuple[LstmState, Tensor, Tensor, int]:
    """(zero state, uniform alignment, zero context, sos)."""
    L = len(h)
    return (
        LstmState.zeros(params.config.decoder_cells),
        Tensor(np.full((1, L), 1.0 / L)),
        Tensor(np.zeros((1, params.enc_dim))),
        params.sos,
    )


def decoder_step(
    config: AttnConfig,
    params: AttentionDecoder,
    s_prev: LstmState,
    a_prev: Tensor,
    h: EncoderOutput,
    y_prev: int,
    c_prev: Tensor | None = None,
    projected: Tensor | None = None,
) -> AttnStep:
    """Consume ``y_prev`` and ``c_prev``, attend, and score the next label."""
    y_prev = int(y_prev)
    if y_prev == params.num_labels:
        raise ValueError("the blank label cannot be fed to the attention decoder")
    if not 0 <= y_prev < params.num_labels:
        raise ValueError(f"label {y_prev} outside the attention vocabulary of {params.num_labels}")
    if c_prev is None:
        c_prev = Tensor(np.zeros((1, params.enc_dim)))
    emb = take_rows(params.embedding, y_prev)
    s = lstm_step(params.recurrency, concat_cols([c_prev, emb]), s_prev)
    e = energy(config, params, s, h, a_prev, projected)
    a = align(e, config.gamma)
    c = context(a, h)
    logits = params.generate(concat_cols([c, s.hidden]))
    return AttnStep(a, c, s, logits)


def attention_loss(
    config: AttnConfig, params: AttentionDecoder, h: EncoderOutput, y_star: Sequence[int]
) -> tuple[Tensor, AttnTrace]:
    """Teacher-forced -sum_u ln P(y*_u | x, y*_{1:u-1}); ``y_star`` ends with eos."""
    y_star = [int(y) for y in y_star]
    if not y_star:
        raise ValueError("attention target is empty")
    if y_star[-1] != params.eos:
        raise ValueError("attention target must end with eos")
    projected = params.project(h)
    s, a, c, y_prev = initial_step_inputs(params, h)
    alignments = []
    logits = []
    for y in y_star:
        step = decoder_step(config, params, s, a, h, y_prev, c, projected)
        alignments.append(step.alignment)
        logits.append(step.logits)
        s, a, c, y_prev = step.state, step.alignment, step.context, y
    scores = concat_rows(logits)
    loss = nll_from_logits(scores, y_star)
    trace = AttnTrace(
        np.concatenate([al.data for al in alignments], axis=0),
        tuple(int(k) for k in np.argmax(scores.data, axis=1)),
    )
    return loss, trace
