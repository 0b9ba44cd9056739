"""Length-penalised beam search over the attention decoder, and edit distance."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .attention import AttnConfig, AttentionDecoder, decoder_step, initial_step_inputs
from .encoder import EncoderOutput
from .nn import LstmState
from .numgrad import Tensor, _log_softmax_rows, no_grad

__all__ = ["BeamConfig", "Hypothesis", "beam_decode", "greedy_decode", "adjusted_score", "edit_distance"]


@dataclass(frozen=True)
class BeamConfig:
    """``max_output_len`` bounds decoder steps, the closing eos included; None means L."""

    beam_size: int = 20
    length_penalty: float = 0.0
    max_output_len: int | None = None

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be at least 1")
        if self.max_output_len is not None and self.max_output_len < 1:
            raise ValueError("max_output_len must be at least 1")


@dataclass
class Hypothesis:
    """A label prefix after sos.  ``length`` excludes the closing eos."""

    labels: tuple[int, ...]
    log_score: float
    state: LstmState | None = field(default=None, repr=False)
    alignment: Tensor | None = field(default=None, repr=False)
    context: Tensor | None = field(default=None, repr=False)
    finished: bool = False
    truncated: bool = False
    order: int = 0

    @property
    def length(self) -> int:
        return len(self.labels) - 1 if self.finished else len(self.labels)

    def tokens(self) -> tuple[int, ...]:
        """Labels without the closing eos."""
        return self.labels[:-1] if self.finished else self.labels


def adjusted_score(log_score: float, length: int, length_penalty: float) -> float:
    return log_score + length_penalty * length


def _adjusted(h: Hypothesis, penalty: float) -> float:
    return adjusted_score(h.log_score, h.length, penalty)


def beam_decode(
    params: AttentionDecoder, h: EncoderOutput, config: BeamConfig, attn_config: AttnConfig | None = None
) -> list[Hypothesis]:
    """Ranked finished hypotheses, best adjusted score first.

    Each round expands every live hypothesis by every label and keeps the
    ``beam_size`` best candidates by raw log score; ties go to the lower
    label, then to the earlier-ranked parent.  Candidates ending in eos leave
    the beam for the finished pool.  The search stops when no live
    hypothesis remains, when the step limit is hit, or when ``beam_size``
    finished hypotheses all beat the best score any live one could still
    reach.  If nothing finished, the best live hypothesis comes back with
    ``truncated=True``.
    """
    if len(h) < 1:
        raise ValueError("empty encoder output")
    cfg = attn_config or params.config
    penalty = config.length_penalty
    max_steps = config.max_output_len or len(h)
    eos = params.eos
    K = params.num_labels

    with no_grad():
        projected = params.project(h)
        s, a, c, y0 = initial_step_inputs(params, h)
        live = [Hypothesis((), 0.0, s, a, c)]
        pending = [y0]
        finished: list[Hypothesis] = []
        counter = 1
        for step_idx in range(max_steps):
            cands = []
            for rank, (hyp, y_prev) in enumerate(zip(live, pending)):
                st = decoder_step(cfg, params, hyp.state, hyp.alignment, h, y_prev, hyp.context, projected)
                logp = _log_softmax_rows(st.logits.data)[0]
                for k in range(K):
                    cands.append((hyp.log_score + float(logp[k]), k, rank, hyp, st))
            cands.sort(key=lambda t: (-t[0], t[1], t[2]))
            live, pending = [], []
            for score, k, _, parent, st in cands[: config.beam_size]:
                new = Hypothesis(
                    parent.labels + (k,), score, st.state, st.alignment, st.context, finished=(k == eos), order=counter
                )
                counter += 1
                if new.finished:
                    finished.append(new)
                else:
                    live.append(new)
                    pending.append(k)
            if not live:
                break
            remaining = max_steps - (step_idx + 1)
            if remaining > 0 and len(finished) >= config.beam_size:
                # live hypotheses gain at most max(penalty, 0) per further label
                best_live = max(_adjusted(x, penalty) for x in live) + max(penalty, 0.0) * (remaining - 1)
                top = sorted((_adjusted(f, penalty) for f in finished), reverse=True)[: config.beam_size]
                if top[-1] > best_live:
                    break

    if not finished:
        best = max(live, key=lambda x: (_adjusted(x, penalty), -x.order))
        best.truncated = True
        return [best]
    return sorted(finished, key=lambda x: (-_adjusted(x, penalty), x.order))


def greedy_decode(
    params: AttentionDecoder, h: EncoderOutput, max_output_len: int | None = None, attn_config: AttnConfig | None = None
) -> Hypothesis:
    """Arg-max label at every step until eos or the step limit."""
    cfg = attn_config or params.config
    max_steps = max_output_len or len(h)
    with no_grad():
        projected = params.project(h)
        s, a, c, y = initial_step_inputs(params, h)
        labels: list[int] = []
        score = 0.0
        for _ in range(max_steps):
            st = decoder_step(cfg, params, s, a, h, y, c, projected)
            logp = _log_softmax_rows(st.logits.data)[0]
            y = int(np.argmax(logp))
            score += float(logp[y])
            labels.append(y)
            s, a, c = st.state, st.alignment, st.context
            if y == params.eos:
                return Hypothesis(tuple(labels), score, s, a, c, finished=True)
    return Hypothesis(tuple(labels), score, s, a, c, truncated=True)


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance with unit insertion, deletion and substitution costs."""
    a, b = list(a), list(b)
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]
