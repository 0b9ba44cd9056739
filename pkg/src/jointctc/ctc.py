"""Connectionist temporal classification in log space.

Conventions: frame posteriors ``q`` are ``T x (K + 1)`` with the blank in the
last column.  Raw targets are sequences of label indices in ``[0, K)``.
The blank-augmented target puts blanks at every even position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numgrad import Tensor, _acc, _log_softmax_rows, _result, _tracking

__all__ = [
    "ImpossibleAlignment",
    "CtcLattice",
    "augment_with_blanks",
    "min_frames",
    "ctc_forward_backward",
    "ctc_loss",
    "ctc_grad",
    "ctc_posteriors",
    "ctc_brute_force",
    "greedy_collapse_decode",
    "collapse",
    "ctc_loss_from_logits",
]

BRUTE_FORCE_LIMIT = 10**6


class ImpossibleAlignment(ValueError):
    """The target needs more frames than the input provides; the loss is infinite."""

    def __init__(self, num_frames: int, required: int):
        super().__init__(f"target needs at least {required} frames, input has {num_frames}")
        self.num_frames = num_frames
        self.required = required
        self.loss = math.inf


def augment_with_blanks(y: Sequence[int], blank: int) -> np.ndarray:
    """(c, a, t) -> (-, c, -, a, -, t, -)."""
    y = np.asarray(y, dtype=np.intp).reshape(-1)
    if np.any(y == blank):
        raise ValueError("raw target contains the blank label")
    out = np.full(2 * y.size + 1, blank, dtype=np.intp)
    out[1::2] = y
    return out


def min_frames(y: Sequence[int]) -> int:
    """Shortest input that admits a path: one frame per label plus a blank between repeats."""
    y = list(y)
    return len(y) + sum(1 for a, b in zip(y, y[1:]) if a == b)


def _as_array(q) -> np.ndarray:
    return q.data if isinstance(q, Tensor) else np.asarray(q, dtype=np.float64)


def _log(q: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(q)


@dataclass
class CtcLattice:
    """Forward and backward log variables over (frame, augmented position).

    Both include the emission at their own frame, so the per-frame total is
    ``logsumexp_s(alpha[t, s] + beta[t, s] - log q_t(y'_s))``.
    """

    alpha: np.ndarray
    beta: np.ndarray
    emissions: np.ndarray  # log q_t(y'_s), T x S
    y_aug: np.ndarray

    @property
    def log_likelihood(self) -> float:
        last = self.alpha[-1, -2:] if self.alpha.shape[1] > 1 else self.alpha[-1, -1:]
        return float(np.logaddexp.reduce(last))

    @property
    def log_likelihood_backward(self) -> float:
        first = self.beta[0, :2]
        return float(np.logaddexp.reduce(first))

    def occupancy(self) -> np.ndarray:
        """Unnormalised log occupancy of each trellis cell (T x S)."""
        occ = np.full_like(self.alpha, -np.inf)
        ok = np.isfinite(self.alpha) & np.isfinite(self.beta)
        occ[ok] = self.alpha[ok] + self.beta[ok] - self.emissions[ok]
        return occ

    def frame_totals(self) -> np.ndarray:
        """log P(y|x) recomputed at every frame; all entries agree."""
        return np.logaddexp.reduce(self.occupancy(), axis=1)


def _check_feasible(T: int, y: Sequence[int]) -> None:
    need = min_frames(y)
    if need > T:
        raise ImpossibleAlignment(T, need)


def _lattice(log_q: np.ndarray, y_aug: np.ndarray) -> CtcLattice:
    T = log_q.shape[0]
    S = y_aug.size
    emit = log_q[:, y_aug]
    skip = np.zeros(S, dtype=bool)
    if S > 2:
        skip[2:] = (y_aug[2:] != y_aug[0]) & (y_aug[2:] != y_aug[:-2])
    skip_to = skip[2:]

    alpha = np.full((T, S), -np.inf)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        a = prev.copy()
        a[1:] = np.logaddexp(a[1:], prev[:-1])
        if S > 2:
            a[2:] = np.where(skip_to, np.logaddexp(a[2:], prev[:-2]), a[2:])
        alpha[t] = a + emit[t]

    beta = np.full((T, S), -np.inf)
    beta[-1, -1] = emit[-1, -1]
    if S > 1:
        beta[-1, -2] = emit[-1, -2]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        b = nxt.copy()
        b[:-1] = np.logaddexp(b[:-1], nxt[1:])
        if S > 2:
            b[:-2] = np.where(skip_to, np.logaddexp(b[:-2], nxt[2:]), b[:-2])
        beta[t] = b + emit[t]
    return CtcLattice(alpha, beta, emit, y_aug)


def ctc_forward_backward(q, y_aug: Sequence[int]) -> CtcLattice:
    """Lattice for posteriors ``q`` and an already blank-augmented target."""
    q = _as_array(q)
    y_aug = np.asarray(y_aug, dtype=np.intp)
    blank = q.shape[1] - 1
    if y_aug.size % 2 != 1 or np.any(y_aug[0::2] != blank) or np.any(y_aug[1::2] == blank):
        raise ValueError("target is not in blank-augmented form")
    _check_feasible(q.shape[0], y_aug[1::2])
    return _lattice(_log(q), y_aug)


def _check_normalized(q: np.ndarray) -> None:
    if q.ndim != 2 or q.shape[1] < 1:
        raise ValueError(f"posteriors must be T x (K+1), got shape {q.shape}")
    if np.any(q < 0) or not np.allclose(q.sum(axis=1), 1.0, rtol=0, atol=1e-8):
        raise ValueError("posterior rows must be non-negative and sum to 1")


def ctc_loss(q, y: Sequence[int]) -> float:
    """-ln P(y|x) for frame posteriors ``q``.

    Raises :class:`ImpossibleAlignment` when ``y`` cannot fit in ``T`` frames.
    """
    q = _as_array(q)
    _check_normalized(q)
    blank = q.shape[1] - 1
    y_aug = augment_with_blanks(y, blank)
    _check_feasible(q.shape[0], y)
    return -_lattice(_log(q), y_aug).log_likelihood


def _posteriors(lat: CtcLattice, num_classes: int) -> np.ndarray:
    occ = lat.occupancy() - lat.log_likelihood
    onehot = np.zeros((lat.y_aug.size, num_classes))
    onehot[np.arange(lat.y_aug.size), lat.y_aug] = 1.0
    return np.exp(occ) @ onehot


def ctc_posteriors(q, y: Sequence[int]) -> np.ndarray:
    """Posterior probability that frame t emits class k, given x and y (T x (K+1))."""
    q = _as_array(q)
    _check_feasible(q.shape[0], y)
    lat = _lattice(_log(q), augment_with_blanks(y, q.shape[1] - 1))
    return _posteriors(lat, q.shape[1])


def ctc_grad(q, y: Sequence[int]) -> np.ndarray:
    """Gradient of -ln P(y|x) with respect to the pre-softmax logits of ``q``."""
    q = _as_array(q)
    return q - ctc_posteriors(q, y)


def collapse(path: Sequence[int], blank: int) -> tuple[int, ...]:
    """Merge repeated labels, then drop blanks."""
    out = []
    prev = None
    for p in path:
        p = int(p)
        if p != prev and p != blank:
            out.append(p)
        prev = p
    return tuple(out)


def ctc_brute_force(q, y: Sequence[int]) -> float:
    """P(y|x) by summing the probability of every path that collapses to ``y``.

    Testing oracle; refuses instances with more than 10**6 paths.
    """
    q = _as_array(q)
    T, C = q.shape
    if C**T > BRUTE_FORCE_LIMIT:
        raise ValueError(f"{C}**{T} paths exceeds the brute-force limit of {BRUTE_FORCE_LIMIT}")
    blank = C - 1
    y = np.asarray(y, dtype=np.intp).reshape(-1)
    U = y.size
    if U > T:
        return 0.0
    paths = np.indices((C,) * T).reshape(T, -1).T
    prob = np.prod(q[np.arange(T), paths], axis=1)

    changed = np.ones_like(paths, dtype=bool)
    changed[:, 1:] = paths[:, 1:] != paths[:, :-1]
    keep = changed & (paths != blank)
    count = keep.sum(axis=1)
    pos = np.clip(np.cumsum(keep, axis=1) - 1, 0, max(U - 1, 0))
    if U == 0:
        ok = count == 0
    else:
        ok = (count == U) & np.all(~keep | (y[pos] == paths), axis=1)
    return float(prob[ok].sum())


def greedy_collapse_decode(q) -> tuple[int, ...]:
    q = _as_array(q)
    return collapse(np.argmax(q, axis=1), q.shape[1] - 1)


def ctc_loss_from_logits(logits: Tensor, y: Sequence[int]) -> Tensor:
    """Tape-aware CTC loss on unnormalised scores (T x (K + 1)), as a 1x1 tensor."""
    T, C = logits.shape
    _check_feasible(T, y)
    log_q = _log_softmax_rows(logits.data)
    lat = _lattice(log_q, augment_with_blanks(y, C - 1))
    tape = _tracking(logits)
    out = _result(np.array([[-lat.log_likelihood]]), tape)
    if tape is not None:

        def backward():
            if out.grad is not None:
                _acc(logits, out.grad[0, 0] * (np.exp(log_q) - _posteriors(lat, C)))

        tape.record(backward)
    return out
