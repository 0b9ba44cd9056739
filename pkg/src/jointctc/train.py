"""Joint CTC-attention training: objective, AdaDelta, clipping and the epoch loop."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import kendalltau

from .beam import edit_distance
from .ctc import ImpossibleAlignment, min_frames
from .data import Utterance
from .model import JointModel, save_params
from .numgrad import Param, Tape, Tensor, add, no_grad, scale, zero_grads

__all__ = [
    "MtlConfig",
    "TrainRecord",
    "TrainLog",
    "TrainingDiverged",
    "AdaDelta",
    "mtl_loss",
    "adadelta_update",
    "clip_gradients",
    "teacher_forced_accuracy",
    "monotonicity_score",
    "utterance_loss",
    "train",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MtlConfig:
    mtl_lambda: float = 0.2
    epochs: int = 20
    clip_threshold: float = 5.0
    adadelta_rho: float = 0.95
    adadelta_eps: float = 1e-8
    seed: int = 0
    skip_infeasible: bool = True

    def __post_init__(self):
        if not 0.0 <= self.mtl_lambda <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.mtl_lambda}")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if not self.clip_threshold > 0:
            raise ValueError("clip threshold must be positive")
        if not 0.0 < self.adadelta_rho < 1.0:
            raise ValueError("AdaDelta rho must lie in (0, 1)")
        if not self.adadelta_eps > 0:
            raise ValueError("AdaDelta eps must be positive")


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


def mtl_loss(lam: float, l_ctc, l_att):
    """lam * l_ctc + (1 - lam) * l_att for floats or 1x1 tensors.

    A component whose weight is zero may be ``None``; the other one is then
    returned untouched.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if lam == 0.0 and l_ctc is None:
        return l_att
    if lam == 1.0 and l_att is None:
        return l_ctc
    if isinstance(l_ctc, Tensor) or isinstance(l_att, Tensor):
        return add(scale(l_ctc, lam), scale(l_att, 1.0 - lam))
    return lam * l_ctc + (1.0 - lam) * l_att


class AdaDelta:
    """Per-entry running averages of squared gradients and squared updates.

    ``delta = -sqrt(E[d^2] + eps) / sqrt(E[g^2] + eps) * g``
    """

    def __init__(self, params: Sequence[Param], rho: float = 0.95, eps: float = 1e-8):
        self.params = list(params)
        self.rho = rho
        self.eps = eps
        self.sq_grad = [np.zeros_like(p.data) for p in self.params]
        self.sq_delta = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        rho, eps = self.rho, self.eps
        for p, eg, ed in zip(self.params, self.sq_grad, self.sq_delta):
            g = p.grad
            eg *= rho
            eg += (1.0 - rho) * g * g
            delta = -np.sqrt(ed + eps) / np.sqrt(eg + eps) * g
            ed *= rho
            ed += (1.0 - rho) * delta * delta
            p.data += delta


def adadelta_update(params: Sequence[Param], rho: float, eps: float, state: AdaDelta | None = None) -> AdaDelta:
    """Apply one update; pass the returned state back in to keep accumulators."""
    if state is None:
        state = AdaDelta(params, rho, eps)
    state.step()
    return state


def clip_gradients(params: Sequence[Param], threshold: float) -> float:
    """Rescale all gradients so their global L2 norm is at most ``threshold``."""
    if not threshold > 0:
        raise ValueError("clip threshold must be positive")
    norm = math.sqrt(sum(float(np.vdot(p.grad, p.grad)) for p in params))
    if norm <= threshold:
        return 1.0
    factor = threshold / norm
    for p in params:
        p.grad *= factor
    return factor


def monotonicity_score(alignments: np.ndarray) -> float:
    """Kendall tau between output step and the arg-max frame of its alignment row."""
    peaks = np.argmax(np.asarray(alignments), axis=1)
    if peaks.size < 2 or np.all(peaks == peaks[0]):
        return 0.0
    tau = kendalltau(np.arange(peaks.size), peaks).statistic
    return 0.0 if not np.isfinite(tau) else float(tau)


def teacher_forced_accuracy(model: JointModel, utts: Sequence[Utterance]) -> float:
    """1 - total edit distance / total reference length, with the gold history fed in."""
    errors = total = 0
    with no_grad():
        for u in utts:
            _, trace = model.attention_loss(model.encode(u.features), u.labels)
            hyp = trace.predictions[: len(u.labels)]
            errors += edit_distance(hyp, u.labels)
            total += len(u.labels)
    return 1.0 - errors / max(total, 1)


def utterance_loss(model: JointModel, utt: Utterance, lam: float):
    """(total, ctc, att, trace) for one utterance on a single shared encoder pass."""
    h = model.encode(utt.features)
    l_ctc = model.ctc_loss(h, utt.labels) if lam > 0.0 else None
    if lam < 1.0:
        l_att, trace = model.attention_loss(h, utt.labels)
    else:
        l_att, trace = None, None
    return mtl_loss(lam, l_ctc, l_att), l_ctc, l_att, trace


@dataclass
class TrainRecord:
    epoch: int
    total_loss: float
    ctc_loss: float
    att_loss: float
    val_acc: float
    seconds: float
    probe_monotonicity: float = float("nan")
    probe_alignment: np.ndarray | None = field(default=None, repr=False)
    skipped: int = 0


@dataclass
class TrainLog:
    records: list[TrainRecord] = field(default_factory=list)

    COLUMNS = ("epoch", "total_loss", "ctc_loss", "att_loss", "val_acc", "seconds")

    def __len__(self) -> int:
        return len(self.records)

    def first_epoch_reaching(self, attr: str, threshold: float) -> int | None:
        for r in self.records:
            if getattr(r, attr) > threshold:
                return r.epoch
        return None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.records:
                w.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in self.COLUMNS[1:]])


def ctc_feasible(model: JointModel, utt: Utterance) -> bool:
    return min_frames(utt.labels) <= model.encoder_length(utt.num_frames)


def _probe_alignment(model: JointModel, utt: Utterance) -> np.ndarray:
    with no_grad():
        _, trace = model.attention_loss(model.encode(utt.features), utt.labels)
    return trace.alignments


def train(
    model: JointModel,
    train_utts: Sequence[Utterance],
    valid_utts: Sequence[Utterance],
    config: MtlConfig,
    probe: Utterance | None = None,
    out_dir=None,
    on_epoch: Callable[[TrainRecord], bool] | None = None,
) -> tuple[TrainLog, JointModel]:
    """Train ``model`` in place, one utterance per update.

    Each step runs the shared encoder once, combines the two head losses,
    backpropagates, clips the global gradient norm and applies AdaDelta.
    After every epoch the teacher-forced validation accuracy and the probe
    utterance's alignment are recorded.  ``on_epoch`` may return True to
    end training early.  With ``out_dir`` the log CSV, one alignment CSV per
    epoch and the final parameters are written there.
    """
    if not train_utts:
        raise ValueError("training set is empty")
    lam = config.mtl_lambda
    params = model.params()
    opt = AdaDelta(params, config.adadelta_rho, config.adadelta_eps)
    rng = np.random.default_rng(config.seed)
    probe = probe if probe is not None else (valid_utts[0] if valid_utts else train_utts[0])
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "align").mkdir(parents=True, exist_ok=True)

    usable = list(train_utts)
    if lam > 0.0:
        bad = [u for u in usable if not ctc_feasible(model, u)]
        if bad and not config.skip_infeasible:
            raise ImpossibleAlignment(model.encoder_length(bad[0].num_frames), min_frames(bad[0].labels))
        if bad:
            log.warning("skipping %d CTC-infeasible utterances (e.g. %s)", len(bad), bad[0].id)
        usable = [u for u in usable if ctc_feasible(model, u)]
        if not usable:
            raise ValueError("no CTC-feasible training utterances")
    skipped = len(train_utts) - len(usable)

    history = TrainLog()
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        sums = np.zeros(3)
        for idx in rng.permutation(len(usable)):
            utt = usable[idx]
            zero_grads(params)
            with Tape() as tape:
                total, l_ctc, l_att, _ = utterance_loss(model, utt, lam)
            parts = (
                total.item(),
                l_ctc.item() if l_ctc is not None else 0.0,
                l_att.item() if l_att is not None else 0.0,
            )
            if not all(math.isfinite(v) for v in parts):
                snapshot = {"epoch": epoch, "utterance": utt.id, "losses": parts}
                if out is not None:
                    save_params(model, out / "diverged.npz")
                raise TrainingDiverged(f"non-finite loss {parts} on {utt.id} in epoch {epoch}", snapshot)
            tape.backward(total)
            clip_gradients(params, config.clip_threshold)
            opt.step()
            sums += parts
        n = len(usable)
        acc = teacher_forced_accuracy(model, valid_utts) if valid_utts else float("nan")
        align = _probe_alignment(model, probe)
        rec = TrainRecord(
            epoch,
            sums[0] / n,
            sums[1] / n,
            sums[2] / n,
            acc,
            time.perf_counter() - t0,
            monotonicity_score(align),
            align,
            skipped,
        )
        history.records.append(rec)
        log.info(
            "epoch %d loss %.4f (ctc %.4f att %.4f) val_acc %.4f mono %.3f %.1fs",
            epoch, rec.total_loss, rec.ctc_loss, rec.att_loss, acc, rec.probe_monotonicity, rec.seconds,
        )
        if out is not None:
            np.savetxt(out / "align" / f"epoch_{epoch:03d}.csv", align, delimiter=",", fmt="%.10g")
            history.write_csv(out / "train_log.csv")
        if on_epoch is not None and on_epoch(rec):
            break
    if out is not None:
        history.write_csv(out / "train_log.csv")
    return history, model
