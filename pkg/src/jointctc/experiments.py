"""Seeded toy-scale sweeps over the CTC weight lambda.

Used by the acceptance suite and the demos: every run trains a fresh model on
the same synthetic dataset and records the epoch at which teacher-forced
validation accuracy and probe-alignment monotonicity first cross thresholds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .cli import RunConfig
from .data import SynthDataset, synth_task
from .model import JointModel
from .train import TrainLog, TrainRecord, train

__all__ = ["ToyRun", "SweepResult", "toy_run", "lambda_sweep", "count_inversions"]


@dataclass
class ToyRun:
    mtl_lambda: float
    seed: int
    log: TrainLog
    seconds: float

    def first_epoch(self, threshold: float, key: str = "val_acc") -> int | None:
        """First epoch whose ``key`` strictly exceeds ``threshold``, else None."""
        return self.log.first_epoch_reaching(key, threshold)

    def value_at(self, epoch: int, key: str = "probe_monotonicity") -> float | None:
        for rec in self.log.records:
            if rec.epoch == epoch:
                return getattr(rec, key)
        return None

    @property
    def best_acc(self) -> float:
        return max((r.val_acc for r in self.log.records), default=float("nan"))


def toy_run(
    base: RunConfig,
    mtl_lambda: float,
    seed: int,
    dataset: SynthDataset | None = None,
    stop: Callable[[TrainRecord], bool] | None = None,
) -> ToyRun:
    """Train one model; ``seed`` drives initialisation and shuffling, the data
    come from ``base.seed`` unless ``dataset`` is given."""
    ds = dataset if dataset is not None else synth_task(base.synth_config())
    cfg = replace(base, mtl_lambda=mtl_lambda, seed=seed)
    model = JointModel(cfg.encoder_config(ds.train[0].features.shape[1]), cfg.attn_config(), len(ds.vocab), seed)
    t0 = time.perf_counter()
    log, _ = train(model, ds.train, ds.valid, cfg.mtl_config(), probe=ds.valid[0], on_epoch=stop)
    return ToyRun(mtl_lambda, seed, log, time.perf_counter() - t0)


def _stopper(acc: float, min_epoch: int = 0):
    """Stop once accuracy has exceeded ``acc`` and ``min_epoch`` is reached."""
    seen = [False]

    def stop(rec: TrainRecord) -> bool:
        seen[0] = seen[0] or rec.val_acc > acc
        return seen[0] and rec.epoch >= min_epoch

    return stop


def count_inversions(values: Sequence[float]) -> int:
    """Adjacent pairs where the sequence increases (it should not)."""
    return sum(1 for a, b in zip(values, values[1:]) if b > a)


@dataclass
class SweepResult:
    lambdas: tuple[float, ...]
    seeds: tuple[int, ...]
    acc_threshold: float
    epochs: int
    runs: dict[tuple[float, int], ToyRun] = field(default_factory=dict)

    def crossing_epoch(self, lam: float, seed: int) -> int:
        """Epoch of first accuracy crossing; runs that never cross count as epochs + 1."""
        e = self.runs[(lam, seed)].first_epoch(self.acc_threshold)
        return e if e is not None else self.epochs + 1

    def mean_crossing(self, lam: float) -> float:
        return float(np.mean([self.crossing_epoch(lam, s) for s in self.seeds]))

    def mean_curve(self, lam: float, key: str = "probe_monotonicity") -> np.ndarray:
        """Seed average of ``key`` per epoch, over the epochs every seed completed."""
        curves = [[getattr(r, key) for r in self.runs[(lam, s)].log.records] for s in self.seeds]
        n = min(len(c) for c in curves)
        return np.mean([c[:n] for c in curves], axis=0)

    def mean_first_epoch(self, lam: float, threshold: float, key: str = "probe_monotonicity") -> int | None:
        above = np.flatnonzero(self.mean_curve(lam, key) > threshold)
        return int(above[0]) + 1 if above.size else None

    def table(self) -> str:
        head = "lambda  " + "  ".join(f"seed {s:>2}" for s in self.seeds) + "    mean"
        rows = [head]
        for lam in self.lambdas:
            cells = "  ".join(f"{self.crossing_epoch(lam, s):>7d}" for s in self.seeds)
            rows.append(f"{lam:<6.1f}  {cells}  {self.mean_crossing(lam):>6.2f}")
        return "\n".join(rows)


def lambda_sweep(
    base: RunConfig,
    lambdas: Sequence[float] = (0.0, 0.2, 0.5, 0.8),
    seeds: Sequence[int] = (0, 1, 2),
    acc_threshold: float = 0.6,
    reference: float = 0.2,
    mono_threshold: float = 0.8,
    progress: Callable[[ToyRun], None] | None = None,
) -> SweepResult:
    """Train every (lambda, seed) pair on one synthetic dataset.

    Reference-lambda runs train for the full ``base.epochs``.  Other runs stop
    once validation accuracy exceeds ``acc_threshold``; pure-attention runs
    continue at least to the epochs where the reference's monotonicity first
    exceeded ``mono_threshold`` (seed-averaged and per seed), so the two can be
    compared there.
    """
    ds = synth_task(base.synth_config())
    result = SweepResult(tuple(lambdas), tuple(seeds), acc_threshold, base.epochs)

    def record(run: ToyRun) -> None:
        result.runs[(run.mtl_lambda, run.seed)] = run
        if progress is not None:
            progress(run)

    for seed in seeds:
        record(toy_run(base, reference, seed, ds))
    averaged = result.mean_first_epoch(reference, mono_threshold) or 0
    for lam in lambdas:
        if lam == reference:
            continue
        for seed in seeds:
            min_epoch = 0
            if lam == 0.0:
                own = result.runs[(reference, seed)].first_epoch(mono_threshold, "probe_monotonicity") or 0
                min_epoch = max(averaged, own)
            record(toy_run(base, lam, seed, ds, _stopper(acc=acc_threshold, min_epoch=min_epoch)))
    return result
