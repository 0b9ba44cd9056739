"""
How the CTC weight changes learning speed on the toy task
=========================================================

Trains the default toy model at four CTC weights (one seed each by default,
pass more seeds on the command line) and reports the first epoch where
teacher-forced validation accuracy exceeds 60% and where the probe
utterance's alignment becomes monotone.  Expect roughly ten minutes per seed.

    python demos/lambda_sweep.py 0 1 2
"""

import sys

from jointctc.cli import RunConfig
from jointctc.experiments import lambda_sweep

seeds = tuple(int(s) for s in sys.argv[1:]) or (0,)


def show(run):
    acc = run.first_epoch(0.6)
    mono = run.first_epoch(0.8, "probe_monotonicity")
    print(f"lambda {run.mtl_lambda:<4} seed {run.seed}: acc>60% at epoch {acc}, monotonicity>0.8 at epoch {mono}, "
          f"best acc {run.best_acc:.3f} after {len(run.log)} epochs ({run.seconds:.0f}s)", flush=True)


result = lambda_sweep(RunConfig(), seeds=seeds, progress=show)
print("\nepoch at which validation accuracy first exceeds 60% (21 = never within 20 epochs)")
print(result.table())
