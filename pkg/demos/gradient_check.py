"""
Checking the tape against finite differences
============================================

Every loss in the package is built from a handful of taped primitives, so a
single central-difference harness validates all of them.  Here we take a tiny
joint model and compare reverse-mode gradients of the combined objective with
numerical ones, parameter by parameter, for several CTC weights.
"""

from jointctc.checks import tiny_model, tiny_utterance
from jointctc.numgrad import check_gradients
from jointctc.train import utterance_loss

model = tiny_model(seed=0)
utt = tiny_utterance(seed=0)
print(f"{sum(p.data.size for p in model.params())} parameters, {utt.num_frames} frames, labels {utt.labels}")

for lam in (0.0, 0.5, 1.0):
    report = check_gradients(lambda: utterance_loss(model, utt, lam)[0], model.params(), eps=1e-5, tol=1e-4)
    print(f"\nlambda = {lam}: worst relative error {report.worst:.2e} -> {'ok' if report.passed else 'MISMATCH'}")
    # the three parameters that came closest to the tolerance
    for name, err in sorted(report.max_rel_error.items(), key=lambda kv: -kv[1])[:3]:
        print(f"  {name:<22}{err:.2e}")
