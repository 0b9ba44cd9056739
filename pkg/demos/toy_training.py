"""
Joint CTC-attention training on the synthetic alignment task
============================================================

Each utterance is a random label string; every label occupies 3-8 frames of
a noisy one-hot pattern.  We train the default toy model with CTC weight 0.2,
watch teacher-forced accuracy and the probe utterance's attention, and then
decode the validation set three ways.  Takes a few minutes on one core.
"""

import numpy as np

from jointctc.beam import beam_decode, edit_distance, greedy_decode
from jointctc.cli import RunConfig
from jointctc.data import synth_task
from jointctc.model import JointModel
from jointctc.numgrad import no_grad
from jointctc.train import train

cfg = RunConfig(mtl_lambda=0.2, epochs=20)
ds = synth_task(cfg.synth_config())
probe = ds.valid[0]
print(f"{len(ds.train)} train / {len(ds.valid)} valid utterances, vocabulary {ds.vocab.symbols}")
print(f"probe: {probe.num_frames} frames, labels {ds.vocab.decode(probe.labels)!r}")

model = JointModel(cfg.encoder_config(probe.features.shape[1]), cfg.attn_config(), len(ds.vocab), seed=cfg.seed)


# stop once validation accuracy passes 95%
def enough(rec):
    return rec.val_acc >= 0.95


log, model = train(model, ds.train, ds.valid, cfg.mtl_config(), probe=probe, on_epoch=enough)

print("\nepoch  total    ctc     att    val_acc  monotonicity")
for r in log.records:
    print(f"{r.epoch:>5}  {r.total_loss:6.3f}  {r.ctc_loss:6.3f}  {r.att_loss:6.3f}  {r.val_acc:7.3f}  {r.probe_monotonicity:7.3f}")

# the probe alignment as a character heat map: rows = output steps, columns = encoder frames
SHADES = " .:-=+*#%@"


def heat(a):
    idx = np.minimum((a / a.max(axis=1, keepdims=True) * (len(SHADES) - 1)).round().astype(int), len(SHADES) - 1)
    return "\n".join("|" + "".join(SHADES[i] for i in row) + "|" for row in idx)


print("\nprobe alignment after epoch 1:")
print(heat(log.records[0].probe_alignment))
print(f"\nprobe alignment after epoch {log.records[-1].epoch}:")
print(heat(log.records[-1].probe_alignment))

# decoding: attention beam search, attention greedy, CTC best path
errors = {"beam": 0, "greedy": 0, "ctc": 0}
ref_len = 0
with no_grad():
    for u in ds.valid:
        h = model.encode(u.features)
        eos = model.eos
        beam = beam_decode(model.decoder, h, cfg.beam_config())[0]
        greedy = greedy_decode(model.decoder, h)
        hyps = {
            "beam": [k for k in beam.labels if k != eos],
            "greedy": [k for k in greedy.labels if k != eos],
            "ctc": list(model.greedy_ctc(u.features)),
        }
        for name, hyp in hyps.items():
            errors[name] += edit_distance(hyp, u.labels)
        ref_len += len(u.labels)
print("\nvalidation character error rate:")
for name, e in errors.items():
    print(f"  {name:<7}{e / ref_len:.3%}")
