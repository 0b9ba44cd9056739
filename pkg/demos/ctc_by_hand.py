"""
CTC on a problem small enough to enumerate
==========================================

Three frames, one base symbol "a" plus blank.  The label sequence (a,) can
be produced by six of the eight paths; a-a is excluded because it collapses
to "aa", and --- because it collapses to nothing.  We check the lattice against that enumeration, then
look at the per-frame forward-backward totals, which must all agree.
"""

import itertools

import numpy as np

from jointctc.ctc import augment_with_blanks, collapse, ctc_brute_force, ctc_forward_backward, ctc_loss

# frame posteriors, columns = (a, blank); blank is always the last column
q = np.array([[0.6, 0.4],
              [0.3, 0.7],
              [0.5, 0.5]])
y = (0,)
blank = q.shape[1] - 1

# every path of length 3 that collapses to y
paths = [p for p in itertools.product(range(2), repeat=3) if collapse(p, blank) == y]
print("paths:", ["".join("a-"[s] for s in p) for p in paths])
total = sum(np.prod([q[t, s] for t, s in enumerate(p)]) for p in paths)
print(f"sum over paths      {total:.12f}")
print(f"brute force helper  {ctc_brute_force(q, y):.12f}")
print(f"exp(-ctc_loss)      {np.exp(-ctc_loss(q, y)):.12f}")

# forward-backward: the log total is the same whichever frame we split at
lat = ctc_forward_backward(q, augment_with_blanks(y, blank))
per_frame = [np.logaddexp.reduce(lat.alpha[t] + lat.beta[t] - lat.emissions[t]) for t in range(len(q))]
print("per-frame log totals:", np.round(per_frame, 14))

# a larger random case, where enumeration is 4**7 paths
rng = np.random.default_rng(3)
q = rng.dirichlet(np.ones(4), size=7)
y = (0, 2, 2, 1)  # the repeated 2 needs a blank between its copies
print(f"\nT=7, y={y}: lattice {ctc_loss(q, y):.12f}  enumeration {-np.log(ctc_brute_force(q, y)):.12f}")
