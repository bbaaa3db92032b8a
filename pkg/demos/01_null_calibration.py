"""How often does the detector fire on pure noise?

Each simulated track is a run of independent per-message flags, each raised
with probability p.  A track is reported when its most surprising segment has
a number of false alarms below epsilon, so on this null data the share of
reported tracks should stay at or below epsilon.

    python demos/01_null_calibration.py [--tracks 5000] [--length 100]
"""
# %%
import argparse
import math

import numpy as np

from geotracknet.contrario import binomial_tail, min_nfa_segment, n_segments

parser = argparse.ArgumentParser()
parser.add_argument("--tracks", type=int, default=5000)
parser.add_argument("--length", type=int, default=100)
parser.add_argument("--p", type=float, default=0.1)
parser.add_argument("--seed", type=int, default=0)
args = parser.parse_args()

# %% A three-message example: two flags at the start.
flags = [True, True, False]
seg = min_nfa_segment(flags, 0.1)
print(f"segments in a 3-message track: {n_segments(3)}")
print(f"best segment starts at {seg.start}, length {seg.n}, {seg.k} flags, "
      f"NFA = {n_segments(3)} x {binomial_tail(seg.n, seg.k, 0.1):.3f} = {math.exp(seg.log_nfa):.3f}")

# %% Null simulation.
rng = np.random.default_rng(args.seed)
null_flags = rng.random((args.tracks, args.length)) < args.p
log_nfa = np.array([min_nfa_segment(f, args.p).log_nfa for f in null_flags])

print(f"\n{args.tracks} null tracks of {args.length} messages, p = {args.p}")
print(f"{'epsilon':>10} {'reported':>10} {'share':>10}")
for eps in (0.001, 0.01, 0.1, 1.0, 10.0):
    hits = int(np.sum(log_nfa < math.log(eps)))
    print(f"{eps:>10g} {hits:>10d} {hits / args.tracks:>10.4f}")
