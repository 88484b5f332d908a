#!/usr/bin/env python3
"""Prioritized segment replay from the inside: cutting an episode into
overlapping segments, mixed max/mean priorities, proportional sampling
with annealed exponents, and importance weights.
"""

import numpy as np

from fieldsac.replay import AnnealSchedule, PrioritizedStore, SegmentCutter, segment_priority

rng = np.random.default_rng(0)

# Cut a 23-step episode into overlapping 10-step segments (stride 5).
cutter = SegmentCutter(obs_dim=4, act_dim=2, episode_id=100, n_tail=5)
cutter.begin(rng.standard_normal(4))
segments = []
T = 23
for t in range(T):
    segments += cutter.push(rng.uniform(-1, 1, 2), rng.standard_normal(7), t == T - 1, rng.standard_normal(4))
print(f"{T}-step episode -> {len(segments)} segments")
for seg in segments:
    print(f"  start {seg.start_index:>2}  real steps {seg.length:>2}  terminal inside: {bool(seg.dones.any())}")

# The priority of a segment mixes the max and mean TD magnitude.
td = np.array([1.0, 2.0, 3.0])
print(f"\npriority of TD errors {td}: {segment_priority(td, eta=0.9)}  (0.9*max + 0.1*mean)")

# Proportional sampling: frequencies follow priority^alpha.
store = PrioritizedStore(capacity=1024, alpha=0.6, beta=0.4, n_tail=5)
for seg in segments:
    store.append(seg, priority=float(rng.uniform(0.5, 3.0)))
print(f"\nstore holds {len(store)} segments, priority^alpha total {store.brute_force_total():.3f}")

slots = store.sample_slots(50_000, rng)
freq = np.bincount(slots, minlength=len(store)) / 50_000
theory = store._raw_p[: len(store)] ** store.alpha
theory = theory / theory.sum()
print("slot  empirical  theoretical")
for i in range(len(store)):
    print(f"  {i}    {freq[i]:.4f}     {theory[i]:.4f}")

batch = store.sample(3, rng)
print(f"\nsampled batch: obs {batch.obs.shape}, weights {np.round(batch.weights, 3)} (max is 1)")

# Exponents anneal from 0.1 to 0.9 over 3000 learner steps.
sched = AnnealSchedule()
print("\nanneal:", {t: round(sched.value(t), 3) for t in (0, 750, 1500, 3000, 9999)})
store.set_exponents(alpha=sched.value(3000), beta=sched.value(3000))
print(f"after annealing alpha: priority^alpha total {store.brute_force_total():.3f}")
