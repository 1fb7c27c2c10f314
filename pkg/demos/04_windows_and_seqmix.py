"""Window construction at video edges and the cross-domain mixing
augmentation, with its bookkeeping."""

import numpy as np

from seqdg.data import SeqMixPool, SeqMixStats, build_windows, seqmix
from seqdg.synth import SynthConfig, generate

synth = SynthConfig(seed=3, videos_per_domain=1, actions_per_video=30)
store, _ = generate(synth)

print("== sliding windows with replicate padding ==")
one_video = [r for r in store.records if r.video_id == "S0_v0"]
windows = build_windows(one_video, W=5)
print(f"{len(one_video)} actions -> {len(windows)} windows (one per action)")
first = windows[0]
print("first window action ids:", [r.action_id for r in first.records])
print("padding flags:          ", list(first.padding))
print("(the two leading slots replicate action 0 and are flagged)")

print()
print("== SeqMix: swapping in a same-label action from another domain ==")
source_records = store.records_for(store.split.source)
pool = SeqMixPool(source_records, store.split.source)
rng = np.random.default_rng(0)
stats = SeqMixStats()
window = windows[7]
print("before:", [(r.domain_id, r.label) for r in window.records])
mixed = window
while mixed is window:
    mixed = seqmix(window, pool, 0.5, rng, stats=stats)
print("after: ", [(r.domain_id, r.label) for r in mixed.records])
print("(one slot changed domain; its verb/noun label is identical)")

print()
print("== the empirical replacement rate tracks the probability ==")
stats = SeqMixStats()
for i in range(10_000):
    seqmix(windows[i % len(windows)], pool, 0.5, rng, stats=stats)
print(f"draws {stats.draws}, replaced {stats.replaced} "
      f"(rate {stats.replaced / stats.draws:.3f}), "
      f"no candidate {stats.no_candidate}")
