"""
Choosing what to remember: herding and gradient diversity
=========================================================

Two sample-selection rules: herding keeps the points whose running mean
best tracks the class mean; GSS keeps samples whose gradients point in
different directions.
"""

import numpy as np

from replaykit import ReplayBuffer, TaggedExample, gss_greedy_update, gss_score, herding_select

rng = np.random.default_rng(1)
feats = rng.normal(size=(200, 2)) * [3.0, 0.5]
mu = feats.mean(axis=0)

order = herding_select(feats, 20)
for k in (1, 5, 10, 20):
    err_herd = np.linalg.norm(mu - feats[order[:k]].mean(axis=0))
    err_rand = np.median([np.linalg.norm(mu - feats[rng.choice(200, k, replace=False)].mean(axis=0))
                          for _ in range(200)])
    print(f"k={k:2d}  herding error {err_herd:.4f}   median random error {err_rand:.4f}")

# Herding is greedy, so the first k picks are the k-exemplar answer.
assert herding_select(feats, 5) == order[:5]

###############################################################################
# Gradient-based sample selection
# -------------------------------
# A sample's score is its highest cosine similarity to a few stored
# gradients. Redundant samples score high and become eviction targets.

print(gss_score([1.0, 0.0], [[1.0, 0.1], [0.0, 1.0]]))   # nearly parallel: ~0.995
print(gss_score([1.0, 0.0], [[0.0, 1.0], [-1.0, 0.0]]))  # orthogonal/opposite: 0

# Stream 500 2-d "gradients" drawn mostly along one axis into a 10-slot
# buffer. The stored directions end up more spread out than the stream.
grads = {}
for i in range(500):
    angle = rng.normal(0.0, 0.3) if rng.random() < 0.9 else rng.uniform(-np.pi, np.pi)
    grads[i] = np.array([np.cos(angle), np.sin(angle)])

buf = ReplayBuffer(10)
for i in range(500):
    gss_greedy_update(buf, TaggedExample(np.zeros(1), 0, 0, i), lambda e: grads[e.sample_id], 10, rng)

stream_angles = np.degrees([np.arctan2(g[1], g[0]) for g in grads.values()])
kept_angles = np.degrees([np.arctan2(*grads[e.example.sample_id][::-1]) for e in buf.entries()])
print("stream angle spread (deg):", round(float(np.std(stream_angles)), 1))
print("buffer angle spread (deg):", round(float(np.std(kept_angles)), 1))
