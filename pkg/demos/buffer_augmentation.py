"""
Augmenting replayed samples
===========================

Small buffers are replayed many times and the model memorizes them.
Rotating replayed images on every draw turns each stored sample into
many. The stream here is 8x8 synthetic patterns whose classes already vary
by rotation.
"""

import numpy as np

from replaykit import AugmentationSpec, DatasetSpec, Hyperparams, StrategyConfig, StreamSpec, TaggedExample
from replaykit import augment, run_sweep

stream = StreamSpec(DatasetSpec(source="patterns", sigma=0.2, per_class_train=100), n_experiences=5)
hyper = Hyperparams(learning_rate=0.05, epochs=4)

# One sample, four draws: label and shape never change.
first = stream.build(0)[0].train[0]
rng = np.random.default_rng(0)
spec = AugmentationSpec(("horizontal_flip", "rotation"))
for _ in range(4):
    out = augment(first, spec, rng)
    print(out.label, out.features.shape, np.round(out.features[:, :, 0].sum(), 2))

for name, aug in (("none", None), ("rotation", AugmentationSpec(("rotation",))),
                  ("flip+crop", AugmentationSpec(("horizontal_flip", "resize_crop")))):
    res = run_sweep(StrategyConfig("replay"), stream, [20, 100], None, aug, range(4), hyper)
    print(f"{name:10s}", "  ".join(f"{c.memory_size}: {c.mean:.3f}" for c in res.cells))
