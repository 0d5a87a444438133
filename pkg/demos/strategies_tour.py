"""
Five strategies on one stream
=============================

Naive, Replay, GDumb, iCaRL and GSS on the same stream and buffer size.
The accuracy matrix row i holds the test accuracy on every experience
after training experience i. GSS computes per-sample gradients and is
the slowest (tens of seconds).
"""

import numpy as np

from replaykit import DatasetSpec, Hyperparams, StrategyConfig, StreamSpec
from replaykit import average_accuracy, forgetting, run_stream

stream = StreamSpec(DatasetSpec(n_classes=10, dim=32, sigma=2.5), n_experiences=5).build(seed=0)
hyper = Hyperparams(learning_rate=0.05, epochs=4)

np.set_printoptions(precision=2, suppress=True)
for kind in ("naive", "replay", "gdumb", "icarl", "gss"):
    matrix, state = run_stream(StrategyConfig(kind), stream, hyper, capacity=100, seed=0)
    print(f"{kind}: average accuracy {average_accuracy(matrix):.3f}, "
          f"mean forgetting {forgetting(matrix).mean():.3f}, buffer {state.buffer.size}")
    print(matrix)
