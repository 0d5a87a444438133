"""
Memory size versus accuracy, and where the curve bends
=======================================================

Run Naive fine-tuning and Replay on a class-incremental synthetic stream,
sweep the buffer size and locate the elbow of the accuracy curve.
Takes about a minute on one core.
"""

from replaykit import DatasetSpec, Hyperparams, StrategyConfig, StreamSpec, WeightingPolicy
from replaykit import elbow_point, run_sweep

stream = StreamSpec(DatasetSpec(n_classes=10, dim=32, separation=4.0, sigma=2.5), n_experiences=5)
hyper = Hyperparams(learning_rate=0.05, epochs=6)
seeds = [0, 1, 2]

naive = run_sweep(StrategyConfig("naive"), stream, [0], None, None, seeds, hyper)
print(f"naive fine-tuning: {naive.cells[0].mean:.3f} +- {naive.cells[0].std:.3f}")

sizes = [10, 20, 50, 100, 200, 500]
sweep = run_sweep(StrategyConfig("replay"), stream, sizes, WeightingPolicy("balanced"), None, seeds, hyper)
for cell in sweep.cells:
    print(f"replay, {cell.memory_size:4d} slots: {cell.mean:.3f} +- {cell.std:.3f}")

# The elbow: log-scaled sizes, both axes normalized to [0, 1], the point
# farthest from the straight line joining the ends.
elbow = elbow_point(sweep.curve("replay"))
print("elbow at", elbow.memory_size, "slots, accuracy", round(elbow.accuracy, 3))
