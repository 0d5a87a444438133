"""
How the weighting policies split a replay buffer
=================================================

A replay buffer of fixed capacity is shared by every task seen so far.
A weighting policy decides how many slots each task gets. Below we print
the quotas of all eight policies, then watch a buffer evolve task by task.
"""

import numpy as np

from replaykit import POLICIES, ExampleSet, ReplayBuffer, TaggedExample, WeightingPolicy
from replaykit import SelectionStrategy, compute_allocation, rebalance_after_task

# Quotas for 100 slots over 5 tasks (task 0 is the oldest), factor 3.
for kind in POLICIES:
    plan = compute_allocation(WeightingPolicy(kind, 3.0), 100, 5)
    print(f"{kind:30s}", [plan.quotas[t] for t in range(5)])

# The factor controls how peaked the distribution is.
for factor in (1.5, 3.0, 6.0):
    plan = compute_allocation(WeightingPolicy("middle", factor), 100, 5)
    print("middle, factor", factor, [plan.quotas[t] for t in range(5)])

###############################################################################
# A buffer under the Middle policy
# --------------------------------
# Each task contributes 60 samples. After each task the buffer shrinks the
# older groups and fills the new one. Past groups can only shrink, so the
# peak in the middle can never be filled: the buffer ends under capacity.


def task_pool(task, n=60):
    return ExampleSet.from_examples(
        [TaggedExample(np.array([float(i)]), 2 * task, task, 1000 * task + i) for i in range(n)])


rng = np.random.default_rng(0)
for kind in ("middle", "middle_plus_replication"):
    buf = ReplayBuffer(100, "task")
    for t in range(5):
        plan = compute_allocation(WeightingPolicy(kind, 3.0), 100, t + 1)
        rebalance_after_task(buf, plan, task_pool(t), SelectionStrategy("random"), rng)
    groups = {k: buf.group_size(k) for k in sorted(buf.groups)}
    print(kind, "slots per task", groups, "size", buf.size)

# With replication the missing slots are filled by duplicating samples of
# the underfilled groups, so replay draws still follow the policy shape.
