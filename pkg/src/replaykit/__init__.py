"""Replay-based rehearsal toolkit for class-incremental continual learning."""

from .augment import AugmentationSpec, augment
from .buffer import (
    POLICIES,
    AllocationPlan,
    ReplayBuffer,
    SelectionStrategy,
    WeightingPolicy,
    compute_allocation,
    fill_replication,
    gdumb_insert,
    gss_greedy_update,
    gss_score,
    herding_select,
    policy_weights,
    rebalance_after_task,
    sample_replay_batch,
)
from .metrics import average_accuracy, elbow_point, forgetting, run_sweep
from .mlp import Hyperparams, MlpParams, init_mlp
from .streams import (
    DatasetSpec,
    ExampleSet,
    StreamSpec,
    TaggedExample,
    TaskStream,
    load_idx,
    make_split_stream,
    make_synthetic_stream,
)
from .strategies import StrategyConfig, run_stream, train_experience

__version__ = "0.1.0"
