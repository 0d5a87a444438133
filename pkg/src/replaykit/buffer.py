"""Replay buffer: grouped storage, allocation policies and selection rules.

The buffer groups stored samples by task or by class. An allocation plan
decides how many slots each past task may keep; the selection rules decide
*which* samples fill those slots (uniform random, herding, the GDumb
greedy class balancer, or gradient-diversity scoring as in GSS).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .streams import ExampleSet, TaggedExample

POLICIES = (
    "balanced",
    "decreasing",
    "increasing",
    "middle",
    "middle_plus_replication",
    "middle_high",
    "middle_low",
    "middle_low_plus_replication",
)
REPLICATING_POLICIES = frozenset({"middle_plus_replication", "middle_low_plus_replication"})
SELECTIONS = ("random", "herding", "gss_greedy", "gdumb_greedy")


class EmptyBuffer(RuntimeError):
    pass


class EmptyPool(ValueError):
    pass


class PlanTaskMismatch(ValueError):
    pass


@dataclass(frozen=True)
class WeightingPolicy:
    kind: str = "balanced"
    factor: float = 3.0

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise ValueError(f"unknown weighting policy {self.kind!r}; choose from {', '.join(POLICIES)}")
        if self.kind != "balanced" and not self.factor > 1:
            raise ValueError(f"policy {self.kind} needs factor > 1, got {self.factor}")

    @property
    def replicates(self) -> bool:
        return self.kind in REPLICATING_POLICIES


@dataclass(frozen=True)
class SelectionStrategy:
    kind: str = "random"
    gss_n_compare: int = 10

    def __post_init__(self):
        if self.kind not in SELECTIONS:
            raise ValueError(f"unknown selection {self.kind!r}")
        if self.gss_n_compare < 1:
            raise ValueError("gss_n_compare must be >= 1")


@dataclass
class AllocationPlan:
    quotas: dict
    capacity: int
    replicate: bool = False

    @property
    def last_task(self) -> int:
        return max(self.quotas)


def policy_weights(kind: str, factor: float, n_tasks: int) -> np.ndarray:
    """Unnormalized per-task weights, task 0 being the oldest."""
    if n_tasks < 1:
        raise ValueError("n_tasks must be >= 1")
    i = np.arange(n_tasks)
    mid = (n_tasks - 1) // 2
    if kind == "balanced":
        exponent = np.zeros(n_tasks)
    elif kind == "increasing":
        exponent = i.astype(float)
    elif kind == "decreasing":
        exponent = (n_tasks - 1 - i).astype(float)
    elif kind in ("middle", "middle_plus_replication"):
        exponent = -np.abs(i - mid).astype(float)
    elif kind == "middle_high":
        exponent = -np.minimum(np.abs(i - mid), (n_tasks - 1) - i).astype(float)
    elif kind in ("middle_low", "middle_low_plus_replication"):
        exponent = -np.minimum(np.abs(i - mid), i).astype(float)
    else:
        raise ValueError(f"unknown weighting policy {kind!r}")
    return np.power(float(factor), exponent)


def compute_allocation(policy: WeightingPolicy, capacity: int, n_tasks: int) -> AllocationPlan:
    """Split ``capacity`` across tasks proportionally to the policy weights.

    Floors first, then the leftover slots go one each to the largest
    fractional parts; equal fractions favour the older task.
    """
    w = policy_weights(policy.kind, policy.factor, n_tasks)
    exact = capacity * w / w.sum()
    quotas = np.floor(exact).astype(np.int64)
    remainder = int(capacity - quotas.sum())
    frac = exact - quotas
    # stable sort on -frac keeps lower indices first among equal fractions
    for idx in np.argsort(-frac, kind="stable")[:remainder]:
        quotas[idx] += 1
    return AllocationPlan({t: int(q) for t, q in enumerate(quotas)}, int(capacity), policy.replicates)


@dataclass(eq=False)
class Entry:
    example: TaggedExample
    replicas: int = 1
    score: float = 0.0


class ReplayBuffer:
    """Capacity-bounded store of examples grouped by task id or label.

    ``capacity`` counts replicas: an entry replicated three times fills
    three slots.
    """

    def __init__(self, capacity: int, mode: str = "task"):
        if capacity < 0:
            raise ValueError("capacity must be non-negative")
        if mode not in ("task", "class"):
            raise ValueError(f"mode must be 'task' or 'class', got {mode!r}")
        self.capacity = int(capacity)
        self.mode = mode
        self.groups: dict[int, list[Entry]] = {}

    def key_of(self, example: TaggedExample) -> int:
        return example.task_id if self.mode == "task" else example.label

    def __len__(self) -> int:
        return sum(len(g) for g in self.groups.values())

    @property
    def size(self) -> int:
        return sum(e.replicas for g in self.groups.values() for e in g)

    @property
    def is_full(self) -> bool:
        return self.size >= self.capacity

    def group_size(self, key) -> int:
        return sum(e.replicas for e in self.groups.get(key, ()))

    def entries(self) -> list[Entry]:
        return [e for key in sorted(self.groups) for e in self.groups[key]]

    def add(self, example: TaggedExample, score: float = 0.0) -> None:
        self.groups.setdefault(self.key_of(example), []).append(Entry(example, 1, score))

    def remove(self, entry: Entry) -> None:
        group = self.groups[self.key_of(entry.example)]
        group.remove(entry)

    def examples(self) -> ExampleSet:
        return ExampleSet.from_examples([e.example for e in self.entries()])

    def dump(self) -> str:
        """Line-per-entry text view: ``group_key sample_id replica_count``."""
        return "".join(f"{key}\t{e.example.sample_id}\t{e.replicas}\n"
                       for key in sorted(self.groups) for e in self.groups[key])


# ---------------------------------------------------------------- herding

def herding_select(pool_features, k: int) -> list[int]:
    """Greedy herding order: each step adds the sample that brings the
    running exemplar mean closest to the pool mean.

    Returns ``k`` distinct indices in selection order, so any prefix is
    itself the herding selection of that size.
    """
    feats = np.asarray(pool_features, dtype=np.float64)
    n = len(feats)
    if n == 0:
        raise EmptyPool("herding needs a non-empty pool")
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside 1..{n}")
    mu = feats.mean(axis=0)
    running = np.zeros_like(mu)
    available = np.ones(n, dtype=bool)
    order = []
    for j in range(1, k + 1):
        dist = np.linalg.norm(mu - (running + feats) / j, axis=1)
        dist[~available] = np.inf
        pick = int(np.argmin(dist))
        order.append(pick)
        available[pick] = False
        running += feats[pick]
    return order


# ---------------------------------------------------------------- GSS

def gss_score(candidate_grad, reference_grads: Sequence) -> float:
    """Maximal cosine similarity between a gradient and a set of references.

    A zero candidate or an empty reference set scores 0; zero-norm
    references count as similarity 0.
    """
    g = np.asarray(candidate_grad, dtype=np.float64).ravel()
    g_norm = np.linalg.norm(g)
    if g_norm == 0 or len(reference_grads) == 0:
        return 0.0
    best = -np.inf
    for ref in reference_grads:
        r = np.asarray(ref, dtype=np.float64).ravel()
        r_norm = np.linalg.norm(r)
        sim = 0.0 if r_norm == 0 else float(g @ r) / (g_norm * r_norm)
        best = max(best, sim)
    return float(best)


def _reference_grads(entries, grad_of, n_compare, rng):
    n_ref = min(n_compare, len(entries))
    if n_ref == 0:
        return []
    picks = rng.choice(len(entries), size=n_ref, replace=False)
    return [grad_of(entries[i].example) for i in picks]


def gss_victim_probabilities(scores) -> np.ndarray:
    # negative cosine maxima cannot be probabilities; they clip to zero weight
    w = np.clip(np.asarray(scores, dtype=np.float64), 0.0, None)
    total = w.sum()
    if total == 0:
        return np.full(len(w), 1.0 / len(w))
    return w / total


def gss_greedy_update(buffer: ReplayBuffer, candidate: TaggedExample,
                      grad_of: Callable[[TaggedExample], np.ndarray],
                      n_compare: int, rng) -> bool:
    """Offer one streaming example to a GSS-managed buffer.

    Returns True when the candidate was stored.
    """
    if buffer.capacity == 0:
        return False
    entries = buffer.entries()
    if buffer.size < buffer.capacity:
        refs = _reference_grads(entries, grad_of, n_compare, rng)
        buffer.add(candidate, gss_score(grad_of(candidate), refs))
        return True
    scores = np.array([e.score for e in entries])
    victim = entries[int(rng.choice(len(entries), p=gss_victim_probabilities(scores)))]
    refs = _reference_grads(entries, grad_of, n_compare, rng)
    cand_score = gss_score(grad_of(candidate), refs)
    if cand_score < victim.score:
        buffer.remove(victim)
        buffer.add(candidate, cand_score)
        return True
    return False


# ---------------------------------------------------------------- GDumb

def gdumb_insert(buffer: ReplayBuffer, example: TaggedExample, rng) -> None:
    """Greedy balancer: when full, evict a random sample from the largest
    bucket before storing ``example``.

    Among equally large buckets the example's own bucket is preferred, then
    the lowest key, so a balanced buffer stays balanced.
    """
    if buffer.capacity == 0:
        return
    if buffer.size >= buffer.capacity:
        sizes = {k: len(g) for k, g in buffer.groups.items() if g}
        top = max(sizes.values())
        own = buffer.key_of(example)
        largest = own if sizes.get(own) == top else min(k for k, s in sizes.items() if s == top)
        group = buffer.groups[largest]
        group.pop(int(rng.integers(len(group))))
    buffer.add(example)


# ---------------------------------------------------------------- allocation-driven updates

def _select(pool: ExampleSet, k: int, strategy: SelectionStrategy, rng, feature_fn):
    if k <= 0:
        return []
    if strategy.kind == "herding":
        if feature_fn is None:
            raise ValueError("herding selection needs a feature function")
        return herding_select(feature_fn(pool.x), k)
    return sorted(int(i) for i in rng.choice(len(pool), size=k, replace=False))


def rebalance_after_task(buffer: ReplayBuffer, plan: AllocationPlan, finished_task_pool: ExampleSet,
                         strategy: SelectionStrategy, rng, feature_fn=None) -> ReplayBuffer:
    """Bring a task-grouped buffer in line with ``plan`` once a task ends.

    Past groups shrink to their quota (random eviction, or truncation of
    the herding order); they cannot grow back. The finished task's group
    is filled from its pool. Replication policies then pad the slack.
    """
    if buffer.mode != "task":
        raise PlanTaskMismatch("rebalancing works on task-grouped buffers")
    t = plan.last_task
    if set(plan.quotas) != set(range(t + 1)):
        raise PlanTaskMismatch(f"plan covers tasks {sorted(plan.quotas)}, expected 0..{t}")
    if len(finished_task_pool) and set(np.unique(finished_task_pool.task_ids)) != {t}:
        raise PlanTaskMismatch(f"pool holds tasks {np.unique(finished_task_pool.task_ids)}, plan ends at {t}")
    if any(g > t for g in buffer.groups):
        raise PlanTaskMismatch(f"buffer holds tasks beyond {t}")

    for entries in buffer.groups.values():
        for e in entries:
            e.replicas = 1
    for g in sorted(buffer.groups):
        if g == t:
            continue
        entries = buffer.groups[g]
        quota = plan.quotas[g]
        if len(entries) > quota:
            if strategy.kind == "herding":
                buffer.groups[g] = entries[:quota]
            else:
                keep = sorted(rng.choice(len(entries), size=quota, replace=False))
                buffer.groups[g] = [entries[i] for i in keep]

    k = min(plan.quotas[t], len(finished_task_pool))
    chosen = _select(finished_task_pool, k, strategy, rng, feature_fn)
    buffer.groups[t] = [Entry(finished_task_pool[i]) for i in chosen]
    buffer.groups = {g: v for g, v in buffer.groups.items() if v}

    if plan.replicate and buffer.capacity > 0:
        fill_replication(buffer, plan, rng)
    return buffer


def fill_replication(buffer: ReplayBuffer, plan: AllocationPlan, rng) -> ReplayBuffer:
    """Duplicate stored samples until the buffer's slots are all used,
    preferring groups still below their quota."""
    if buffer.size >= buffer.capacity:
        return buffer
    if len(buffer) == 0:
        raise EmptyBuffer("nothing stored to replicate")
    while buffer.size < buffer.capacity:
        under = [g for g, entries in buffer.groups.items()
                 if entries and buffer.group_size(g) < plan.quotas.get(g, 0)]
        keys = sorted(under) if under else sorted(g for g, v in buffer.groups.items() if v)
        pool = [e for g in keys for e in buffer.groups[g]]
        pool[int(rng.integers(len(pool)))].replicas += 1
    return buffer


def sample_replay_batch(buffer: ReplayBuffer, k: int, rng) -> list[TaggedExample]:
    """``k`` draws with replacement, each entry weighted by its replica count."""
    entries = buffer.entries()
    if not entries:
        raise EmptyBuffer("cannot sample from an empty buffer")
    if k < 1:
        raise ValueError("k must be >= 1")
    weights = np.array([e.replicas for e in entries], dtype=np.float64)
    idx = rng.choice(len(entries), size=k, replace=True, p=weights / weights.sum())
    return [entries[i].example for i in idx]


def update_exemplar_sets(buffer: ReplayBuffer, new_pool: ExampleSet, feature_fn) -> ReplayBuffer:
    """iCaRL exemplar management on a class-grouped buffer.

    Every seen class ends up with ``capacity // n_seen`` exemplars (or its
    whole pool if smaller). Old classes keep a prefix of their herding
    order; new classes are herded from ``new_pool`` using ``feature_fn``.
    """
    if buffer.mode != "class":
        raise ValueError("exemplar sets live in a class-grouped buffer")
    new_classes = [int(c) for c in np.unique(new_pool.y)]
    seen = sorted(set(buffer.groups) | set(new_classes))
    if not seen:
        return buffer
    per_class = buffer.capacity // len(seen)
    for c in list(buffer.groups):
        if c not in new_classes:
            buffer.groups[c] = buffer.groups[c][:per_class]
    for c in new_classes:
        members = new_pool.subset(np.flatnonzero(new_pool.y == c))
        k = min(per_class, len(members))
        order = herding_select(feature_fn(members.x), k) if k > 0 else []
        buffer.groups[c] = [Entry(members[i]) for i in order]
    buffer.groups = {g: v for g, v in buffer.groups.items() if v}
    return buffer


def class_counts(buffer: ReplayBuffer) -> dict:
    return {k: len(v) for k, v in sorted(buffer.groups.items())}

