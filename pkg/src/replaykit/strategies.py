"""Continual-learning strategies run over a task stream.

Five strategies share one training loop: ``naive`` (fine-tuning only),
``replay`` (random rehearsal under a weighting policy), ``gdumb``
(greedy class-balanced buffer, model retrained from scratch), ``icarl``
(herding exemplars, distillation, nearest-mean classification) and
``gss`` (gradient-diversity buffer updated online).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mlp
from .augment import AugmentationSpec, NotAnImage, augment_batch
from .buffer import (
    ReplayBuffer,
    SelectionStrategy,
    WeightingPolicy,
    compute_allocation,
    gdumb_insert,
    gss_greedy_update,
    rebalance_after_task,
    sample_replay_batch,
    update_exemplar_sets,
)
from .streams import ExampleSet, Experience, TaskStream

STRATEGIES = ("naive", "replay", "gdumb", "icarl", "gss")
DEFAULT_BUFFER_MODE = {"naive": "task", "replay": "task", "gss": "task", "gdumb": "class", "icarl": "class"}


@dataclass(frozen=True)
class StrategyConfig:
    """Strategy kind plus its knobs.

    ``replay_ratio`` is the number of replayed samples per current sample
    in a minibatch. ``selection`` (``random`` or ``herding``) applies to
    ``replay`` only; ``gdumb_epochs`` to ``gdumb`` only (defaults to the
    run's epochs); ``gss_n_compare`` to ``gss`` only.
    """

    kind: str = "replay"
    replay_ratio: float = 1.0
    selection: str = "random"
    gdumb_epochs: int | None = None
    gss_n_compare: int = 10
    buffer_mode: str | None = None
    hidden: tuple = mlp.HIDDEN

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}; choose from {', '.join(STRATEGIES)}")
        if self.replay_ratio <= 0:
            raise ValueError("replay_ratio must be positive")
        if self.selection not in ("random", "herding"):
            raise ValueError(f"selection must be 'random' or 'herding', got {self.selection!r}")
        if self.selection != "random" and self.kind != "replay":
            raise ValueError("selection applies to the replay strategy only")
        if self.gdumb_epochs is not None and (self.kind != "gdumb" or self.gdumb_epochs < 0):
            raise ValueError("gdumb_epochs applies to the gdumb strategy only and must be >= 0")
        if self.gss_n_compare < 1:
            raise ValueError("gss_n_compare must be >= 1")
        if self.buffer_mode is not None and self.buffer_mode not in ("task", "class"):
            raise ValueError("buffer_mode must be 'task' or 'class'")
        if self.kind == "icarl" and self.buffer_mode == "task":
            raise ValueError("icarl keeps per-class exemplar sets; buffer_mode must be 'class'")
        if self.kind == "replay" and self.buffer_mode == "class":
            raise ValueError("replay allocates slots per task; buffer_mode must be 'task'")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def mode(self) -> str:
        return self.buffer_mode or DEFAULT_BUFFER_MODE[self.kind]


class RunRngs:
    """Independent generators per purpose, all derived from the run seed.

    Keeping them apart means e.g. an empty buffer consumes no randomness
    that would otherwise shift the minibatch order.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.shuffle = np.random.default_rng([self.seed, 2])
        self.replay = np.random.default_rng([self.seed, 3])
        self.buffer = np.random.default_rng([self.seed, 4])
        self.aug = np.random.default_rng([self.seed, 5])

    def init(self) -> np.random.Generator:
        return np.random.default_rng([self.seed, 0])

    def retrain(self) -> np.random.Generator:
        return np.random.default_rng([self.seed, 1])


@dataclass
class RunState:
    strategy: StrategyConfig
    params: mlp.MlpParams
    buffer: ReplayBuffer
    rngs: RunRngs
    n_classes: int
    seen_classes: list = field(default_factory=list)
    class_means: dict = field(default_factory=dict)

    @classmethod
    def create(cls, strategy: StrategyConfig, input_dim: int, n_classes: int, capacity: int, seed: int):
        rngs = RunRngs(seed)
        params = mlp.init_mlp(input_dim, n_classes, strategy.hidden, rngs.init())
        return cls(strategy, params, ReplayBuffer(capacity, strategy.mode), rngs, n_classes)

    def features(self, x) -> np.ndarray:
        return mlp.extract_features(self.params, x)

    def predict(self, x) -> np.ndarray:
        if self.strategy.kind == "icarl":
            return mlp.nme_classify(self.features(x), self.class_means)
        return mlp.predict(self.params, x)

    def accuracy(self, examples: ExampleSet) -> float:
        if len(examples) == 0:
            return 0.0
        return float(np.mean(self.predict(examples.x) == examples.y))


def _stack(examples):
    return np.stack([e.features for e in examples]), np.array([e.label for e in examples], dtype=np.int64)


def _fit(state: RunState, x, y, hyper: mlp.Hyperparams, rng, epochs: int, aug: AugmentationSpec,
         augment_current: bool, replay=None, loss=None, after_step=None):
    """Minibatch SGD over ``(x, y)``.

    ``replay(n)`` returns ``(rx, ry)`` to append to a minibatch of ``n``
    current samples, or None. ``loss(logits, labels, xb)`` defaults to
    softmax cross-entropy. ``after_step(epoch, idx)`` runs after each update.
    """
    n = len(y)
    bs = hyper.batch_size
    for epoch in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, bs):
            idx = perm[start:start + bs]
            xb, yb = x[idx], y[idx]
            if augment_current:
                xb = augment_batch(xb, aug, state.rngs.aug)
            if replay is not None:
                extra = replay(len(idx))
                if extra is not None:
                    xb = np.concatenate([xb, extra[0]])
                    yb = np.concatenate([yb, extra[1]])
            logits, cache = mlp.forward(state.params, xb)
            if loss is None:
                _, dlogits = mlp.cross_entropy_loss_and_grad(logits, yb)
            else:
                _, dlogits = loss(logits, yb, xb)
            mlp.sgd_step(state.params, mlp.backward(state.params, cache, dlogits), hyper)
            if after_step is not None:
                after_step(epoch, idx)


def _replay_sampler(state: RunState, aug: AugmentationSpec):
    def draw(n_current):
        if len(state.buffer) == 0:
            return None
        k = max(1, int(round(n_current * state.strategy.replay_ratio)))
        rx, ry = _stack(sample_replay_batch(state.buffer, k, state.rngs.replay))
        if aug.enabled:
            rx = augment_batch(rx, aug, state.rngs.aug)
        return rx, ry
    return draw


def train_experience(state: RunState, experience: Experience, hyper: mlp.Hyperparams,
                     policy: WeightingPolicy | None = None, aug: AugmentationSpec | None = None):
    """Train ``state`` on one experience and update its buffer.

    Returns the pre-experience :class:`mlp.ModelSnapshot` for ``icarl``,
    None otherwise.
    """
    policy = policy or WeightingPolicy()
    aug = aug or AugmentationSpec()
    kind = state.strategy.kind
    x, y = experience.train.x, experience.train.y
    augment_current = aug.enabled and aug.apply_to == "all"
    new_classes = [c for c in experience.classes if c not in state.seen_classes]
    snapshot = None

    if kind == "naive":
        _fit(state, x, y, hyper, state.rngs.shuffle, hyper.epochs, aug, augment_current)

    elif kind == "replay":
        _fit(state, x, y, hyper, state.rngs.shuffle, hyper.epochs, aug, augment_current,
             replay=_replay_sampler(state, aug))
        if state.buffer.capacity > 0:
            plan = compute_allocation(policy, state.buffer.capacity, experience.task_id + 1)
            rebalance_after_task(state.buffer, plan, experience.train,
                                 SelectionStrategy(state.strategy.selection), state.rngs.buffer,
                                 feature_fn=state.features)

    elif kind == "gdumb":
        for example in experience.train:
            gdumb_insert(state.buffer, example, state.rngs.buffer)
        state.params = mlp.init_mlp(state.params.input_dim, state.n_classes, state.strategy.hidden,
                                    state.rngs.init())
        stored = state.buffer.examples()
        epochs = hyper.epochs if state.strategy.gdumb_epochs is None else state.strategy.gdumb_epochs
        if len(stored):
            _fit(state, stored.x, stored.y, hyper, state.rngs.retrain(), epochs, aug, aug.enabled)

    elif kind == "icarl":
        snapshot = mlp.ModelSnapshot(state.params)
        old = list(state.seen_classes)

        def icarl_loss(logits, labels, xb):
            old_targets = mlp.sigmoid(snapshot.logits(xb)[:, old]) if old else None
            return mlp.icarl_loss_and_grad(logits, labels, new_classes, old, old_targets)

        _fit(state, x, y, hyper, state.rngs.shuffle, hyper.epochs, aug, augment_current,
             replay=_replay_sampler(state, aug), loss=icarl_loss)
        update_exemplar_sets(state.buffer, experience.train, state.features)
        state.class_means = _exemplar_means(state)

    elif kind == "gss":
        n_compare = state.strategy.gss_n_compare
        gradients = {}

        def grad_of(example):
            g = gradients.get(example.sample_id)
            if g is None:
                g = gradients[example.sample_id] = mlp.per_example_gradient(state.params, example)
            return g

        def offer(epoch, idx):
            # the buffer sees each stream sample once, during the first pass
            gradients.clear()
            if epoch == 0:
                for i in idx:
                    gss_greedy_update(state.buffer, experience.train[int(i)], grad_of, n_compare,
                                      state.rngs.buffer)

        _fit(state, x, y, hyper, state.rngs.shuffle, hyper.epochs, aug, augment_current,
             replay=_replay_sampler(state, aug), after_step=offer)

    state.seen_classes.extend(new_classes)
    return snapshot


def _exemplar_means(state: RunState) -> dict:
    means = {}
    for c, entries in state.buffer.groups.items():
        if not entries:
            continue
        feats = state.features(np.stack([e.example.features for e in entries]))
        mu = feats.mean(axis=0)
        norm = np.linalg.norm(mu)
        means[c] = mu / norm if norm > 0 else mu
    return means


def run_stream(strategy: StrategyConfig, stream: TaskStream, hyper: mlp.Hyperparams, capacity: int,
               policy: WeightingPolicy | None = None, aug: AugmentationSpec | None = None, seed: int = 0):
    """Train through every experience in order.

    Returns ``(R, state)`` where ``R[i, j]`` is the test accuracy on
    experience ``j`` after training experience ``i``.
    """
    aug = aug or AugmentationSpec()
    if aug.enabled and len(stream.feature_shape) != 3:
        raise NotAnImage(f"augmentation needs image samples, stream has shape {stream.feature_shape}")
    input_dim = int(np.prod(stream.feature_shape))
    state = RunState.create(strategy, input_dim, stream.n_classes, capacity, seed)
    n = len(stream)
    matrix = np.zeros((n, n))
    for i, experience in enumerate(stream):
        train_experience(state, experience, hyper, policy, aug)
        for j, other in enumerate(stream):
            matrix[i, j] = state.accuracy(other.test)
    return matrix, state
