"""Class-incremental task streams.

A stream is built in two steps: a labelled pool (train + test arrays) is
materialized from IDX files or a seeded generator, then split into
experiences holding disjoint class subsets, with a stratified validation
split carved off each class's training pool.
"""

from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import imaging

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
MEAN_PLACEMENT_BUDGET = 10_000


class DataError(Exception):
    """Raised for unreadable or inconsistent input data."""


class BadMagic(DataError):
    pass


class CountMismatch(DataError):
    pass


class TruncatedFile(DataError):
    pass


class NotDivisible(ValueError):
    pass


class InvalidPermutation(ValueError):
    pass


class RejectionBudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class TaggedExample:
    features: np.ndarray
    label: int
    task_id: int
    sample_id: int

    @property
    def is_image(self) -> bool:
        return self.features.ndim == 3


@dataclass(frozen=True, eq=False)
class ExampleSet:
    """Column-oriented list of examples.

    Indexing yields :class:`TaggedExample` views; training code uses the
    stacked arrays directly.
    """

    x: np.ndarray
    y: np.ndarray
    task_ids: np.ndarray
    sample_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    def __getitem__(self, i: int) -> TaggedExample:
        return TaggedExample(self.x[i], int(self.y[i]), int(self.task_ids[i]), int(self.sample_ids[i]))

    def __iter__(self) -> Iterator[TaggedExample]:
        return (self[i] for i in range(len(self)))

    def subset(self, idx) -> "ExampleSet":
        idx = np.asarray(idx, dtype=np.int64)
        return ExampleSet(self.x[idx], self.y[idx], self.task_ids[idx], self.sample_ids[idx])

    @classmethod
    def from_examples(cls, examples: Sequence[TaggedExample], feature_shape=None) -> "ExampleSet":
        if not examples:
            shape = tuple(feature_shape or (0,))
            empty = np.zeros(0, dtype=np.int64)
            return cls(np.zeros((0,) + shape), empty, empty.copy(), empty.copy())
        return cls(
            np.stack([e.features for e in examples]),
            np.array([e.label for e in examples], dtype=np.int64),
            np.array([e.task_id for e in examples], dtype=np.int64),
            np.array([e.sample_id for e in examples], dtype=np.int64),
        )

    def same_as(self, other: "ExampleSet") -> bool:
        return (
            np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.task_ids, other.task_ids)
            and np.array_equal(self.sample_ids, other.sample_ids)
        )


@dataclass(frozen=True, eq=False)
class Experience:
    task_id: int
    classes: tuple
    train: ExampleSet
    val: ExampleSet
    test: ExampleSet


@dataclass(frozen=True, eq=False)
class TaskStream:
    experiences: tuple
    class_order: tuple
    seed: int
    n_classes: int

    def __len__(self) -> int:
        return len(self.experiences)

    def __iter__(self) -> Iterator[Experience]:
        return iter(self.experiences)

    def __getitem__(self, i: int) -> Experience:
        return self.experiences[i]

    @property
    def feature_shape(self) -> tuple:
        return tuple(self.experiences[0].train.x.shape[1:])

    def same_as(self, other: "TaskStream") -> bool:
        if self.class_order != other.class_order or len(self) != len(other):
            return False
        for a, b in zip(self, other):
            if a.task_id != b.task_id or a.classes != b.classes:
                return False
            if not (a.train.same_as(b.train) and a.val.same_as(b.val) and a.test.same_as(b.test)):
                return False
        return True


@dataclass(frozen=True, eq=False)
class LabeledPool:
    """A materialized dataset before it is cut into experiences."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    n_classes: int


@dataclass(frozen=True)
class DatasetSpec:
    """Where the samples come from.

    ``source`` is one of ``synthetic`` (Gaussian class clusters in ``dim``
    dimensions), ``patterns`` (tiny single-channel images: a random blob
    prototype per class observed under random rotation and pixel noise) or
    ``idx`` (MNIST-family files on disk). ``per_class_train`` and
    ``per_class_test`` cap the counts read from IDX files; ``None`` keeps
    everything.
    """

    source: str = "synthetic"
    n_classes: int = 10
    per_class_train: int | None = 200
    per_class_test: int | None = 100
    dim: int = 32
    separation: float = 4.0
    sigma: float = 1.0
    image_size: int = 8
    max_rotation: float = 30.0
    validation_fraction: float = 0.1
    seed: int = 0
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None

    def __post_init__(self):
        if self.source not in ("synthetic", "patterns", "idx"):
            raise ValueError(f"unknown dataset source {self.source!r}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")
        if self.source != "idx" and self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.n_classes < 1:
            raise ValueError("n_classes must be positive")


# ---------------------------------------------------------------- IDX files

def _read_bytes(path) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def read_idx(path, expected_magic: int | None = None) -> np.ndarray:
    """Parse one big-endian IDX file holding unsigned bytes."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise TruncatedFile(f"{path}: missing header")
    magic = struct.unpack(">i", raw[:4])[0]
    zero0, zero1, dtype, ndim = raw[:4]
    if zero0 != 0 or zero1 != 0 or dtype != 0x08:
        raise BadMagic(f"{path}: magic {magic} is not an unsigned-byte IDX file")
    if expected_magic is not None and magic != expected_magic:
        raise BadMagic(f"{path}: magic {magic}, expected {expected_magic}")
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise TruncatedFile(f"{path}: header declares {ndim} dims but file ends early")
    dims = struct.unpack(f">{ndim}i", raw[4:header_end])
    n_values = math.prod(dims)
    if len(raw) - header_end < n_values:
        raise TruncatedFile(f"{path}: expected {n_values} data bytes, found {len(raw) - header_end}")
    data = np.frombuffer(raw, dtype=np.uint8, count=n_values, offset=header_end)
    return data.reshape(dims)


def load_idx(images_path, labels_path) -> list[tuple[np.ndarray, int]]:
    """Return ``(image, label)`` pairs with pixels scaled to [0, 1]."""
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images.shape[0]} images but {labels.shape[0]} labels")
    scaled = images.astype(np.float64) / 255.0
    return [(scaled[i], int(labels[i])) for i in range(images.shape[0])]


def _idx_arrays(images_path, labels_path, cap, n_classes):
    pairs = load_idx(images_path, labels_path)
    if not pairs:
        return np.zeros((0, 1, 1, 1)), np.zeros(0, dtype=np.int64)
    x = np.stack([p[0] for p in pairs])
    if x.ndim == 3:
        x = x[..., None]
    y = np.array([p[1] for p in pairs], dtype=np.int64)
    if y.max() >= n_classes:
        raise DataError(f"label {y.max()} outside 0..{n_classes - 1}")
    if cap is not None:
        keep = np.concatenate([np.flatnonzero(y == c)[:cap] for c in range(n_classes)])
        keep.sort()
        x, y = x[keep], y[keep]
    return x, y


# ---------------------------------------------------------------- generators

def place_class_means(n_classes: int, dim: int, separation: float, rng, budget: int = MEAN_PLACEMENT_BUDGET):
    """Draw class means one at a time, rejecting any draw closer than
    ``separation`` to an accepted mean.

    Candidates are drawn uniformly from a cube whose half-side grows with
    the separation and, in low dimension, with the class count.
    ``budget`` bounds the total number of draws.
    """
    side = 0.75 * separation * n_classes ** (1.0 / dim)
    means = []
    attempts = 0
    while len(means) < n_classes:
        if attempts >= budget:
            raise RejectionBudgetExceeded(
                f"placed {len(means)}/{n_classes} means at separation {separation} in dim {dim}"
            )
        attempts += 1
        candidate = rng.uniform(-side, side, size=dim)
        if all(np.linalg.norm(candidate - m) >= separation for m in means):
            means.append(candidate)
    return np.array(means)


def _synthetic_pool(spec: DatasetSpec) -> LabeledPool:
    rng = np.random.default_rng(spec.seed)
    means = place_class_means(spec.n_classes, spec.dim, spec.separation, rng)

    def draw(per_class):
        x = np.concatenate([means[c] + spec.sigma * rng.standard_normal((per_class, spec.dim))
                            for c in range(spec.n_classes)])
        y = np.repeat(np.arange(spec.n_classes, dtype=np.int64), per_class)
        return x, y

    x_train, y_train = draw(spec.per_class_train)
    x_test, y_test = draw(spec.per_class_test)
    return LabeledPool(x_train, y_train, x_test, y_test, spec.n_classes)


def _blob_prototype(size, rng, n_blobs=3):
    rr, cc = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    img = np.zeros((size, size))
    lo, hi = 0.2 * (size - 1), 0.8 * (size - 1)
    for _ in range(n_blobs):
        r0, c0 = rng.uniform(lo, hi, size=2)
        width = rng.uniform(0.6, 1.2) * size / 8.0
        img += np.exp(-((rr - r0) ** 2 + (cc - c0) ** 2) / (2 * width ** 2))
    return (img / img.max())[..., None]


def _pattern_pool(spec: DatasetSpec) -> LabeledPool:
    rng = np.random.default_rng(spec.seed)
    protos = [_blob_prototype(spec.image_size, rng) for _ in range(spec.n_classes)]

    def draw(per_class):
        xs = []
        for c in range(spec.n_classes):
            for _ in range(per_class):
                angle = rng.uniform(-spec.max_rotation, spec.max_rotation)
                img = imaging.rotate(protos[c], angle)
                img = img + spec.sigma * rng.standard_normal(img.shape)
                xs.append(np.clip(img, 0.0, 1.0))
        y = np.repeat(np.arange(spec.n_classes, dtype=np.int64), per_class)
        return np.stack(xs), y

    x_train, y_train = draw(spec.per_class_train)
    x_test, y_test = draw(spec.per_class_test)
    return LabeledPool(x_train, y_train, x_test, y_test, spec.n_classes)


def load_pool(spec: DatasetSpec) -> LabeledPool:
    if spec.source == "synthetic":
        return _synthetic_pool(spec)
    if spec.source == "patterns":
        return _pattern_pool(spec)
    paths = (spec.train_images, spec.train_labels, spec.test_images, spec.test_labels)
    if any(p is None for p in paths):
        raise DataError("idx source needs train_images, train_labels, test_images, test_labels")
    for p in paths:
        if not Path(p).exists():
            raise DataError(f"missing data file {p}")
    x_train, y_train = _idx_arrays(spec.train_images, spec.train_labels, spec.per_class_train, spec.n_classes)
    x_test, y_test = _idx_arrays(spec.test_images, spec.test_labels, spec.per_class_test, spec.n_classes)
    return LabeledPool(x_train, y_train, x_test, y_test, spec.n_classes)


# ---------------------------------------------------------------- splitting

def shuffled_class_order(n_classes: int, seed: int) -> tuple:
    return tuple(int(c) for c in np.random.default_rng(seed).permutation(n_classes))


def make_split_stream(dataset, n_experiences: int, class_order, seed: int,
                      validation_fraction: float | None = None) -> TaskStream:
    """Cut a dataset into ``n_experiences`` experiences of consecutive
    classes from ``class_order``.

    ``dataset`` is a :class:`DatasetSpec` or an already loaded
    :class:`LabeledPool`. ``seed`` drives the validation split only.
    """
    if isinstance(dataset, DatasetSpec):
        if validation_fraction is None:
            validation_fraction = dataset.validation_fraction
        pool = load_pool(dataset)
    else:
        pool = dataset
    if validation_fraction is None:
        validation_fraction = 0.1
    n_classes = pool.n_classes
    order = tuple(int(c) for c in class_order)
    if sorted(order) != list(range(n_classes)):
        raise InvalidPermutation(f"class order {order} is not a permutation of 0..{n_classes - 1}")
    if n_experiences < 1 or n_classes % n_experiences:
        raise NotDivisible(f"{n_classes} classes cannot be split into {n_experiences} experiences")

    per_exp = n_classes // n_experiences
    n_train = len(pool.y_train)
    rng = np.random.default_rng(seed)
    experiences = []
    for k in range(n_experiences):
        classes = order[k * per_exp:(k + 1) * per_exp]
        train_idx, val_idx = [], []
        for c in classes:
            members = np.flatnonzero(pool.y_train == c)
            n_val = int(math.floor(validation_fraction * len(members)))
            chosen = np.zeros(len(members), dtype=bool)
            chosen[rng.permutation(len(members))[:n_val]] = True
            val_idx.append(members[chosen])
            train_idx.append(members[~chosen])
        train_idx = np.sort(np.concatenate(train_idx))
        val_idx = np.sort(np.concatenate(val_idx))
        test_idx = np.flatnonzero(np.isin(pool.y_test, classes))

        def make(x, y, idx, offset):
            return ExampleSet(x[idx], y[idx], np.full(len(idx), k, dtype=np.int64),
                              idx.astype(np.int64) + offset)

        experiences.append(Experience(
            task_id=k,
            classes=tuple(sorted(classes)),
            train=make(pool.x_train, pool.y_train, train_idx, 0),
            val=make(pool.x_train, pool.y_train, val_idx, 0),
            test=make(pool.x_test, pool.y_test, test_idx, n_train),
        ))
    return TaskStream(tuple(experiences), order, int(seed), n_classes)


def make_synthetic_stream(n_classes: int, dim: int, per_class_train: int, per_class_test: int,
                          separation: float, sigma: float, n_experiences: int, seed: int,
                          validation_fraction: float = 0.1) -> TaskStream:
    """Gaussian-cluster stream in identity class order, fully determined by ``seed``."""
    if n_classes < n_experiences:
        raise NotDivisible(f"{n_classes} classes < {n_experiences} experiences")
    if separation <= 0 or sigma <= 0:
        raise ValueError("separation and sigma must be positive")
    spec = DatasetSpec(source="synthetic", n_classes=n_classes, dim=dim,
                       per_class_train=per_class_train, per_class_test=per_class_test,
                       separation=separation, sigma=sigma,
                       validation_fraction=validation_fraction, seed=seed)
    return make_split_stream(spec, n_experiences, range(n_classes), seed)


@dataclass(frozen=True)
class StreamSpec:
    """Dataset plus split settings; a run seed completes it into a stream."""

    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    n_experiences: int = 5
    shuffle_classes: bool = True

    def build(self, seed: int, pool: LabeledPool | None = None) -> TaskStream:
        n = self.dataset.n_classes
        order = shuffled_class_order(n, seed) if self.shuffle_classes else tuple(range(n))
        return make_split_stream(pool if pool is not None else self.dataset, self.n_experiences,
                                 order, seed, self.dataset.validation_fraction)
