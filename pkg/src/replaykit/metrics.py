"""Accuracy-matrix summaries, memory-size sweeps and elbow detection."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from .augment import AugmentationSpec
from .buffer import WeightingPolicy
from .mlp import Hyperparams
from .streams import StreamSpec, load_pool
from .strategies import StrategyConfig, run_stream

ELBOW_MIN_DISTANCE = 1e-6


class EmptyMatrix(ValueError):
    pass


class TooFewExperiences(ValueError):
    pass


class TooFewPoints(ValueError):
    pass


class NonMonotonicX(ValueError):
    pass


def _check_matrix(matrix) -> np.ndarray:
    r = np.asarray(matrix, dtype=np.float64)
    if r.size == 0:
        raise EmptyMatrix("accuracy matrix is empty")
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError(f"accuracy matrix must be square, got shape {r.shape}")
    return r


def average_accuracy(matrix) -> float:
    """Mean accuracy over all experiences after the last one was trained."""
    return float(np.mean(_check_matrix(matrix)[-1]))


def forgetting(matrix) -> np.ndarray:
    """Best earlier accuracy minus final accuracy, for every experience but the last."""
    r = _check_matrix(matrix)
    n = r.shape[0]
    if n < 2:
        raise TooFewExperiences("forgetting needs at least two experiences")
    return r[:n - 1, :n - 1].max(axis=0) - r[n - 1, :n - 1]


@dataclass(frozen=True)
class ElbowResult:
    memory_size: float
    accuracy: float
    chord_distance: float
    index: int


def elbow_point(curve) -> ElbowResult | None:
    """Knee of a memory/accuracy curve.

    Memory sizes go to log scale, then both axes are min-max normalized;
    the elbow is the interior point farthest from the chord joining the
    end points (earliest on ties). Returns None when no point deviates by
    more than ``ELBOW_MIN_DISTANCE``.
    """
    pts = [(float(m), float(a)) for m, a in curve]
    if len(pts) < 3:
        raise TooFewPoints(f"elbow detection needs >= 3 points, got {len(pts)}")
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    if np.any(xs <= 0):
        raise ValueError("memory sizes must be positive for the log scale")
    if np.any(np.diff(xs) <= 0):
        raise NonMonotonicX("memory sizes must be strictly increasing")
    lx = np.log(xs)
    nx = (lx - lx[0]) / (lx[-1] - lx[0])
    y_span = ys.max() - ys.min()
    if y_span == 0:
        return None
    ny = (ys - ys.min()) / y_span
    dx, dy = nx[-1] - nx[0], ny[-1] - ny[0]
    chord = math.hypot(dx, dy)
    dist = np.abs(dx * (ny - ny[0]) - dy * (nx - nx[0])) / chord
    interior = dist[1:-1]
    best = int(np.argmax(interior)) + 1
    if dist[best] < ELBOW_MIN_DISTANCE:
        return None
    return ElbowResult(float(xs[best]), float(ys[best]), float(dist[best]), best)


# ---------------------------------------------------------------- sweeps

@dataclass(frozen=True)
class SweepCell:
    label: str
    memory_size: int
    seeds: tuple
    accuracies: tuple
    mean: float
    std: float

    @property
    def degenerate(self) -> bool:
        """A single seed carries no spread; ``std`` is then reported as 0."""
        return len(self.seeds) < 2


@dataclass(frozen=True)
class SweepResult:
    cells: tuple

    def labels(self) -> list:
        return sorted({c.label for c in self.cells})

    def curve(self, label: str) -> list:
        return [(c.memory_size, c.mean) for c in self.cells if c.label == label]

    def rows(self) -> list:
        """``(label, memory_size, seed, accuracy)`` per run, sorted."""
        return sorted((c.label, c.memory_size, s, a) for c in self.cells
                      for s, a in zip(c.seeds, c.accuracies))


def aggregate(seed_accuracies: dict) -> tuple:
    """Mean and sample standard deviation, summed in seed order."""
    vals = [seed_accuracies[s] for s in sorted(seed_accuracies)]
    mean = math.fsum(vals) / len(vals)
    if len(vals) < 2:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in vals) / (len(vals) - 1)
    return mean, math.sqrt(var)


def run_cell(strategy: StrategyConfig, stream_spec: StreamSpec, memory_size: int,
             policy: WeightingPolicy, aug: AugmentationSpec, seed: int, hyper: Hyperparams, pool=None) -> float:
    """Final average accuracy of one (memory size, seed) run.

    The seed fixes the class order and every random draw of the run, so
    the memory sizes of one seed are compared on the same stream.
    """
    stream = stream_spec.build(seed, pool)
    matrix, _ = run_stream(strategy, stream, hyper, memory_size, policy, aug, seed)
    return average_accuracy(matrix)


def run_sweep(strategy: StrategyConfig, stream_spec: StreamSpec, memory_sizes, policy: WeightingPolicy | None,
              aug: AugmentationSpec | None, seeds, hyper: Hyperparams, label: str | None = None,
              jobs: int = 1) -> SweepResult:
    """Run every (memory size, seed) cell and aggregate per memory size."""
    sizes = [int(m) for m in memory_sizes]
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise NonMonotonicX(f"memory sizes {sizes} are not strictly increasing")
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("at least one seed is required")
    if len(set(seeds)) != len(seeds):
        raise ValueError(f"duplicate seeds in {seeds}")
    policy = policy or WeightingPolicy()
    aug = aug or AugmentationSpec()
    label = label or strategy.kind
    keys = [(m, s) for m in sizes for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futures = {k: ex.submit(run_cell, strategy, stream_spec, k[0], policy, aug, k[1], hyper) for k in keys}
            results = {k: f.result() for k, f in futures.items()}
    else:
        pool = load_pool(stream_spec.dataset)
        results = {k: run_cell(strategy, stream_spec, k[0], policy, aug, k[1], hyper, pool) for k in keys}
    cells = []
    for m in sizes:
        per_seed = {s: results[(m, s)] for s in seeds}
        mean, std = aggregate(per_seed)
        ordered = sorted(per_seed)
        cells.append(SweepCell(label, m, tuple(ordered), tuple(per_seed[s] for s in ordered), mean, std))
    return SweepResult(tuple(cells))


def spearman(x, y) -> float:
    """Spearman rank correlation (average ranks for ties)."""
    return float(spearmanr(x, y).statistic)
