"""Multi-layer perceptron with hand-written backpropagation.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``x`` of
shape ``(n, fan_in)`` maps to ``x @ W + b``. Inputs of any trailing shape
are flattened. All hidden layers use ReLU; the output layer is linear.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HIDDEN = (300, 300, 300)


class ShapeMismatch(ValueError):
    pass


class NonFiniteGradient(FloatingPointError):
    pass


class IndexOverlap(ValueError):
    pass


class NoExemplars(ValueError):
    pass


@dataclass
class Hyperparams:
    learning_rate: float = 0.01
    momentum: float = 0.0
    batch_size: int = 32
    epochs: int = 4

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class MlpParams:
    weights: list
    biases: list
    velocity_w: list = field(default=None)
    velocity_b: list = field(default=None)

    def __post_init__(self):
        if self.velocity_w is None:
            self.velocity_w = [np.zeros_like(w) for w in self.weights]
        if self.velocity_b is None:
            self.velocity_b = [np.zeros_like(b) for b in self.biases]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                         [v.copy() for v in self.velocity_w], [v.copy() for v in self.velocity_b])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for w, b in zip(self.weights, self.biases) for a in (w, b)])

    def equals(self, other: "MlpParams") -> bool:
        pairs = zip(self.weights + self.biases, other.weights + other.biases)
        return len(self.weights) == len(other.weights) and all(np.array_equal(a, b) for a, b in pairs)


class ModelSnapshot:
    """Read-only copy of the parameters taken before an experience starts."""

    def __init__(self, params: MlpParams):
        copy = params.copy()
        for a in copy.weights + copy.biases:
            a.setflags(write=False)
        self.params = copy

    def logits(self, x) -> np.ndarray:
        return forward(self.params, x)[0]


def init_mlp(input_dim: int, n_classes: int, hidden=HIDDEN, seed=0, dtype=np.float64) -> MlpParams:
    """He-style uniform init (limit sqrt(6 / fan_in)), zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sizes = [int(input_dim), *map(int, hidden), int(n_classes)]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return MlpParams(weights, biases)


def _flatten(params: MlpParams, batch) -> np.ndarray:
    x = np.asarray(batch)
    x = x.reshape(len(x), -1)
    if x.shape[1] != params.input_dim:
        raise ShapeMismatch(f"input has {x.shape[1]} features, network expects {params.input_dim}")
    return x.astype(params.weights[0].dtype, copy=False)


def forward(params: MlpParams, batch):
    """Return ``(logits, cache)``; ``cache`` holds each layer's input
    activation, ending with the last hidden layer's ReLU output."""
    a = _flatten(params, batch)
    cache = [a]
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        # row-wise product: a row's result must not depend on its batch mates
        z = (a[:, None, :] @ w)[:, 0] + b
        if i < last:
            a = np.maximum(z, 0.0)
            cache.append(a)
        else:
            return z, cache
    raise AssertionError("unreachable")


def backward(params: MlpParams, cache, dlogits):
    """Gradients of the loss w.r.t. every weight and bias, given dL/dlogits."""
    grads_w = [None] * len(params.weights)
    grads_b = [None] * len(params.biases)
    delta = dlogits
    for i in range(len(params.weights) - 1, -1, -1):
        a = cache[i]
        grads_w[i] = a.T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (a > 0)
    return grads_w, grads_b


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_loss_and_grad(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(n), labels]))
    dlogits = _softmax(logits)
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(z):
    return _sigmoid(np.asarray(z, dtype=np.float64))


def icarl_loss_and_grad(logits, labels, new_classes, old_classes, old_targets):
    """Per-logit sigmoid binary cross-entropy over the seen classes.

    New-class logits are pushed towards the one-hot label; old-class logits
    towards ``old_targets``, the snapshot's sigmoid outputs of shape
    ``(batch, len(old_classes))``. The loss is averaged over batch and seen
    logits; unseen logits get zero gradient.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    new_classes = [int(c) for c in new_classes]
    old_classes = [int(c) for c in old_classes]
    if set(new_classes) & set(old_classes):
        raise IndexOverlap(f"classes {sorted(set(new_classes) & set(old_classes))} are both old and new")
    n = len(labels)
    seen = old_classes + new_classes
    targets = np.empty((n, len(seen)), dtype=logits.dtype)
    if old_classes:
        targets[:, :len(old_classes)] = old_targets
    for j, c in enumerate(new_classes):
        targets[:, len(old_classes) + j] = labels == c
    z = logits[:, seen]
    # BCE(sigmoid(z), t) = softplus(z) - t*z, computed without overflow
    softplus = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    count = n * len(seen)
    loss = float(np.sum(softplus - targets * z) / count)
    dlogits = np.zeros_like(logits)
    dlogits[:, seen] = (_sigmoid(z) - targets) / count
    return loss, dlogits


def sgd_step(params: MlpParams, grads, hyper: Hyperparams) -> MlpParams:
    """In-place momentum SGD: ``v = momentum*v + g; w -= lr*v``."""
    grads_w, grads_b = grads
    for g in list(grads_w) + list(grads_b):
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("gradient contains NaN or inf")
    lr, mom = hyper.learning_rate, hyper.momentum
    for i in range(len(params.weights)):
        for p, v, g in ((params.weights[i], params.velocity_w[i], grads_w[i]),
                        (params.biases[i], params.velocity_b[i], grads_b[i])):
            v *= mom
            v += g
            p -= lr * v
    return params


def extract_features(params: MlpParams, batch) -> np.ndarray:
    """Last hidden layer activations, L2-normalized per row (zero rows stay zero)."""
    _, cache = forward(params, batch)
    feats = cache[-1]
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    return np.divide(feats, norms, out=feats.copy(), where=norms > 0)


def nme_classify(features, class_exemplar_means: dict):
    """Nearest-mean-of-exemplars label for each row of ``features``.

    Ties go to the lower class id. A 1-D ``features`` returns a scalar.
    """
    if not class_exemplar_means:
        raise NoExemplars("no class means available")
    classes = np.array(sorted(class_exemplar_means))
    means = np.stack([class_exemplar_means[c] for c in classes])
    f = np.asarray(features)
    single = f.ndim == 1
    f = np.atleast_2d(f)
    dist = np.linalg.norm(f[:, None, :] - means[None, :, :], axis=2)
    pred = classes[np.argmin(dist, axis=1)]
    return int(pred[0]) if single else pred


def predict(params: MlpParams, batch) -> np.ndarray:
    return np.argmax(forward(params, batch)[0], axis=1)


def per_example_gradients(params: MlpParams, batch, labels, loss_scale: float = 1.0) -> np.ndarray:
    """Cross-entropy gradient of each example on its own, one row per example.

    Row layout: W0, b0, W1, b1, ... each flattened in C order.
    """
    logits, cache = forward(params, batch)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    delta = _softmax(logits)
    delta[np.arange(n), labels] -= 1.0
    delta *= loss_scale
    parts = [None] * (2 * len(params.weights))
    for i in range(len(params.weights) - 1, -1, -1):
        a = cache[i]
        parts[2 * i] = np.einsum("bi,bo->bio", a, delta).reshape(n, -1)
        parts[2 * i + 1] = delta
        if i > 0:
            delta = (delta @ params.weights[i].T) * (a > 0)
    return np.concatenate(parts, axis=1)


def per_example_gradient(params: MlpParams, example, loss_kind: str = "ce", loss_scale: float = 1.0) -> np.ndarray:
    """Flat gradient vector for a single example (see :func:`per_example_gradients`)."""
    if loss_kind != "ce":
        raise ValueError(f"unsupported loss kind {loss_kind!r}")
    return per_example_gradients(params, example.features[None], [example.label], loss_scale)[0]


def save_checkpoint(params: MlpParams, path) -> None:
    """Write weights, biases and velocities to an ``.npz`` archive.

    Array names double as the shape manifest (``w0``, ``b0``, ...).
    """
    arrays = {}
    for i in range(len(params.weights)):
        arrays[f"w{i}"] = params.weights[i]
        arrays[f"b{i}"] = params.biases[i]
        arrays[f"vw{i}"] = params.velocity_w[i]
        arrays[f"vb{i}"] = params.velocity_b[i]
    np.savez(Path(path), **arrays)


def load_checkpoint(path) -> MlpParams:
    with np.load(Path(path)) as data:
        n = sum(1 for k in data.files if k.startswith("w"))
        return MlpParams([data[f"w{i}"] for i in range(n)], [data[f"b{i}"] for i in range(n)],
                         [data[f"vw{i}"] for i in range(n)], [data[f"vb{i}"] for i in range(n)])
