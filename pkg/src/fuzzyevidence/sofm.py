"""One-dimensional self-organizing feature map used to seed the prototypes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UNLABELED = -1


@dataclass(frozen=True)
class SofmConfig:
    """Training schedule for a 1-D map.

    Learning rate and kernel radius decay linearly from their start to end
    values over the total number of presentations (``epochs * n_samples``).
    """

    node_count: int
    epochs: int = 20
    learning_rate_start: float = 0.5
    learning_rate_end: float = 0.01
    radius_start: float = 2.0
    radius_end: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.node_count < 1:
            raise ValueError("node_count must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not (0 <= self.learning_rate_end <= self.learning_rate_start <= 1):
            raise ValueError("need 0 <= learning_rate_end <= learning_rate_start <= 1")
        if not (0 <= self.radius_end <= self.radius_start):
            raise ValueError("need 0 <= radius_end <= radius_start")


@dataclass(frozen=True)
class PrototypeSet:
    """Prototype vectors ``(n, p)`` and a label per vector (``-1`` = unlabeled)."""

    vectors: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=np.float64, ndmin=2)
        object.__setattr__(self, "vectors", vectors)
        if self.labels is None:
            object.__setattr__(self, "labels", np.full(len(vectors), UNLABELED, dtype=np.intp))
        else:
            labels = np.asarray(self.labels, dtype=np.intp)
            if labels.shape != (len(vectors),):
                raise ValueError("one label per prototype required")
            object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.vectors)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def squared_distances(vectors: np.ndarray, X: np.ndarray) -> np.ndarray:
    """``(n_samples, n_vectors)`` squared Euclidean distances."""
    diff = X[:, np.newaxis, :] - vectors[np.newaxis, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def find_winner(vectors, x) -> int:
    """Index of the vector nearest to ``x``; the lowest index wins ties."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim == 1:
        vectors = vectors[:, np.newaxis]
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if len(vectors) == 0:
        raise ValueError("empty prototype set")
    if x.shape != (vectors.shape[1],):
        raise ValueError(f"sample has dimension {x.shape[0]}, prototypes have {vectors.shape[1]}")
    d = ((vectors - x) ** 2).sum(axis=1)
    return int(np.argmin(d))


def assign(vectors: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Winner index for every row of ``X``."""
    if len(X) == 0:
        return np.empty(0, dtype=np.intp)
    return np.argmin(squared_distances(vectors, X), axis=1)


def sofm_step(W: np.ndarray, x: np.ndarray, learning_rate: float, radius: float) -> np.ndarray:
    """Present ``x`` once and return the updated weights.

    Nodes are updated with ``lr * h(r, i) * (x - w_i)`` where ``h`` is a
    Gaussian over grid-index distance from the winner ``r``; ``radius == 0``
    updates the winner only.
    """
    r = find_winner(W, x)
    h = _kernel(np.arange(len(W)), r, radius)
    return W + (learning_rate * h)[:, np.newaxis] * (x - W)


def _kernel(grid: np.ndarray, winner: int, radius: float) -> np.ndarray:
    denom = 2.0 * radius * radius
    if denom > 0:
        return np.exp(-((grid - winner) ** 2) / denom)
    # radius zero or so small that its square underflows
    return (grid == winner).astype(np.float64)


def _schedule(start: float, end: float, total: int) -> np.ndarray:
    if total <= 1:
        return np.full(max(total, 0), start)
    return start + (end - start) * np.arange(total) / (total - 1)


def _initial_weights(X: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    order = rng.permutation(len(X))
    picked, seen = [], set()
    for i in order:
        key = X[i].tobytes()
        if key not in seen:
            seen.add(key)
            picked.append(i)
            if len(picked) == n:
                break
    # fewer distinct samples than nodes: reuse samples
    while len(picked) < n:
        picked.append(order[len(picked) % len(order)])
    return X[np.array(picked)].copy()


def train_sofm(X, config: SofmConfig) -> PrototypeSet:
    """Train a 1-D map of ``config.node_count`` nodes on the rows of ``X``.

    Weights start at distinct random samples; samples are presented in a
    fresh random order each epoch. Everything is driven by one generator
    seeded from ``config.seed``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("train_sofm needs a non-empty (n, p) sample matrix")
    rng = np.random.default_rng(config.seed)
    W = _initial_weights(X, config.node_count, rng)
    total = config.epochs * len(X)
    lrs = _schedule(config.learning_rate_start, config.learning_rate_end, total)
    radii = _schedule(config.radius_start, config.radius_end, total)
    grid = np.arange(config.node_count)
    t = 0
    for _ in range(config.epochs):
        for i in rng.permutation(len(X)):
            x = X[i]
            r = int(np.argmin(((W - x) ** 2).sum(axis=1)))
            h = _kernel(grid, r, radii[t])
            W += (lrs[t] * h)[:, np.newaxis] * (x - W)
            t += 1
    return PrototypeSet(W)


def label_prototypes(prototypes: PrototypeSet, X, y, class_count: int | None = None) -> PrototypeSet:
    """Majority-vote label for each prototype over the samples it wins.

    Ties go to the lowest class index; a prototype that wins no sample is
    marked unlabeled (``-1``).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    if class_count is None:
        class_count = int(y.max()) + 1 if len(y) else 0
    winners = assign(prototypes.vectors, X)
    labels = np.full(len(prototypes), UNLABELED, dtype=np.intp)
    for i in range(len(prototypes)):
        won = y[winners == i]
        if won.size:
            labels[i] = int(np.argmax(np.bincount(won, minlength=class_count)))
    return PrototypeSet(prototypes.vectors.copy(), labels)
