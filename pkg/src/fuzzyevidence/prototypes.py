"""Prototype refinement under dynamic retention thresholds.

A prototype is useful when it represents enough training points overall
(more than ``alpha * N``) and enough points of its own class ``k`` (more
than ``beta_k * N_k``), where

    alpha  = 1 / (K1 * |V|)
    beta_k = 1 / (K2 * |V_k|)

are recomputed from the current prototype set at every iteration. Each
iteration applies deletion, modification, splitting and merging in that
order, then re-partitions the data with a winner-only SOFM polish.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .sofm import UNLABELED, PrototypeSet, assign

log = logging.getLogger(__name__)


class RefinementError(RuntimeError):
    pass


@dataclass(frozen=True)
class RefineConfig:
    k1: float = 2.0
    k2: float = 2.0
    max_iterations: int = 20
    polish_epochs: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("K1 and K2 must be positive")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")


@dataclass(frozen=True)
class PrototypeStats:
    """Points represented by each prototype, split by class."""

    winners: np.ndarray
    per_class: np.ndarray  # (n_prototypes, n_classes)

    @property
    def totals(self) -> np.ndarray:
        return self.per_class.sum(axis=1)


def compute_thresholds(labels, class_count: int, k1: float, k2: float) -> tuple[float, np.ndarray]:
    """Global threshold ``alpha`` and per-class ``beta``.

    ``beta[k]`` is NaN for a class that currently has no prototype.
    """
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("empty prototype set")
    alpha = 1.0 / (k1 * len(labels))
    per_class = np.bincount(labels[labels >= 0], minlength=class_count)[:class_count]
    with np.errstate(divide="ignore"):
        beta = np.where(per_class > 0, 1.0 / (k2 * np.maximum(per_class, 1)), np.nan)
    return alpha, beta


def prototype_stats(vectors: np.ndarray, X: np.ndarray, y: np.ndarray, class_count: int) -> PrototypeStats:
    winners = assign(vectors, X)
    per_class = np.zeros((len(vectors), class_count), dtype=np.int64)
    np.add.at(per_class, (winners, y), 1)
    return PrototypeStats(winners, per_class)


def passing_classes(stats: PrototypeStats, beta: np.ndarray, class_sizes: np.ndarray, k2: float) -> np.ndarray:
    """Boolean ``(n_prototypes, n_classes)``: prototype passes the class test for that class.

    A class without prototypes is tested against ``1 / K2`` (as if it had one),
    which lets it be re-acquired through modification or splitting.
    """
    beta = np.where(np.isnan(beta), 1.0 / k2, beta)
    return (stats.per_class > beta * class_sizes) & (stats.per_class > 0)


def satisfies_thresholds(prototypes: PrototypeSet, X, y, class_count: int, config: RefineConfig) -> np.ndarray:
    """Per-prototype flag: passes both the global and its own-class test."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    alpha, beta = compute_thresholds(prototypes.labels, class_count, config.k1, config.k2)
    stats = prototype_stats(prototypes.vectors, X, y, class_count)
    sizes = np.bincount(y, minlength=class_count)
    ok = stats.totals > alpha * len(y)
    for i, k in enumerate(prototypes.labels):
        ok[i] &= k >= 0 and stats.per_class[i, k] > beta[k] * sizes[k]
    return ok


def winner_only_polish(prototypes: PrototypeSet, X, epochs: int, seed: int = 0) -> PrototypeSet:
    """Winner-only SOFM passes with a per-node harmonic learning rate.

    A node starts with a weight equal to the number of samples it currently
    represents (at least one); every win adds one and moves the node with
    rate ``1 / weight``. The node is thus a running mean of its starting
    position and the samples it wins, and moves little when it already
    represents many points. Labels are untouched.
    """
    if epochs <= 0 or len(prototypes) == 0:
        return prototypes
    X = np.asarray(X, dtype=np.float64)
    W = prototypes.vectors.copy()
    wins = np.maximum(np.bincount(assign(W, X), minlength=len(W)), 1).astype(np.int64)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        for i in rng.permutation(len(X)):
            x = X[i]
            r = int(np.argmin(((W - x) ** 2).sum(axis=1)))
            wins[r] += 1
            W[r] += (x - W[r]) / wins[r]
    return PrototypeSet(W, prototypes.labels.copy())


def _dedupe(V: np.ndarray, L: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    _, first = np.unique(V, axis=0, return_index=True)
    if len(first) == len(V):
        return V, L, False
    keep = np.sort(first)
    return V[keep], L[keep], True


def _refine_step(V, L, X, y, class_count, config, sizes):
    """One delete/modify/split/merge pass. Returns new (V, L) and whether anything changed."""
    N = len(y)
    alpha, beta = compute_thresholds(L, class_count, config.k1, config.k2)
    changed = False

    # deletion: too few points overall, or no class strongly represented
    stats = prototype_stats(V, X, y, class_count)
    passes = passing_classes(stats, beta, sizes, config.k2)
    keep = (stats.totals > alpha * N) & passes.any(axis=1)
    if not keep.all():
        log.debug("deleting %d prototypes", int((~keep).sum()))
        V, L = V[keep], L[keep]
        changed = True
        if len(V) == 0:
            raise RefinementError("refinement deleted every prototype")
        stats = prototype_stats(V, X, y, class_count)
        passes = passing_classes(stats, beta, sizes, config.k2)

    # modification: own class fails, relabel to the passing class with the most points
    for i in range(len(V)):
        k = L[i]
        own_ok = k >= 0 and passes[i, k]
        if not own_ok and passes[i].any():
            cand = np.flatnonzero(passes[i])
            new = int(cand[np.argmax(stats.per_class[i, cand])])
            if new != k:
                L = L.copy()
                L[i] = new
                changed = True

    # splitting: two or more classes strongly represented
    new_V, new_L = [], []
    for i in range(len(V)):
        cand = np.flatnonzero(passes[i])
        if len(cand) >= 2:
            members = stats.winners == i
            for k in cand:
                new_V.append(X[members & (y == k)].mean(axis=0))
                new_L.append(int(k))
            changed = True
        else:
            new_V.append(V[i])
            new_L.append(int(L[i]))
    V, L = np.array(new_V), np.array(new_L, dtype=np.intp)

    # merging: same-class mutual nearest neighbours whose union stays single-class
    if len(V) >= 2:
        stats = prototype_stats(V, X, y, class_count)
        alpha, beta = compute_thresholds(L, class_count, config.k1, config.k2)
        d = ((V[:, None, :] - V[None, :, :]) ** 2).sum(axis=2)
        np.fill_diagonal(d, np.inf)
        nn = np.argmin(d, axis=1)
        used = np.zeros(len(V), dtype=bool)
        merged_V, merged_L = [], []
        for i in range(len(V)):
            if used[i]:
                continue
            j = int(nn[i])
            if j > i and nn[j] == i and L[i] == L[j] and not used[j]:
                counts = stats.per_class[i] + stats.per_class[j]
                k = L[i]
                b = np.where(np.isnan(beta), 1.0 / config.k2, beta)
                # beta for the merged class is computed with one fewer prototype
                nk = max(int((L == k).sum()) - 1, 1)
                b = b.copy()
                b[k] = 1.0 / (config.k2 * nk)
                strong = counts > b * sizes
                if counts.sum() > alpha * N and strong[k] and strong.sum() == 1:
                    wi, wj = stats.totals[i], stats.totals[j]
                    w = wi + wj
                    centroid = (wi * V[i] + wj * V[j]) / w if w > 0 else (V[i] + V[j]) / 2
                    merged_V.append(centroid)
                    merged_L.append(int(k))
                    used[i] = used[j] = True
                    changed = True
                    continue
            merged_V.append(V[i])
            merged_L.append(int(L[i]))
            used[i] = True
        V, L = np.array(merged_V), np.array(merged_L, dtype=np.intp)

    V, L, duped = _dedupe(V, L)
    return V, L, changed or duped


def refine_prototypes(prototypes: PrototypeSet, X, y, config: RefineConfig, class_count: int | None = None) -> PrototypeSet:
    """Refine labeled prototypes until every one passes both retention tests.

    Stops at the first iteration that changes nothing, or after
    ``config.max_iterations``. Raises :class:`RefinementError` if a class that
    has training points ends up with no prototype.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    if class_count is None:
        class_count = int(y.max()) + 1
    sizes = np.bincount(y, minlength=class_count)
    V = prototypes.vectors.copy()
    L = prototypes.labels.copy()
    converged = False
    for it in range(config.max_iterations):
        V, L, changed = _refine_step(V, L, X, y, class_count, config, sizes)
        log.debug("refinement iteration %d: %d prototypes", it + 1, len(V))
        if not changed:
            converged = True
            break
        polished = winner_only_polish(PrototypeSet(V, L), X, config.polish_epochs, seed=config.seed + it)
        V, L, _ = _dedupe(polished.vectors, polished.labels)
    if not converged and config.max_iterations > 0:
        log.warning("prototype refinement did not settle in %d iterations", config.max_iterations)
    for k in range(class_count):
        if sizes[k] > 0 and not (L == k).any():
            raise RefinementError(f"class {k} has no prototype after refinement")
    return PrototypeSet(V, L)


__all__ = [
    "RefineConfig",
    "RefinementError",
    "PrototypeStats",
    "UNLABELED",
    "compute_thresholds",
    "prototype_stats",
    "refine_prototypes",
    "satisfies_thresholds",
    "winner_only_polish",
]
