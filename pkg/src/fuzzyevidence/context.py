"""Contextual decisions over a pixel's 3x3 neighbourhood of label vectors.

Four ways to turn the nine possibilistic label vectors around a pixel into
one class decision:

``m1``
    average the vectors (fuzzy k-NN style) and take the largest component.
``m2``
    one Bayesian BPA per neighbour built from neighbour + centre vectors,
    combined with Dempster's rule (closed product form).
``m3``
    like ``m2`` but with mass also on two-class sets; decided by the
    pignistic probability of the combined BPA.
``m4``
    one simple support function per pixel focused on its best class, the
    neighbours' support scaled by ``w``; combined and decided by pignistic
    probability.

Every method has a per-neighbourhood implementation on top of
:mod:`fuzzyevidence.evidence` and a vectorized whole-plane path used by
:func:`classify_image`. The two agree decision for decision.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .evidence import Bpa, TotalConflict, combine_all, decide, full_set, pignistic
from .raster_io import UNLABELED, GroundTruth, Raster
from .rulebase import OUTLIER, Rulebase, classify_noncontextual, classify_rows, decide_rows, label_vectors

log = logging.getLogger(__name__)

# row-major order of the eight neighbours
OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
OUTLIER_CODE = 254
DEFAULT_W_GRID = tuple(round(0.05 * i, 2) for i in range(1, 21))
_CONFLICT_TOL = 1e-12


class DegenerateEvidence(ValueError):
    """A label-vector pair carries no evidence (all numerators zero)."""


class Method(str, Enum):
    M1 = "m1"
    M2 = "m2"
    M3 = "m3"
    M4 = "m4"


@dataclass(frozen=True)
class ContextConfig:
    method: Method = Method.M1
    w: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if not 0.0 <= self.w <= 1.0:
            raise ValueError(f"w must lie in [0, 1], got {self.w}")


@dataclass(frozen=True)
class Neighborhood:
    """Centre label vector plus up to eight neighbours (``None`` where off-image)."""

    center: np.ndarray
    neighbors: tuple

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64)
        nbrs = tuple(None if v is None else np.asarray(v, dtype=np.float64) for v in self.neighbors)
        if len(nbrs) != 8:
            raise ValueError("a neighbourhood has exactly eight neighbour slots")
        if any(v is not None and v.shape != center.shape for v in nbrs):
            raise ValueError("all label vectors must have the same length")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "neighbors", nbrs)

    @property
    def class_count(self) -> int:
        return len(self.center)

    def present(self) -> list[np.ndarray]:
        return [v for v in self.neighbors if v is not None]

    @classmethod
    def from_plane(cls, plane: np.ndarray, row: int, col: int) -> "Neighborhood":
        H, W = plane.shape[:2]
        nbrs = []
        for dr, dc in OFFSETS:
            r, c = row + dr, col + dc
            nbrs.append(plane[r, c] if 0 <= r < H and 0 <= c < W else None)
        return cls(plane[row, col], tuple(nbrs))


@dataclass(frozen=True)
class Classification:
    labels: np.ndarray  # (H, W) class indices, OUTLIER for outliers
    fallbacks: int = 0  # pixels decided noncontextually after total conflict / no evidence

    def encoded(self) -> np.ndarray:
        """uint8 class map with outliers as :data:`OUTLIER_CODE`."""
        out = self.labels.astype(np.int64)
        out[out == OUTLIER] = OUTLIER_CODE
        return out.astype(np.uint8)


# ---------------------------------------------------------------------------
# per-neighbourhood methods


def method1(nb: Neighborhood) -> int:
    """Mean of the present label vectors, then the largest component."""
    stack = np.vstack([nb.center] + nb.present())
    mean = stack.sum(axis=0) / len(stack)
    return classify_noncontextual(mean)


def method2_bpa(center, neighbor) -> Bpa:
    """Bayesian BPA with ``m({k}) = (a_k^i + a_k^0) / S``."""
    num = np.asarray(neighbor, dtype=np.float64) + np.asarray(center, dtype=np.float64)
    S = num.sum()
    if S <= 0:
        raise DegenerateEvidence("centre and neighbour label vectors are both zero")
    return Bpa.bayesian(num / S)


def method2_global(nb: Neighborhood) -> np.ndarray | None:
    """Singleton masses of the combined neighbour BPAs, via the normalized product.

    Returns ``None`` when no neighbour yields a BPA. Raises
    :class:`TotalConflict` when the products vanish for every class.
    """
    prod = np.ones(nb.class_count)
    valid = 0
    for v in nb.present():
        num = v + nb.center
        S = num.sum()
        if S <= 0:
            continue
        prod *= num / S
        valid += 1
    if valid == 0:
        return None
    total = prod.sum()
    if total <= 0:
        raise TotalConflict("neighbour BPAs share no class")
    return prod / total


def method2_iterated(nb: Neighborhood) -> Bpa | None:
    """Same global BPA as :func:`method2_global`, by repeated Dempster combination."""
    bpas = []
    for v in nb.present():
        try:
            bpas.append(method2_bpa(nb.center, v))
        except DegenerateEvidence:
            pass
    return combine_all(bpas) if bpas else None


def method2(nb: Neighborhood) -> int:
    try:
        g = method2_global(nb)
    except TotalConflict:
        g = None
    if g is None:
        return classify_noncontextual(nb.center)
    return decide(g)


def method3_numerators(center, neighbor) -> tuple[np.ndarray, np.ndarray]:
    """Singleton numerators ``(c,)`` and symmetric two-class numerators ``(c, c)``.

    The two-class numerator for ``{l, m}`` already includes the halving,
    ``((a_l^i + a_m^0) + (a_m^i + a_l^0)) / 2``; the diagonal is zero.
    """
    a0 = np.asarray(center, dtype=np.float64)
    ai = np.asarray(neighbor, dtype=np.float64)
    single = ai + a0
    pair = (ai[:, None] + a0[None, :] + ai[None, :] + a0[:, None]) / 2.0
    np.fill_diagonal(pair, 0.0)
    return single, pair


def method3_bpa(center, neighbor) -> Bpa:
    """BPA on singletons and two-class sets, renormalized to total mass one."""
    single, pair = method3_numerators(center, neighbor)
    c = len(single)
    total = single.sum() + np.triu(pair, 1).sum()
    if total <= 0:
        raise DegenerateEvidence("centre and neighbour label vectors are both zero")
    masses = {1 << k: single[k] / total for k in range(c)}
    for l in range(c):
        for m in range(l + 1, c):
            masses[(1 << l) | (1 << m)] = pair[l, m] / total
    return Bpa(c, masses)


def _combine_neighbor_bpas(nb: Neighborhood, make) -> Bpa | None:
    bpas = []
    for v in nb.present():
        try:
            bpas.append(make(nb.center, v))
        except DegenerateEvidence:
            pass
    return combine_all(bpas) if bpas else None


def method3(nb: Neighborhood) -> int:
    try:
        g = _combine_neighbor_bpas(nb, method3_bpa)
    except TotalConflict:
        g = None
    if g is None:
        return classify_noncontextual(nb.center)
    return decide(pignistic(g))


def method4_bpa(alpha, w: float = 1.0, is_center: bool = False) -> Bpa:
    """Simple support on the best class ``q``: ``m({q}) = w' * a_q``, the rest on the frame.

    ``w' = 1`` for the centre pixel and ``w`` for neighbours. A zero label
    vector gives the vacuous BPA.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    c = len(alpha)
    if not (alpha > 0).any():
        return Bpa.vacuous(c)
    q = decide(alpha)
    s = alpha[q] if is_center else w * alpha[q]
    if s <= 0:
        return Bpa.vacuous(c)
    masses = {1 << q: s}
    if s < 1:
        masses[full_set(c)] = 1.0 - s
    return Bpa(c, masses)


def method4_bpa_unweighted(alpha) -> Bpa:
    """``m({q}) = a_q``, ``m(frame) = 1 - a_q`` with ``q`` the best class."""
    alpha = np.asarray(alpha, dtype=np.float64)
    c = len(alpha)
    q = decide(alpha)
    return Bpa(c, {1 << q: alpha[q], full_set(c): 1.0 - alpha[q]})


def _method4_decision(nb: Neighborhood, bpas: Sequence[Bpa]) -> int:
    vac = full_set(nb.class_count)
    if all(set(m.masses) == {vac} for m in bpas):
        return OUTLIER
    try:
        g = combine_all(bpas)
    except TotalConflict:
        return classify_noncontextual(nb.center)
    return decide(pignistic(g))


def method4(nb: Neighborhood, w: float = 1.0) -> int:
    bpas = [method4_bpa(nb.center, w, is_center=True)]
    bpas += [method4_bpa(v, w) for v in nb.present()]
    return _method4_decision(nb, bpas)


def method4_unweighted(nb: Neighborhood) -> int:
    bpas = [method4_bpa_unweighted(v) for v in [nb.center] + nb.present()]
    return _method4_decision(nb, bpas)


def decide_neighborhood(nb: Neighborhood, config: ContextConfig) -> int:
    if config.method is Method.M1:
        return method1(nb)
    if config.method is Method.M2:
        return method2(nb)
    if config.method is Method.M3:
        return method3(nb)
    return method4(nb, config.w)


# ---------------------------------------------------------------------------
# vectorized whole-plane paths


def _shifted(padded: np.ndarray, r0: int, r1: int, W: int, dr: int, dc: int) -> np.ndarray:
    return padded[1 + r0 + dr : 1 + r1 + dr, 1 + dc : 1 + W + dc]


def _plane1(center, nbrs, present):
    total = center.copy()
    count = np.ones(center.shape[:-1])
    for v, ok in zip(nbrs, present):
        total += np.where(ok[..., None], v, 0.0)
        count += ok
    return classify_rows(total / count[..., None]), np.zeros(center.shape[:-1], dtype=bool)


def _plane2(center, nbrs, present):
    prod = np.ones_like(center)
    valid = np.zeros(center.shape[:-1], dtype=np.int64)
    for v, ok in zip(nbrs, present):
        num = v + center
        S = num.sum(axis=-1)
        use = ok & (S > 0)
        prod *= np.where(use[..., None], num / np.where(use, S, 1.0)[..., None], 1.0)
        valid += use
    total = prod.sum(axis=-1)
    fallback = (valid == 0) | (total <= 0)
    g = prod / np.where(fallback, 1.0, total)[..., None]
    out = decide_rows(g)
    out[fallback] = classify_rows(center[fallback])
    return out, fallback


def _plane3(center, nbrs, present):
    shape = center.shape[:-1]
    c = center.shape[-1]
    s = d = None
    valid = np.zeros(shape, dtype=bool)
    conflict = np.zeros(shape, dtype=bool)
    eye = np.eye(c, dtype=bool)
    for v, ok in zip(nbrs, present):
        s2 = v + center
        d2 = (v[..., :, None] + center[..., None, :] + v[..., None, :] + center[..., :, None]) / 2.0
        d2[..., eye] = 0.0
        tot = s2.sum(axis=-1) + d2.sum(axis=(-2, -1)) / 2.0
        use = ok & (tot > 0)
        tot = np.where(use, tot, 1.0)
        s2 = s2 / tot[..., None]
        d2 = d2 / tot[..., None, None]
        if s is None:
            s = np.where(use[..., None], s2, 0.0)
            d = np.where(use[..., None, None], d2, 0.0)
            valid = use.copy()
            continue
        r1 = d.sum(axis=-1)
        r2 = d2.sum(axis=-1)
        s_new = (s + r1) * (s2 + r2) - (d * d2).sum(axis=-1)
        d_new = d * d2
        kept = s_new.sum(axis=-1) + d_new.sum(axis=(-2, -1)) / 2.0
        # first valid neighbour: take its BPA as is
        first = use & ~valid
        both = use & valid
        bad = both & (kept <= _CONFLICT_TOL)
        conflict |= bad
        ok_comb = both & ~bad
        k = np.where(ok_comb, kept, 1.0)
        s = np.where(first[..., None], s2, np.where(ok_comb[..., None], s_new / k[..., None], s))
        d = np.where(first[..., None, None], d2, np.where(ok_comb[..., None, None], d_new / k[..., None, None], d))
        valid |= use
    if s is None:
        s = np.zeros_like(center)
        d = np.zeros(shape + (c, c))
    prob = s + d.sum(axis=-1) / 2.0
    fallback = ~valid | conflict
    out = decide_rows(prob)
    out[fallback] = classify_rows(center[fallback])
    return out, fallback


def _support(alpha: np.ndarray, weight):
    """Best class and its (weighted) support for each label vector."""
    q = decide_rows(alpha)
    a = np.take_along_axis(alpha, q[..., None], axis=-1)[..., 0]
    return q, a * weight


def _plane4(center, nbrs, present, w):
    c = center.shape[-1]
    shape = center.shape[:-1]
    keep = np.ones(shape + (c,))  # product of (1 - s) per focus class
    any_support = np.zeros(shape, dtype=bool)
    sources = [(center, np.ones(shape, dtype=bool), 1.0)] + [(v, ok, w) for v, ok in zip(nbrs, present)]
    for alpha, ok, weight in sources:
        q, s = _support(alpha, weight)
        s = np.where(ok, s, 0.0)
        onehot = np.arange(c) == q[..., None]
        keep *= np.where(onehot, 1.0 - s[..., None], 1.0)
        any_support |= s > 0
    all_keep = keep.prod(axis=-1)
    # m({k}) = (1 - keep_k) * prod_{l != k} keep_l
    others = np.empty_like(keep)
    for k in range(c):
        others[..., k] = np.prod(np.delete(keep, k, axis=-1), axis=-1)
    single = (1.0 - keep) * others
    Z = single.sum(axis=-1) + all_keep
    conflict = any_support & (Z <= _CONFLICT_TOL)
    Zs = np.where(Z > 0, Z, 1.0)
    prob = single / Zs[..., None] + (all_keep / Zs / c)[..., None]
    out = decide_rows(prob)
    out[~any_support] = OUTLIER
    out[conflict] = classify_rows(center[conflict])
    return out, conflict


def decide_plane(plane: np.ndarray, config: ContextConfig, rows: tuple[int, int] | None = None):
    """Decisions for rows ``[r0, r1)`` of a ``(H, W, c)`` label-vector plane.

    Returns ``(labels, fallback_mask)``. Pixels outside the image are
    treated as absent neighbours.
    """
    H, W, c = plane.shape
    r0, r1 = rows or (0, H)
    padded = np.zeros((H + 2, W + 2, c))
    padded[1:-1, 1:-1] = plane
    inside = np.zeros((H + 2, W + 2), dtype=bool)
    inside[1:-1, 1:-1] = True
    center = plane[r0:r1]
    nbrs = [_shifted(padded, r0, r1, W, dr, dc) for dr, dc in OFFSETS]
    present = [_shifted(inside, r0, r1, W, dr, dc) for dr, dc in OFFSETS]
    m = config.method
    if m is Method.M1:
        return _plane1(center, nbrs, present)
    if m is Method.M2:
        return _plane2(center, nbrs, present)
    if m is Method.M3:
        return _plane3(center, nbrs, present)
    return _plane4(center, nbrs, present, config.w)


def label_plane(raster: Raster, rulebase: Rulebase) -> np.ndarray:
    """``(H, W, c)`` possibilistic label vectors for every pixel."""
    if raster.bands != rulebase.dim:
        raise ValueError(f"raster has {raster.bands} bands, rulebase expects {rulebase.dim}")
    return label_vectors(rulebase, raster.pixels()).reshape(raster.height, raster.width, rulebase.class_count)


def classify_plane(plane: np.ndarray, config: ContextConfig, threads: int = 1, block_rows: int = 64) -> Classification:
    """Apply one contextual method to every pixel of a label-vector plane.

    Rows are processed in independent blocks; with ``threads > 1`` the blocks
    run on a thread pool. The output does not depend on ``threads``.
    """
    H = plane.shape[0]
    blocks = [(r, min(r + block_rows, H)) for r in range(0, H, block_rows)]
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: decide_plane(plane, config, b), blocks))
    else:
        parts = [decide_plane(plane, config, b) for b in blocks]
    labels = np.concatenate([p[0] for p in parts], axis=0) if parts else np.empty((0, plane.shape[1]), dtype=np.intp)
    fallbacks = int(sum(p[1].sum() for p in parts))
    if fallbacks:
        log.info("%d pixels fell back to the noncontextual decision", fallbacks)
    return Classification(labels, fallbacks)


def classify_noncontextual_plane(plane: np.ndarray) -> Classification:
    return Classification(classify_rows(plane.reshape(-1, plane.shape[-1])).reshape(plane.shape[:2]))


def classify_image(raster: Raster, rulebase: Rulebase, config: ContextConfig | None, threads: int = 1) -> Classification:
    """Label-vector plane once, then the chosen method per pixel.

    ``config=None`` gives the noncontextual (maximum firing strength) map.
    """
    plane = label_plane(raster, rulebase)
    if config is None:
        return classify_noncontextual_plane(plane)
    return classify_plane(plane, config, threads=threads)


# ---------------------------------------------------------------------------
# weight search


@dataclass(frozen=True)
class WSearchResult:
    best_w: float
    curve: list  # [(w, error_rate)]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["w", "error"])
            for w, err in self.curve:
                writer.writerow([repr(float(w)), repr(float(err))])


def grid_search_w_plane(plane: np.ndarray, truth: GroundTruth, rect, w_grid=DEFAULT_W_GRID) -> WSearchResult:
    """Method 4 error on ``rect = (row, col, height, width)`` for every ``w`` in the grid.

    Pixels just outside the rectangle still serve as neighbours. The best
    ``w`` has the fewest errors; ties go to the smaller ``w``.
    """
    w_grid = [float(w) for w in w_grid]
    if not w_grid:
        raise ValueError("empty w grid")
    r, c, h, wd = (int(v) for v in rect)
    H, W = plane.shape[:2]
    if h < 1 or wd < 1 or r < 0 or c < 0 or r + h > H or c + wd > W:
        raise ValueError(f"sub-image {rect} lies outside the {H}x{W} raster")
    r0, r1 = max(r - 1, 0), min(r + h + 1, H)
    c0, c1 = max(c - 1, 0), min(c + wd + 1, W)
    sub = plane[r0:r1, c0:c1]
    gt = truth.labels[r:r + h, c:c + wd]
    labeled = gt != UNLABELED
    if not labeled.any():
        raise ValueError("sub-image has no labeled pixels")
    n = int(labeled.sum())
    errors = []
    for w in w_grid:
        pred = classify_plane(sub, ContextConfig(Method.M4, w)).labels[r - r0 : r - r0 + h, c - c0 : c - c0 + wd]
        errors.append(int((pred[labeled] != gt[labeled]).sum()))
    order = sorted(range(len(w_grid)), key=lambda i: (errors[i], w_grid[i]))
    best = w_grid[order[0]]
    return WSearchResult(best, [(w, e / n) for w, e in zip(w_grid, errors)])


def grid_search_w(raster: Raster, truth: GroundTruth, rulebase: Rulebase, rect, w_grid=DEFAULT_W_GRID) -> WSearchResult:
    return grid_search_w_plane(label_plane(raster, rulebase), truth, rect, w_grid)
