"""Basic probability assignments, Dempster's rule and the pignistic transform.

Focal sets are bitmasks over the class indices: bit ``k`` set means class
``k`` is a member. The full frame of ``c`` classes is ``(1 << c) - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

MAX_CLASSES = 64
PRUNE = 1e-12
SUM_TOL = 1e-9
CONFLICT_TOL = 1e-12


class TotalConflict(ArithmeticError):
    """The two bodies of evidence share no compatible focal sets."""


def full_set(class_count: int) -> int:
    return (1 << class_count) - 1


def members(mask: int) -> list[int]:
    return [k for k in range(mask.bit_length()) if mask >> k & 1]


def to_mask(classes: Iterable[int]) -> int:
    mask = 0
    for k in classes:
        mask |= 1 << int(k)
    return mask


@dataclass(frozen=True)
class Bpa:
    """Mass function over subsets of ``class_count`` classes.

    ``masses`` maps focal-set bitmasks to positive masses that sum to one.
    """

    class_count: int
    masses: Mapping[int, float]

    def __post_init__(self):
        c = self.class_count
        if not 1 <= c <= MAX_CLASSES:
            raise ValueError(f"class_count must be in 1..{MAX_CLASSES}")
        top = full_set(c)
        clean = {}
        for mask, mass in self.masses.items():
            mask = int(mask)
            if mask == 0:
                if mass != 0:
                    raise ValueError("the empty set cannot carry mass")
                continue
            if mask & ~top:
                raise ValueError(f"focal set {mask:#x} outside a frame of {c} classes")
            mass = float(mass)
            if mass < 0 or mass > 1 + SUM_TOL:
                raise ValueError(f"mass {mass} outside [0, 1]")
            if mass > 0:
                clean[mask] = clean.get(mask, 0.0) + mass
        total = sum(clean.values())
        if abs(total - 1.0) > SUM_TOL:
            raise ValueError(f"masses sum to {total}, not 1")
        object.__setattr__(self, "masses", MappingProxyType(clean))

    @classmethod
    def vacuous(cls, class_count: int) -> "Bpa":
        return cls(class_count, {full_set(class_count): 1.0})

    @classmethod
    def bayesian(cls, probabilities) -> "Bpa":
        p = np.asarray(probabilities, dtype=np.float64)
        return cls(len(p), {1 << k: float(v) for k, v in enumerate(p) if v > 0})

    @classmethod
    def from_sets(cls, class_count: int, assignment: Mapping) -> "Bpa":
        """Build from ``{iterable of class indices: mass}``."""
        return cls(class_count, {to_mask(s): m for s, m in assignment.items()})

    def __getitem__(self, focal) -> float:
        mask = focal if isinstance(focal, int) else to_mask(focal)
        return self.masses.get(mask, 0.0)

    def is_bayesian(self) -> bool:
        return all(mask & (mask - 1) == 0 for mask in self.masses)

    def singletons(self) -> np.ndarray:
        return np.array([self.masses.get(1 << k, 0.0) for k in range(self.class_count)])

    def allclose(self, other: "Bpa", atol: float = 1e-9) -> bool:
        keys = set(self.masses) | set(other.masses)
        return self.class_count == other.class_count and all(
            abs(self.masses.get(k, 0.0) - other.masses.get(k, 0.0)) <= atol for k in keys
        )


def combine(m1: Bpa, m2: Bpa) -> Bpa:
    """Dempster's rule: intersect focal sets, multiply masses, renormalize away conflict.

    Raises :class:`TotalConflict` when the conflict mass reaches
    ``1 - 1e-12``. Focal sets whose combined mass is at most ``1e-12`` are
    dropped before the final renormalization.
    """
    if m1.class_count != m2.class_count:
        raise ValueError("BPAs are defined on different frames")
    joint: dict[int, float] = {}
    conflict = 0.0
    for b, mb in m1.masses.items():
        for c, mc in m2.masses.items():
            a = b & c
            if a:
                joint[a] = joint.get(a, 0.0) + mb * mc
            else:
                conflict += mb * mc
    kept = sum(joint.values())
    if conflict >= 1.0 - CONFLICT_TOL or kept <= CONFLICT_TOL:
        raise TotalConflict(f"conflict mass {conflict:.17g}")
    joint = {a: v / kept for a, v in joint.items()}
    pruned = {a: v for a, v in joint.items() if v > PRUNE}
    total = sum(pruned.values())
    return Bpa(m1.class_count, {a: v / total for a, v in pruned.items()})


def combine_all(bpas: Iterable[Bpa]) -> Bpa:
    """Left fold of :func:`combine` over at least one BPA."""
    bpas = list(bpas)
    if not bpas:
        raise ValueError("combine_all needs at least one BPA")
    return reduce(combine, bpas)


def pignistic(m: Bpa) -> np.ndarray:
    """Spread each focal set's mass evenly over its members."""
    p = np.zeros(m.class_count)
    for mask, mass in m.masses.items():
        idx = members(mask)
        p[idx] += mass / len(idx)
    return p


def decide(probabilities, tol: float = 1e-12) -> int:
    """Most probable class; values within ``tol`` of the maximum tie and the lowest index wins."""
    p = np.asarray(probabilities, dtype=np.float64)
    if p.size == 0:
        raise ValueError("empty probability vector")
    return int(np.flatnonzero(p >= p.max() - tol)[0])
