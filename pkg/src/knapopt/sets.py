"""Continuous-knapsack feasible sets and index-set utilities.

A continuous-knapsack set is a box l <= x <= u intersected with a single
linear constraint, either an equality a'x = b or a bilateral inequality
b_l <= a'x <= b_u.  ``KnapsackSet`` with ``rhs=None`` is the plain box
(used internally by the three-solve driver when the linear row is ignored).

All types here are immutable value objects and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InfeasibleError(ValueError):
    """Raised when a feasible set is empty or a point violates it."""


@dataclass(frozen=True)
class Equality:
    b: float


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float


def _readonly(v) -> np.ndarray:
    out = np.array(v, dtype=float, copy=True)
    if out.ndim != 1:
        raise ValueError("expected a 1-d vector")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class KnapsackSet:
    """Box bounds plus one linear equality or bilateral inequality row.

    Invariants enforced at construction: l <= u componentwise, all data
    finite (compact boxes only), and lo <= hi for interval rows.
    """

    l: np.ndarray
    u: np.ndarray
    a: np.ndarray
    rhs: Equality | Interval | None

    def __post_init__(self):
        object.__setattr__(self, "l", _readonly(self.l))
        object.__setattr__(self, "u", _readonly(self.u))
        object.__setattr__(self, "a", _readonly(self.a))
        if not (self.l.shape == self.u.shape == self.a.shape):
            raise ValueError("l, u, a must have equal lengths")
        if not (np.isfinite(self.l).all() and np.isfinite(self.u).all() and np.isfinite(self.a).all()):
            raise ValueError("l, u, a must be finite (infinite bounds unsupported)")
        if np.any(self.l > self.u):
            raise ValueError("need l <= u componentwise")
        if isinstance(self.rhs, Equality):
            if not np.isfinite(self.rhs.b):
                raise ValueError("rhs.b must be finite")
        elif isinstance(self.rhs, Interval):
            if not (np.isfinite(self.rhs.lo) and np.isfinite(self.rhs.hi)):
                raise ValueError("rhs.lo, rhs.hi must be finite")
            if self.rhs.lo > self.rhs.hi:
                raise ValueError("need rhs.lo <= rhs.hi")
        elif self.rhs is not None:
            raise TypeError("rhs must be Equality, Interval or None")

    @property
    def n(self) -> int:
        return self.l.size

    def attainable_range(self) -> tuple[float, float]:
        """Range of a'x over the box: (min, max)."""
        ap = np.maximum(self.a, 0.0)
        am = np.minimum(self.a, 0.0)
        smin = float(self.u @ am + self.l @ ap)
        smax = float(self.u @ ap + self.l @ am)
        return smin, smax

    def contains(self, x: np.ndarray, box_atol: float = 0.0, lin_atol: float | None = None) -> bool:
        x = np.asarray(x, dtype=float)
        if np.any(x < self.l - box_atol) or np.any(x > self.u + box_atol):
            return False
        if self.rhs is None:
            return True
        t = float(self.a @ x)
        if lin_atol is None:
            lin_atol = linear_tolerance(self, x)
        if isinstance(self.rhs, Equality):
            return abs(t - self.rhs.b) <= lin_atol
        return self.rhs.lo - lin_atol <= t <= self.rhs.hi + lin_atol

    def to_json(self) -> dict:
        d = {
            "n": self.n,
            "l": [float(v) for v in self.l],
            "u": [float(v) for v in self.u],
            "a": [float(v) for v in self.a],
        }
        if isinstance(self.rhs, Equality):
            d["rhs"] = {"eq": float(self.rhs.b)}
        elif isinstance(self.rhs, Interval):
            d["rhs"] = {"lo": float(self.rhs.lo), "hi": float(self.rhs.hi)}
        else:
            d["rhs"] = None
        return d

    @classmethod
    def from_json(cls, d: dict) -> "KnapsackSet":
        for key in ("l", "u", "a", "rhs"):
            if key not in d:
                raise ValueError(f"knapsack set JSON: missing field '{key}'")
        rhs_d = d["rhs"]
        if rhs_d is None:
            rhs = None
        elif "eq" in rhs_d:
            rhs = Equality(float(rhs_d["eq"]))
        elif "lo" in rhs_d and "hi" in rhs_d:
            rhs = Interval(float(rhs_d["lo"]), float(rhs_d["hi"]))
        else:
            raise ValueError("knapsack set JSON: field 'rhs' must be {\"eq\": b} or {\"lo\": ..., \"hi\": ...}")
        kset = cls(l=d["l"], u=d["u"], a=d["a"], rhs=rhs)
        if "n" in d and int(d["n"]) != kset.n:
            raise ValueError("knapsack set JSON: field 'n' inconsistent with vector lengths")
        return kset


def linear_tolerance(kset: KnapsackSet, x: np.ndarray) -> float:
    """Roundoff allowance for |a'x - b|; summation error grows with n."""
    if isinstance(kset.rhs, Equality):
        bref = abs(kset.rhs.b)
    elif isinstance(kset.rhs, Interval):
        bref = max(abs(kset.rhs.lo), abs(kset.rhs.hi))
    else:
        bref = 0.0
    xmax = float(np.max(np.abs(x))) if x.size else 0.0
    amax = float(np.max(np.abs(kset.a))) if kset.a.size else 0.0
    eps = float(np.finfo(float).eps)
    return 64.0 * eps * (bref + amax * kset.n * xmax)


def feasibility_equality(kset: KnapsackSet) -> bool:
    """True iff {x in box : a'x = b} is non-empty."""
    if not isinstance(kset.rhs, Equality):
        raise TypeError("feasibility_equality needs an equality rhs")
    smin, smax = kset.attainable_range()
    return smin <= kset.rhs.b <= smax

def feasibility_interval(kset: KnapsackSet) -> bool:
    """True iff {x in box : lo <= a'x <= hi} is non-empty.

    Interval-overlap test: [lo, hi] must meet the attainable range of a'x
    over the box (necessary and sufficient).
    """
    if not isinstance(kset.rhs, Interval):
        raise TypeError("feasibility_interval needs an interval rhs")
    smin, smax = kset.attainable_range()
    return kset.rhs.lo <= smax and kset.rhs.hi >= smin


def is_feasible_set(kset: KnapsackSet) -> bool:
    if isinstance(kset.rhs, Equality):
        return feasibility_equality(kset)
    if isinstance(kset.rhs, Interval):
        return feasibility_interval(kset)
    return True  # box with l <= u is never empty


@dataclass(frozen=True)
class IndexPartition:
    """Split of {0..n-1} into bound-active and free (inactive) indices."""

    active: np.ndarray
    inactive: np.ndarray
    n: int

    def __post_init__(self):
        object.__setattr__(self, "active", np.asarray(self.active, dtype=np.intp))
        object.__setattr__(self, "inactive", np.asarray(self.inactive, dtype=np.intp))

    @property
    def dim_active(self) -> int:
        return self.active.size


def default_active_tolerance(kset: KnapsackSet) -> np.ndarray:
    """Per-index slack below which a solver iterate counts as bound-active.

    Projection outputs land on bounds exactly (mid clamps), so use 0.0 there;
    line-search iterates carry rounding, hence the relative 1e-12 default.
    """
    return 1e-12 * np.maximum(1.0, np.maximum(np.abs(kset.l), np.abs(kset.u)))


def partition(x: np.ndarray, kset: KnapsackSet, atol=None) -> IndexPartition:
    """Classify indices as active (on a bound within atol) or inactive.

    atol=None uses the solver default; pass 0.0 for exact (projection output)
    classification.  Points outside the box beyond atol are rejected.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != kset.l.shape:
        raise ValueError("x has wrong length for this set")
    if atol is None:
        tol = default_active_tolerance(kset)
    else:
        tol = np.broadcast_to(np.asarray(atol, dtype=float), x.shape)
    if np.any(x < kset.l - tol) or np.any(x > kset.u + tol):
        raise ValueError("infeasible point: outside the box beyond tolerance")
    act = (x - kset.l <= tol) | (kset.u - x <= tol)
    idx = np.arange(x.size)
    return IndexPartition(active=idx[act], inactive=idx[~act], n=x.size)


def shrink(x: np.ndarray, part: IndexPartition) -> np.ndarray:
    """Keep only the free (inactive) entries of x."""
    x = np.asarray(x, dtype=float)
    if x.size != part.n:
        raise ValueError("x has wrong length for this partition")
    return x[part.inactive]


def expand(v: np.ndarray, part: IndexPartition, fill: np.ndarray) -> np.ndarray:
    """Scatter reduced v into the free slots, taking active slots from fill."""
    v = np.asarray(v, dtype=float)
    fill = np.asarray(fill, dtype=float)
    if v.size != part.inactive.size:
        raise ValueError("v has wrong length for this partition")
    if fill.size != part.n:
        raise ValueError("fill has wrong length for this partition")
    out = fill.copy()
    out[part.inactive] = v
    return out
