"""O(n) null-space representations for a single linear constraint row.

A Householder reflection Q = I - tau*u*u' with Q'a = zeta*e1 gives an
orthonormal basis Z (columns 2..n of Q) of {p : a'p = 0}; products Z v and
Z' w cost one dot product and one axpy each.  The rank-deficient
orthogonal projector P = I - a a'/(a'a) is the cheap alternative used when
no linear row is active, plus bound-free projections onto the row itself.

All types are immutable after construction; products are pure and
reentrant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _sign(v: float) -> float:
    # sign(0) = 1 for determinism (irrelevant after pivoting)
    return -1.0 if v < 0.0 else 1.0


@dataclass(frozen=True)
class HouseholderNullSpace:
    """Compact Q = I - tau*u*u' for one constraint row, with a pivot swap
    bringing the largest-magnitude coefficient to position 1.

    u[0] = 1, u[i] = a_i/(a_1 - zeta), tau = (zeta - a_1)/zeta,
    zeta = -sign(a_1)*||a||_2 (a taken after the pivot swap).
    """

    u: np.ndarray
    tau: float
    zeta: float
    pivot: int
    n: int

    def __post_init__(self):
        uu = np.asarray(self.u, dtype=float)
        uu.setflags(write=False)
        object.__setattr__(self, "u", uu)


def _swapped(v: np.ndarray, pivot: int) -> np.ndarray:
    out = np.array(v, dtype=float, copy=True)
    if pivot != 0:
        out[0], out[pivot] = out[pivot], out[0]
    return out


def build_householder(a: np.ndarray) -> HouseholderNullSpace:
    """Householder factors for the row a (pivot = index of max |a_i|)."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 1 or a.size == 0:
        raise ValueError("a must be a non-empty vector")
    if not np.isfinite(a).all():
        raise ValueError("a must be finite")
    pivot = int(np.argmax(np.abs(a)))
    if a[pivot] == 0.0:
        raise ValueError("cannot build a null space for the zero vector")
    ap = _swapped(a, pivot)
    zeta = -_sign(ap[0]) * float(np.linalg.norm(ap))
    u = ap / (ap[0] - zeta)  # same-sign denominator, no cancellation
    u[0] = 1.0
    tau = (zeta - ap[0]) / zeta
    return HouseholderNullSpace(u=u, tau=float(tau), zeta=float(zeta), pivot=pivot, n=a.size)


def apply_z(ns: HouseholderNullSpace, v: np.ndarray) -> np.ndarray:
    """Z v for reduced v of size n-1 (one dot product, one axpy)."""
    v = np.asarray(v, dtype=float)
    if v.size != ns.n - 1:
        raise ValueError(f"v must have length {ns.n - 1}")
    w = np.empty(ns.n)
    w[0] = 0.0
    w[1:] = v
    t = ns.tau * float(ns.u[1:] @ v)
    w -= t * ns.u
    if ns.pivot != 0:
        w[0], w[ns.pivot] = w[ns.pivot], w[0]
    return w


def apply_zt(ns: HouseholderNullSpace, w: np.ndarray) -> np.ndarray:
    """Z' w for full-space w; the exact adjoint of apply_z."""
    w = np.asarray(w, dtype=float)
    if w.size != ns.n:
        raise ValueError(f"w must have length {ns.n}")
    ws = _swapped(w, ns.pivot)
    t = ns.tau * float(ns.u @ ws)
    return ws[1:] - t * ns.u[1:]


def assemble_z(ns: HouseholderNullSpace) -> np.ndarray:
    """Dense n x (n-1) basis, for small-n checks only."""
    return np.column_stack([apply_z(ns, e) for e in np.eye(ns.n - 1)]) if ns.n > 1 \
        else np.zeros((1, 0))


@dataclass(frozen=True)
class OrthoProjector:
    """P = I - a a'/(a'a): idempotent, annihilates a, not full rank."""

    a: np.ndarray
    ata: float

    def __post_init__(self):
        aa = np.asarray(self.a, dtype=float)
        aa.setflags(write=False)
        object.__setattr__(self, "a", aa)

    @classmethod
    def from_row(cls, a: np.ndarray) -> "OrthoProjector":
        a = np.asarray(a, dtype=float)
        ata = float(a @ a)
        if ata == 0.0:
            raise ValueError("cannot build a projector for the zero vector")
        return cls(a=a, ata=ata)


def ortho_project(p: OrthoProjector, v: np.ndarray) -> np.ndarray:
    """v - a (a'v)/(a'a): the component of v orthogonal to a."""
    v = np.asarray(v, dtype=float)
    return v - p.a * (float(p.a @ v) / p.ata)


def project_line_equality(y: np.ndarray, a: np.ndarray, b: float) -> np.ndarray:
    """Euclidean projection of y onto {x : a'x = b}, bounds ignored.

    z = y + a (b - a'y)/(a'a), so a'z = b and z - y is parallel to a.
    """
    y = np.asarray(y, dtype=float)
    a = np.asarray(a, dtype=float)
    ata = float(a @ a)
    if ata == 0.0:
        raise ValueError("zero constraint row")
    return y + a * ((b - float(a @ y)) / ata)


def project_line_interval(y: np.ndarray, a: np.ndarray, b_l: float, b_u: float) -> np.ndarray:
    """Projection of y onto {x : b_l <= a'x <= b_u}, bounds ignored.

    Componentwise median of (zl, y, zu); zl, zu are not ordered when a has
    mixed signs, so the median uses sorted envelopes.
    """
    if b_l > b_u:
        raise ValueError("need b_l <= b_u")
    zl = project_line_equality(y, a, b_l)
    zu = project_line_equality(y, a, b_u)
    y = np.asarray(y, dtype=float)
    return np.clip(y, np.minimum(zl, zu), np.maximum(zl, zu))


def feasible_step_cap(x: np.ndarray, p: np.ndarray, rows: np.ndarray, rhs: np.ndarray,
                      atol: float = 0.0) -> float:
    """Largest step keeping every inactive row a_i'(x + t p) >= rhs_i.

    Rows with a_i'p >= 0 never bind; the cap is min over a_i'p < 0 of
    (rhs_i - a_i'x)/(a_i'p), +inf when unconstrained.  x must satisfy all
    listed rows up to atol.
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
    ax = rows @ x
    if np.any(ax < rhs - atol):
        raise ValueError("x violates a listed inactive constraint")
    ap = rows @ p
    cap = np.inf
    for i in range(rows.shape[0]):
        if ap[i] < 0.0:
            cap = min(cap, max(0.0, (rhs[i] - ax[i]) / ap[i]))
    return float(cap)
