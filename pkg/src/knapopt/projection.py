"""Exact Euclidean projection onto continuous-knapsack sets.

The projection onto {x in box : a'x = b} is mid(l, y - lam* a, u) where
lam* is the unique root of the piecewise-linear, nondecreasing residual

    h(lam) = b - sum_i a_i * mid(l_i, y_i - lam*a_i, u_i).

h has at most 2n breakpoints (y_i - l_i)/a_i and (y_i - u_i)/a_i, the root
lies in [lambda_L, lambda_R] (the extreme breakpoints), and the endpoint
values h(lambda_L) = b - max a'x, h(lambda_R) = b - min a'x come for free,
so no bracketing phase is needed.  The root is found by a hybrid
bisection / inverse-quadratic-interpolation search with component freezing:
once the bracket clears both breakpoints of a component, its contribution
is a constant and is moved into a scalar offset.

The bilateral-inequality projection reduces to at most two equality solves
(rhs = b_u then rhs = b_l) that share breakpoints, endpoint values and
trajectory points: any pair (lam, h) from the b_u solve maps to
(lam, h + b_l - b_u) for the b_l solve.

Everything here is a pure function of its inputs; callers may project
different vectors concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sets import Equality, InfeasibleError, Interval, KnapsackSet

EPS_MACHINE = float(np.finfo(float).eps)
DEFAULT_EPS = 1e-15  # target root precision for double arithmetic

_MAX_ROOT_ITER = 200


# ---------------------------------------------------------------------------
# breakpoints, residual evaluation, freezing
# ---------------------------------------------------------------------------

@dataclass
class BreakpointData:
    """Per-index multiplier breakpoints of h, NaN where a_i = 0.

    lam_lo[i] = (y_i - l_i)/a_i and lam_hi[i] = (y_i - u_i)/a_i, so
    lam_hi <= lam_lo for a_i > 0 and lam_lo <= lam_hi for a_i < 0.
    lam_min/lam_max bracket the root.
    """

    lam_lo: np.ndarray
    lam_hi: np.ndarray
    lam_min: float
    lam_max: float


@dataclass
class FreezeTable:
    """Clamp values for components already determined by the bracket.

    value[i] is the frozen coordinate (NaN if still live); offset carries
    sum(a_i * value_i) over frozen entries so h evaluations can skip them.
    """

    value: np.ndarray
    offset: float

    @property
    def count(self) -> int:
        return int(np.sum(~np.isnan(self.value)))


def compute_breakpoints(y: np.ndarray, kset: KnapsackSet) -> BreakpointData:
    y = np.asarray(y, dtype=float)
    a = kset.a
    lam_lo = np.full(y.shape, np.nan)
    lam_hi = np.full(y.shape, np.nan)
    nz = a != 0.0
    lam_lo[nz] = (y[nz] - kset.l[nz]) / a[nz]
    lam_hi[nz] = (y[nz] - kset.u[nz]) / a[nz]
    if nz.any():
        lo = min(np.min(lam_lo[nz]), np.min(lam_hi[nz]))
        hi = max(np.max(lam_lo[nz]), np.max(lam_hi[nz]))
    else:
        lo = hi = 0.0
    return BreakpointData(lam_lo=lam_lo, lam_hi=lam_hi, lam_min=float(lo), lam_max=float(hi))


def h_eval(lam: float, y: np.ndarray, kset: KnapsackSet,
           frozen: FreezeTable | None = None, compensated: bool = False) -> float:
    """Residual b - a'x(lam) with x(lam) = mid(l, y - lam*a, u).

    Indices with a_i = 0 contribute nothing regardless of lam; frozen
    indices contribute through the table's scalar offset.
    """
    if not isinstance(kset.rhs, Equality):
        raise TypeError("h_eval needs an equality rhs")
    y = np.asarray(y, dtype=float)
    a = kset.a
    live = a != 0.0
    offset = 0.0
    if frozen is not None:
        live = live & np.isnan(frozen.value)
        offset = frozen.offset
    x = np.clip(y[live] - lam * a[live], kset.l[live], kset.u[live])
    if compensated:
        s = math.fsum(a[live] * x)
    else:
        s = float(a[live] @ x)
    return kset.rhs.b - offset - s


def freeze_components(data: BreakpointData, kset: KnapsackSet, lam_l: float, lam_r: float,
                      table: FreezeTable | None = None) -> FreezeTable:
    """Freeze every component fully determined for lam in [lam_l, lam_r].

    a_i > 0: x_i = u_i for lam <= lam_hi_i and x_i = l_i for lam >= lam_lo_i,
    so x_i is u_i on the whole bracket iff lam_r <= lam_hi_i, and l_i iff
    lam_l >= lam_lo_i.  For a_i < 0 the roles of the breakpoints swap:
    u_i iff lam_l >= lam_hi_i, l_i iff lam_r <= lam_lo_i.
    """
    a = kset.a
    if table is None:
        value = np.full(a.shape, np.nan)
        offset = 0.0
    else:
        value = table.value.copy()
        offset = table.offset
    live = np.isnan(value) & (a != 0.0)
    pos = a > 0.0
    to_u = live & np.where(pos, lam_r <= data.lam_hi, lam_l >= data.lam_hi)
    to_l = live & np.where(pos, lam_l >= data.lam_lo, lam_r <= data.lam_lo)
    to_l &= ~to_u  # a tie (l=u or zero-width piece) freezes once
    if to_u.any():
        value[to_u] = kset.u[to_u]
        offset += float(a[to_u] @ kset.u[to_u])
    if to_l.any():
        value[to_l] = kset.l[to_l]
        offset += float(a[to_l] @ kset.l[to_l])
    return FreezeTable(value=value, offset=offset)


class _FreezingResidual:
    """Compressed-array evaluator of S(lam) = a'x(lam) with freezing.

    Each component's linear piece spans (piece_lo, piece_hi); left of it the
    coordinate sits at val_left (u for a > 0, l for a < 0) and right of it
    at val_right.  A component freezes once the bracket clears its piece.
    Rescans are skipped until the bracket has at least halved since the
    last one, so the total scan cost stays O(n) amortized.
    """

    def __init__(self, a, y, l, u, lam_lo, lam_hi, compensated=False):
        self.a = a
        self.y = y
        self.l = l
        self.u = u
        self.piece_lo = np.minimum(lam_lo, lam_hi)
        self.piece_hi = np.maximum(lam_lo, lam_hi)
        pos = a > 0.0
        self.val_left = np.where(pos, u, l)
        self.val_right = np.where(pos, l, u)
        self.offset = 0.0
        self.compensated = compensated
        self._last_width = np.inf
        self._hull = (float(self.piece_lo.min()), float(self.piece_hi.max())) \
            if a.size else None

    def narrow(self, lam_l: float, lam_r: float):
        """Freeze components determined on [lam_l, lam_r]; return the hull of
        the remaining linear pieces (h is constant outside it, so the caller
        may clamp the bracket onto it for free), or None when flat."""
        if self.a.size == 0:
            return None
        width = lam_r - lam_l
        if width > 0.5 * self._last_width:
            return self._hull
        self._last_width = width
        left = self.piece_lo >= lam_r
        right = (self.piece_hi <= lam_l) & ~left
        drop = left | right
        if drop.any():
            self.offset += float(self.a[left] @ self.val_left[left]) \
                + float(self.a[right] @ self.val_right[right])
            keep = ~drop
            for name in ("a", "y", "l", "u", "piece_lo", "piece_hi",
                         "val_left", "val_right"):
                setattr(self, name, getattr(self, name)[keep])
        if self.a.size == 0:
            self._hull = None
        else:
            self._hull = (float(self.piece_lo.min()), float(self.piece_hi.max()))
        return self._hull

    def value(self, lam: float) -> float:
        x = np.clip(self.y - lam * self.a, self.l, self.u)
        if self.compensated:
            return self.offset + math.fsum(self.a * x)
        return self.offset + float(self.a @ x)


# ---------------------------------------------------------------------------
# hybrid bisection / inverse-quadratic root search
# ---------------------------------------------------------------------------

@dataclass
class BreakpointSolverState:
    """Triple of root-search points with h(lam_b)*h(lam_c) <= 0 and
    |h_b| <= |h_c|; lam_b is the current best approximation and lam_a may
    coincide with lam_c."""

    lam_a: float
    lam_b: float
    lam_c: float
    h_a: float
    h_b: float
    h_c: float
    pq_prev: float
    eval_count: int
    eps: float
    eps_m: float = EPS_MACHINE


def _root_search(hfun, lam_b, lam_c, h_b, h_c, eps, on_bracket=None):
    """Find the root of hfun on the bracket [lam_b, lam_c].

    hfun must be continuous with h_b = hfun(lam_b), h_c = hfun(lam_c) and
    h_b*h_c <= 0.  The trial root of the inverse quadratic interpolation,
    lam_t = lam_b + p/q (normalized to p >= 0 with q signed), is replaced
    by a bisection step whenever it leaves the bracket, |p| >= 2/3 |q*dlam|,
    or |p/q| >= 1/2 of the previous step.  With only two distinct points a
    secant step is used.  Stops when the half-width drops below
    tol = 2*eps_m*|lam_b| + eps/2; proposed steps below tol (the
    "inefficient step" case) are stretched to the minimum increment tol,
    which crosses the root and collapses the bracket.

    on_bracket, when given, is called with the sorted bracket each
    iteration and may return a smaller interval outside which hfun is known
    constant (None meaning constant everywhere); the endpoints then slide
    onto it keeping their residual values.

    Returns (root, state) with state.eval_count the number of hfun calls.
    """
    st = BreakpointSolverState(lam_a=lam_c, lam_b=lam_b, lam_c=lam_c,
                               h_a=h_c, h_b=h_b, h_c=h_c,
                               pq_prev=abs(lam_c - lam_b), eval_count=0, eps=eps)
    if st.h_b == 0.0:
        return st.lam_b, st
    if st.h_c == 0.0:
        st.lam_b, st.h_b = st.lam_c, st.h_c
        return st.lam_b, st

    for _ in range(_MAX_ROOT_ITER):
        if abs(st.h_c) < abs(st.h_b):
            # keep lam_b the best approximation; previous best becomes lam_a
            st.lam_a, st.h_a = st.lam_b, st.h_b
            st.lam_b, st.lam_c = st.lam_c, st.lam_b
            st.h_b, st.h_c = st.h_c, st.h_b

        if on_bracket is not None:
            lo, hi = (st.lam_b, st.lam_c) if st.lam_b <= st.lam_c else (st.lam_c, st.lam_b)
            hull = on_bracket(lo, hi)
            if hull is None:
                return st.lam_b, st  # residual constant on the bracket
            clo = min(max(lo, hull[0]), hi)
            chi = max(min(hi, hull[1]), clo)
            if clo > lo or chi < hi:
                # h is constant outside the live-piece hull, so the bracket
                # endpoints slide onto it keeping their residual values
                if st.lam_b <= st.lam_c:
                    st.lam_b, st.lam_c = clo, chi
                else:
                    st.lam_b, st.lam_c = chi, clo

        dlam = 0.5 * (st.lam_c - st.lam_b)
        tol = 2.0 * st.eps_m * abs(st.lam_b) + 0.5 * st.eps
        if st.h_b == 0.0 or abs(dlam) <= tol:
            return st.lam_b, st

        step = None
        if st.h_a != st.h_b and abs(st.h_a) > abs(st.h_b):
            s = st.h_b / st.h_a
            if st.lam_a == st.lam_c or st.h_a == st.h_c:
                # two distinct points: linear interpolation
                p = 2.0 * dlam * s
                q = 1.0 - s
            else:
                t = st.h_a / st.h_c
                r = st.h_b / st.h_c
                p = s * (2.0 * dlam * t * (t - r) - (st.lam_b - st.lam_a) * (r - 1.0))
                q = (t - 1.0) * (r - 1.0) * (s - 1.0)
            # signs: p >= 0 with q carrying the direction of the trial step
            if p > 0.0:
                q = -q
            p = abs(p)
            if q != 0.0 and np.isfinite(p):
                accept = ((q > 0.0) == (dlam > 0.0)          # root inside the bracket
                          and p < (2.0 / 3.0) * abs(q * dlam)  # and not too close to lam_c
                          and p < 0.5 * st.pq_prev * abs(q))   # and shrinking fast enough
                if accept:
                    step = p / q
        if step is None:
            step = dlam  # bisection
        st.pq_prev = abs(step)
        if abs(step) < tol:
            # minimum increment: a sub-tol proposal means the root sits at
            # lam_b, so cross it and let the bracket collapse
            step = tol if dlam > 0.0 else -tol

        lam_t = st.lam_b + step
        h_t = hfun(lam_t)
        st.eval_count += 1
        st.lam_a, st.h_a = st.lam_b, st.h_b
        st.lam_b, st.h_b = lam_t, h_t
        if (st.h_b > 0.0) == (st.h_c > 0.0):
            st.lam_c, st.h_c = st.lam_a, st.h_a
    raise RuntimeError("multiplier search did not converge (pathological residual)")


# ---------------------------------------------------------------------------
# equality projection
# ---------------------------------------------------------------------------

def _feas_tol(a, l, u, bref) -> float:
    scale = abs(bref) + float(np.abs(a) @ np.maximum(np.abs(l), np.abs(u))) if a.size else abs(bref)
    return 64.0 * EPS_MACHINE * max(1.0, scale)


class _EqualityWork:
    """Shared setup for one or two equality solves on the same (y, box, a)."""

    def __init__(self, y, kset, eps=DEFAULT_EPS, compensated=False):
        y = np.asarray(y, dtype=float)
        if y.shape != kset.l.shape:
            raise ValueError("y has wrong length for this set")
        if not np.isfinite(y).all():
            raise ValueError("y must be finite")
        a = kset.a
        nz = a != 0.0
        self.y_full = y
        self.kset = kset
        self.eps = eps
        self.compensated = compensated
        self.a = a[nz]
        self.y = y[nz]
        self.l = kset.l[nz]
        self.u = kset.u[nz]
        if self.a.size:
            self.lam_lo = (self.y - self.l) / self.a
            self.lam_hi = (self.y - self.u) / self.a
            self.lam_min = float(min(self.lam_lo.min(), self.lam_hi.min()))
            self.lam_max = float(max(self.lam_lo.max(), self.lam_hi.max()))
            ap = np.maximum(self.a, 0.0)
            am = np.minimum(self.a, 0.0)
            self.smin = float(self.u @ am + self.l @ ap)
            self.smax = float(self.u @ ap + self.l @ am)
        else:
            self.lam_min = self.lam_max = 0.0
            self.smin = self.smax = 0.0

    def solve(self, b: float, bracket=None, trail=None):
        """Root of b - S(lam); returns (lam, evals, trail_out).

        bracket optionally overrides the initial [lam_min, lam_max] with
        (lam_left, h_left, lam_right, h_right) already expressed for this b.
        """
        ftol = _feas_tol(self.a, self.l, self.u, b)
        if self.a.size == 0:
            if abs(b) > ftol:
                raise InfeasibleError("equality row a'x = b with a = 0 and b != 0")
            return 0.0, 0, []
        if bracket is None:
            lam_b, h_b = self.lam_min, b - self.smax
            lam_c, h_c = self.lam_max, b - self.smin
        else:
            lam_b, h_b, lam_c, h_c = bracket
        if h_b > ftol or h_c < -ftol:
            raise InfeasibleError("equality row a'x = b is unattainable over the box")
        if lam_b == lam_c:
            return lam_b, 0, []
        if h_b >= 0.0:
            return lam_b, 0, []
        if h_c <= 0.0:
            return lam_c, 0, []

        work = _FreezingResidual(self.a, self.y, self.l, self.u,
                                 self.lam_lo, self.lam_hi, self.compensated)
        trail_out = [] if trail is not None else None

        def hfun(lam):
            val = b - work.value(lam)
            if trail_out is not None:
                trail_out.append((lam, val))
            return val

        lam, st = _root_search(hfun, lam_b, lam_c, h_b, h_c,
                               eps=self.eps, on_bracket=work.narrow)
        return lam, st.eval_count, (trail_out or [])


def find_multiplier(y: np.ndarray, kset: KnapsackSet, eps: float = DEFAULT_EPS,
                    compensated: bool = False) -> tuple[float, int]:
    """Multiplier lam* of the equality projection and the h-evaluation count.

    The initial bracket [lambda_L, lambda_R] is known a priori and its
    endpoint residuals b - max a'x, b - min a'x are free, so eval_count
    only counts interior h evaluations.
    """
    if not isinstance(kset.rhs, Equality):
        raise TypeError("find_multiplier needs an equality rhs")
    if not eps > EPS_MACHINE:
        raise ValueError("eps must exceed machine precision")
    work = _EqualityWork(y, kset, eps, compensated)
    lam, evals, _ = work.solve(kset.rhs.b)
    return lam, evals


@dataclass
class ProjectionResult:
    z: np.ndarray
    lam: float
    evals: int


def project_equality(y: np.ndarray, kset: KnapsackSet, eps: float = DEFAULT_EPS,
                     compensated: bool = False) -> np.ndarray:
    """Nearest point of {x in box : a'x = b} to y."""
    lam, _ = find_multiplier(y, kset, eps, compensated)
    return np.clip(np.asarray(y, dtype=float) - lam * kset.a, kset.l, kset.u)


def _project_interval_impl(y, kset, eps, compensated) -> ProjectionResult:
    y = np.asarray(y, dtype=float)
    lo, hi = kset.rhs.lo, kset.rhs.hi
    z0 = np.clip(y, kset.l, kset.u)
    if lo == hi:
        work = _EqualityWork(y, kset, eps, compensated)
        lam, evals, _ = work.solve(lo)
        return ProjectionResult(np.clip(y - lam * kset.a, kset.l, kset.u), lam, evals)
    t0 = float(kset.a @ z0)
    if lo <= t0 <= hi:
        # box projection already satisfies the linear row: it is the answer
        return ProjectionResult(z0, 0.0, 0)

    work = _EqualityWork(y, kset, eps, compensated)
    smin, smax = work.smin, work.smax
    ftol = _feas_tol(work.a, work.l, work.u, max(abs(lo), abs(hi)))
    if lo > smax + ftol or hi < smin - ftol:
        raise InfeasibleError("interval row does not meet the attainable range of a'x")
    # the face values must be attainable; the feasible set is unchanged
    lo_eff = max(lo, smin)
    hi_eff = min(hi, smax)

    lam_u, ev_u, trail = work.solve(hi_eff, trail=True)
    x_u = np.clip(y - lam_u * kset.a, kset.l, kset.u)

    # warm start the lower-face solve: h values shift by lo_eff - hi_eff and
    # the lower root lies right of lam_u (h is nondecreasing in lam)
    shift = lo_eff - hi_eff
    lam_left, h_left = lam_u, shift
    lam_right, h_right = work.lam_max, lo_eff - smin
    for lam_x, h_x in trail:
        h_shifted = h_x + shift
        if h_shifted <= 0.0 and lam_x > lam_left:
            lam_left, h_left = lam_x, h_shifted
        elif h_shifted >= 0.0 and lam_x < lam_right:
            lam_right, h_right = lam_x, h_shifted
    lam_l, ev_l, _ = work.solve(lo_eff, bracket=(lam_left, h_left, lam_right, h_right))
    x_l = np.clip(y - lam_l * kset.a, kset.l, kset.u)

    # componentwise median: the faces order-swap where a_i < 0 (lam_l >= lam_u
    # and x_i(lam) increases in lam there), so sort the envelopes first
    z = np.clip(y, np.minimum(x_l, x_u), np.maximum(x_l, x_u))
    lam = lam_u if t0 > hi else lam_l
    return ProjectionResult(z, lam, ev_u + ev_l)


def project_interval(y: np.ndarray, kset: KnapsackSet, eps: float = DEFAULT_EPS,
                     compensated: bool = False) -> np.ndarray:
    """Nearest point of {x in box : lo <= a'x <= hi} to y.

    mid(x_L*, y, x_U*) where x_L*, x_U* are the equality projections onto
    the two faces; the second solve is warm-started from the first.
    """
    if not isinstance(kset.rhs, Interval):
        raise TypeError("project_interval needs an interval rhs")
    return _project_interval_impl(y, kset, eps, compensated).z


def project(y: np.ndarray, kset: KnapsackSet, eps: float = DEFAULT_EPS,
            compensated: bool = False) -> np.ndarray:
    """Projection onto the set, dispatching on the rhs kind."""
    if isinstance(kset.rhs, Equality):
        return project_equality(y, kset, eps, compensated)
    if isinstance(kset.rhs, Interval):
        return project_interval(y, kset, eps, compensated)
    return np.clip(np.asarray(y, dtype=float), kset.l, kset.u)


def project_info(y: np.ndarray, kset: KnapsackSet, eps: float = DEFAULT_EPS,
                 compensated: bool = False) -> ProjectionResult:
    """Projection plus the linear-row multiplier and h-evaluation count."""
    if isinstance(kset.rhs, Equality):
        lam, evals = find_multiplier(y, kset, eps, compensated)
        z = np.clip(np.asarray(y, dtype=float) - lam * kset.a, kset.l, kset.u)
        return ProjectionResult(z, lam, evals)
    if isinstance(kset.rhs, Interval):
        return _project_interval_impl(np.asarray(y, dtype=float), kset, eps, compensated)
    return ProjectionResult(np.clip(np.asarray(y, dtype=float), kset.l, kset.u), 0.0, 0)
