"""Reduced conjugate-gradient phase on the active face.

Bound-active variables are pinned to their bounds; when a linear row is
active the free coordinates move inside its Householder null space, so
every lifted point x0 + Z v keeps a'x constant and the fixed variables
bitwise unchanged.  The unconstrained solver sees only reduced vectors
(black-box reduction: lift points, pull gradients back through Z').

Directions use the Hager-Zhang update with the eta lower truncation
(guaranteed descent); the line search enforces weak or approximate Wolfe
conditions inside (0, cap], where cap = min(alpha_hat, alpha_bar) keeps
free variables in the box and inactive linear rows satisfied.  Hitting a
cap ends the phase with the new constraint identified and the binding
coordinate snapped exactly onto its bound.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .nullspace import HouseholderNullSpace, apply_z, apply_zt, build_householder
from .problems import EvaluationError, Objective
from .sets import Equality, IndexPartition, Interval, KnapsackSet, linear_tolerance, partition
from .spg import LineSearchError


class LinearState(str, Enum):
    EQUALITY = "equality"
    INTERVAL_INACTIVE = "interval_inactive"
    INTERVAL_LOWER = "interval_lower"
    INTERVAL_UPPER = "interval_upper"
    NONE = "none"

    @property
    def row_active(self) -> bool:
        return self in (LinearState.EQUALITY, LinearState.INTERVAL_LOWER,
                        LinearState.INTERVAL_UPPER)


@dataclass
class RcgdConfig:
    tol: float = 1e-8            # stop on ||reduced grad||_inf
    wolfe_delta: float = 0.1
    wolfe_sigma: float = 0.9
    eta: float = 0.01            # Hager-Zhang lower-truncation parameter
    approx_wolfe_frac: float = 1e-12  # |f0| fraction allowed by approximate Wolfe
    max_iter: int = 5000
    max_ls_evals: int = 50

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("tol", "wolfe_delta", "wolfe_sigma", "eta", "max_iter", "max_ls_evals")}


@dataclass
class ReducedSpace:
    """Frozen active face: bound-active variables fixed at x_anchor, free
    ones parameterized by the (possibly identity) null-space basis."""

    part: IndexPartition
    linear_state: LinearState
    x_anchor: np.ndarray
    ns: HouseholderNullSpace | None
    kset: KnapsackSet

    @property
    def free(self) -> np.ndarray:
        return self.part.inactive

    @property
    def dim(self) -> int:
        d = self.part.inactive.size
        if self.ns is not None:
            d -= 1
        return d


def make_reduced_space(x, kset: KnapsackSet, atol=None) -> ReducedSpace:
    """Partition x, snap active coordinates exactly onto their bounds, and
    decide which linear row (if any) is active at x."""
    x = np.asarray(x, dtype=float)
    part = partition(x, kset, atol)
    anchor = x.copy()
    for i in part.active:
        anchor[i] = kset.l[i] if abs(x[i] - kset.l[i]) <= abs(kset.u[i] - x[i]) else kset.u[i]

    if isinstance(kset.rhs, Equality):
        state = LinearState.EQUALITY
    elif isinstance(kset.rhs, Interval):
        t = float(kset.a @ anchor)
        lt = linear_tolerance(kset, anchor)
        near_lo = abs(t - kset.rhs.lo) <= lt
        near_hi = abs(t - kset.rhs.hi) <= lt
        if near_lo and near_hi:
            state = LinearState.INTERVAL_LOWER if abs(t - kset.rhs.lo) <= abs(t - kset.rhs.hi) \
                else LinearState.INTERVAL_UPPER
        elif near_lo:
            state = LinearState.INTERVAL_LOWER
        elif near_hi:
            state = LinearState.INTERVAL_UPPER
        else:
            state = LinearState.INTERVAL_INACTIVE
    else:
        state = LinearState.NONE

    ns = None
    if state.row_active and part.inactive.size > 0:
        a_free = kset.a[part.inactive]
        if np.any(a_free):
            ns = build_householder(a_free)
        # an all-zero reduced row imposes nothing on the face: keep Z = I
    return ReducedSpace(part=part, linear_state=state, x_anchor=anchor, ns=ns, kset=kset)


def lift(rs: ReducedSpace, v) -> np.ndarray:
    """x_anchor + Z v on the free coordinates; fixed ones untouched."""
    v = np.asarray(v, dtype=float)
    if v.size != rs.dim:
        raise ValueError(f"v must have length {rs.dim}")
    x = rs.x_anchor.copy()
    if rs.free.size:
        x[rs.free] += apply_z(rs.ns, v) if rs.ns is not None else v
    return x


def lift_direction(rs: ReducedSpace, d) -> np.ndarray:
    """Full-space direction Z d (zero on fixed coordinates)."""
    d = np.asarray(d, dtype=float)
    if d.size != rs.dim:
        raise ValueError(f"d must have length {rs.dim}")
    p = np.zeros(rs.part.n)
    if rs.free.size:
        p[rs.free] = apply_z(rs.ns, d) if rs.ns is not None else d
    return p


def reduce_gradient(rs: ReducedSpace, g_full) -> np.ndarray:
    """Z' g on the free coordinates (plain shrink when no row is active)."""
    g_full = np.asarray(g_full, dtype=float)
    if g_full.size != rs.part.n:
        raise ValueError("g_full has wrong length")
    gf = g_full[rs.free]
    return apply_zt(rs.ns, gf) if rs.ns is not None else gf


def step_cap_box(x, p_full, kset: KnapsackSet, part: IndexPartition) -> float:
    """Largest alpha with the free coordinates of x + alpha*p inside the box."""
    cap, _, _ = _step_cap_box_binding(np.asarray(x, float), np.asarray(p_full, float),
                                      kset, part)
    return cap


def _step_cap_box_binding(x, p, kset, part):
    free = part.inactive
    cap = np.inf
    if free.size == 0:
        return cap, None, None
    xf, pf = x[free], p[free]
    ratios = np.full(free.size, np.inf)
    up = pf > 0.0
    dn = pf < 0.0
    ratios[up] = (kset.u[free][up] - xf[up]) / pf[up]
    ratios[dn] = (kset.l[free][dn] - xf[dn]) / pf[dn]
    ratios = np.maximum(ratios, 0.0)
    j = int(np.argmin(ratios)) if free.size else None
    cap = float(ratios[j])
    if not np.isfinite(cap):
        return np.inf, None, None
    # all coordinates binding within roundoff of the min get snapped together
    tol = 4.0 * np.finfo(float).eps * max(1.0, cap)
    binding = free[ratios <= cap + tol]
    sides = np.where(pf[ratios <= cap + tol] > 0.0, 1, -1)  # +1 upper, -1 lower
    return cap, binding, sides


def _step_cap_linear(x, p, kset):
    """Cap from the two inactive interval rows; (cap, side) with side in
    {'lower','upper', None}."""
    t = float(kset.a @ x)
    ap = float(kset.a @ p)
    cap, side = np.inf, None
    if ap > 0.0:
        c = max(0.0, (kset.rhs.hi - t) / ap)
        if c < cap:
            cap, side = c, "upper"
    elif ap < 0.0:
        c = max(0.0, (kset.rhs.lo - t) / ap)
        if c < cap:
            cap, side = c, "lower"
    return cap, side


@dataclass
class CgState:
    g: np.ndarray
    g_prev: np.ndarray | None = None
    d_prev: np.ndarray | None = None
    restart: bool = False


def cg_direction(state: CgState, eta: float = 0.01) -> np.ndarray:
    """Hager-Zhang direction -g + beta*d_prev with the lower truncation
    beta >= -1/(||d|| min(eta, ||g_prev||)); falls back to -g on the first
    iteration, after a restart, or if descent is lost numerically."""
    g = state.g
    if state.restart or state.d_prev is None or state.g_prev is None:
        return -g
    d, gp = state.d_prev, state.g_prev
    y = g - gp
    dy = float(d @ y)
    if dy == 0.0 or not np.isfinite(dy):
        return -g
    yy = float(y @ y)
    beta = (float(y @ g) - 2.0 * float(d @ g) * yy / dy) / dy
    gnorm_prev = float(np.linalg.norm(gp))
    dnorm = float(np.linalg.norm(d))
    if dnorm > 0.0 and gnorm_prev > 0.0:
        beta = max(beta, -1.0 / (dnorm * min(eta, gnorm_prev)))
    out = -g + beta * d
    if float(g @ out) > -1e-12 * float(g @ g):
        return -g
    return out


def wolfe_linesearch(phi, alpha_init: float, alpha_cap: float, *,
                     delta: float = 0.1, sigma: float = 0.9,
                     approx_eps: float = 0.0, max_evals: int = 50):
    """Weak/approximate Wolfe search for phi(alpha) -> (value, slope).

    Returns (alpha, value, slope, evals, cap_hit).  phi'(0) must be
    negative.  When the cap binds before any Wolfe point and phi still
    decreases there, alpha_cap is returned with cap_hit=True; otherwise the
    search zooms inside (0, cap).
    """
    f0, g0 = phi(0.0)
    if not g0 < 0.0:
        raise ValueError("line search needs phi'(0) < 0")
    evals = 0

    def wolfe_ok(fa, ga, a):
        if fa <= f0 + delta * a * g0 and ga >= sigma * g0:
            return True
        # approximate Wolfe for roundoff-limited decreases
        return (ga >= sigma * g0 and ga <= (2.0 * delta - 1.0) * g0 and fa < f0 + approx_eps)

    best = (None, np.inf, None)

    a_prev, f_prev, g_prev = 0.0, f0, g0
    a = min(alpha_init, alpha_cap)
    if not a > 0.0:
        raise ValueError("need a positive trial step")
    bracket = None
    while evals < max_evals:
        fa, ga = phi(a)
        evals += 1
        if fa < best[1]:
            best = (a, fa, ga)
        if evals == 1 and ga != g0 and np.isfinite(ga):
            # secant on the slope: exact minimizer when phi is quadratic
            a_q = -g0 * a / (ga - g0)
            if 0.0 < a_q <= alpha_cap and np.isfinite(a_q) \
                    and abs(a_q - a) > 1e-10 * a and evals < max_evals:
                fq, gq = phi(a_q)
                evals += 1
                if fq < best[1]:
                    best = (a_q, fq, gq)
                if fq <= fa and wolfe_ok(fq, gq, a_q):
                    return a_q, fq, gq, evals, a_q == alpha_cap
                if fq < fa:  # continue the walk from the better point
                    a, fa, ga = a_q, fq, gq
        if fa > f0 + delta * a * g0 or (a_prev > 0.0 and fa >= f_prev):
            bracket = (a_prev, f_prev, g_prev, a, fa, ga)
            break
        if wolfe_ok(fa, ga, a):
            return a, fa, ga, evals, a == alpha_cap
        if a >= alpha_cap:
            if fa < f0:
                return alpha_cap, fa, ga, evals, True
            bracket = (a_prev, f_prev, g_prev, a, fa, ga)
            break
        a_prev, f_prev, g_prev = a, fa, ga
        a = min(2.0 * a, alpha_cap)
    if bracket is None:
        raise LineSearchError("wolfe search ran out of evaluations while expanding",
                              best_x=None, best_f=best[1], best_t=best[0])

    lo, flo, glo, hi, fhi, ghi = bracket
    while evals < max_evals:
        span = hi - lo
        if abs(span) <= 1e-16 * max(1.0, abs(lo)):
            break
        # secant on slopes when informative, else bisection
        t = None
        if np.isfinite(ghi) and ghi != glo:
            t = lo - glo * span / (ghi - glo)
        if t is None or not (lo + 0.1 * span <= t <= hi - 0.1 * span):
            t = lo + 0.5 * span
        ft, gt = phi(t)
        evals += 1
        if ft < best[1]:
            best = (t, ft, gt)
        if ft > f0 + delta * t * g0 or ft >= flo:
            hi, fhi, ghi = t, ft, gt
        else:
            if wolfe_ok(ft, gt, t):
                return t, ft, gt, evals, False
            if gt * span >= 0.0:
                hi, fhi, ghi = lo, flo, glo
            lo, flo, glo = t, ft, gt
    if best[0] is not None and best[1] < f0:
        # roundoff-limited: accept the best strict decrease seen
        return best[0], best[1], best[2], evals, False
    raise LineSearchError("wolfe search failed to find an acceptable step",
                          best_x=None, best_f=best[1], best_t=best[0])


@dataclass
class RcgdTraceRow:
    iter: int
    f: float
    norm_gred: float
    alpha: float | None
    cap_kind: str  # none | box | linear


@dataclass
class RcgdResult:
    x: np.ndarray
    f: float
    status: str    # converged | global_converged | bound_hit | linear_hit_lower |
                   # linear_hit_upper | restart_requested | iter_limit | linesearch_failure
    iterations: int
    g_full: np.ndarray | None = None
    binding: np.ndarray | None = None     # indices snapped on a bound_hit
    trace: list[RcgdTraceRow] = field(default_factory=list)


def rcgd_solve(objective: Objective, kset: KnapsackSet, x_start, rs: ReducedSpace,
               cfg: RcgdConfig | None = None, restart_test=None) -> RcgdResult:
    """CG on the face described by rs, starting from rs.x_anchor.

    restart_test(x, f, g_full, g_red), when given, may return "restart"
    (driver wants the gradient-projection phase back) or "converged"
    (driver-level stopping test holds); it is consulted once per iteration.
    """
    del x_start  # the anchor (x_start with actives snapped) is the start point
    cfg = cfg or RcgdConfig()
    x = rs.x_anchor.copy()
    f, g_full = objective.f_and_grad(x)
    if not (np.isfinite(f) and np.isfinite(g_full).all()):
        raise EvaluationError("objective returned non-finite values at the face anchor")
    g = reduce_gradient(rs, g_full)
    state = CgState(g=g)
    trace: list[RcgdTraceRow] = []
    f_prev = None

    for k in range(cfg.max_iter):
        norm_g = float(np.max(np.abs(g), initial=0.0))
        trace.append(RcgdTraceRow(iter=k, f=f, norm_gred=norm_g, alpha=None, cap_kind="none"))
        if restart_test is not None:
            # the driver's verdict outranks the face test so the tolerance
            # crossing is observed here rather than in a later phase
            verdict = restart_test(x, f, g_full, g)
            if verdict == "converged":
                return RcgdResult(x, f, "global_converged", k, g_full, trace=trace)
            if verdict == "restart":
                return RcgdResult(x, f, "restart_requested", k, g_full, trace=trace)
        if norm_g <= cfg.tol:
            return RcgdResult(x, f, "converged", k, g_full, trace=trace)

        d = cg_direction(state, cfg.eta)
        dg = float(d @ g)
        p = lift_direction(rs, d)
        cap_box, binding, sides = _step_cap_box_binding(x, p, kset, rs.part)
        if rs.linear_state is LinearState.INTERVAL_INACTIVE:
            cap_lin, lin_side = _step_cap_linear(x, p, kset)
        else:
            cap_lin, lin_side = np.inf, None
        cap = min(cap_box, cap_lin)
        cap_kind = "none" if not np.isfinite(cap) else ("box" if cap_box <= cap_lin else "linear")
        trace[-1].cap_kind = cap_kind

        cache = {}

        def phi(t, _x=x, _f=f, _dg=dg, _p=p):
            if t == 0.0:
                return _f, _dg
            xt = _x + t * _p
            ft, gt = objective.f_and_grad(xt)
            cache[t] = (xt, ft, gt)
            return ft, float(gt @ _p)

        if f_prev is not None and f_prev > f:
            guess = max(1e-10, min(2.02 * (f_prev - f) / (-dg), 1e8))
        else:
            guess = 1.0
        guess = min(guess, cap) if np.isfinite(cap) else guess
        try:
            alpha, f_new, _, _, cap_hit = wolfe_linesearch(
                phi, guess, cap, delta=cfg.wolfe_delta, sigma=cfg.wolfe_sigma,
                approx_eps=cfg.approx_wolfe_frac * max(1.0, abs(f)), max_evals=cfg.max_ls_evals)
        except LineSearchError:
            return RcgdResult(x, f, "linesearch_failure", k, g_full, trace=trace)
        trace[-1].alpha = alpha

        x_new, f_new, g_new_full = cache[alpha]
        if cap_hit:
            if cap_kind == "box":
                for idx, side in zip(binding, sides):
                    x_new[idx] = kset.u[idx] if side > 0 else kset.l[idx]
                f_new, g_new_full = objective.f_and_grad(x_new)
                return RcgdResult(x_new, f_new, "bound_hit", k + 1, g_new_full,
                                  binding=binding, trace=trace)
            return RcgdResult(x_new, f_new, f"linear_hit_{lin_side}", k + 1,
                              g_new_full, trace=trace)

        g_new = reduce_gradient(rs, g_new_full)
        state = CgState(g=g_new, g_prev=g, d_prev=d)
        f_prev, x, f, g_full, g = f, x_new, f_new, g_new_full, g_new

    return RcgdResult(x, f, "iter_limit", cfg.max_iter, g_full, trace=trace)


def write_trace_csv(trace: list[RcgdTraceRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "f", "norm_gred", "alpha", "cap_kind"])
        for r in trace:
            w.writerow([r.iter, repr(r.f), repr(r.norm_gred),
                        "" if r.alpha is None else repr(r.alpha), r.cap_kind])
