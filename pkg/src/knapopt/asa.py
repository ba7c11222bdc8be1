"""Two-phase active-set driver over knapsack sets.

Alternates a cheap gradient-projection phase (working-set identification)
with reduced conjugate-gradient optimization on the identified face.  The
projection phase stops when the undecided set empties or the bound-active
set repeats; the reduced phase grows the active set on bound/row hits and
hands control back when its face looks wrong (reduced gradient small
relative to the full projected gradient) or when the global test
||d1(x)||_inf <= tol holds.  Degenerate bilateral-inequality problems can
instead be solved by three equality-constrained runs (row ignored, row at
its lower value, row at its upper value), keeping the best.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .problems import Objective
from .projection import DEFAULT_EPS, project
from .rcgd import RcgdConfig, make_reduced_space, rcgd_solve
from .sets import (Equality, Interval, KnapsackSet, default_active_tolerance,
                   is_feasible_set, linear_tolerance, partition)
from .spg import SpgConfig, spg_solve


@dataclass
class AsaConfig:
    exp_a: float = 0.5        # gradient threshold exponent in the undecided set
    exp_b: float = 1.5        # slack threshold exponent
    mu: float = 0.1           # phase-switch ratio ||g_red|| < mu ||d1||
    repeat_limit: int = 5     # identical active sets before switching
    tol: float = 1e-8         # global stop on ||d1(x)||_inf
    max_cycles: int = 100
    u_norm: str = "2"         # norm of d1 inside the undecided-set thresholds
    proj_eps: float = DEFAULT_EPS

    def __post_init__(self):
        if not (0.0 < self.exp_a < 1.0):
            raise ValueError("need exp_a in (0,1)")
        if not (1.0 < self.exp_b < 2.0):
            raise ValueError("need exp_b in (1,2)")
        if not (0.0 < self.mu < 1.0):
            raise ValueError("need mu in (0,1)")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("exp_a", "exp_b", "mu", "repeat_limit", "tol", "max_cycles", "u_norm")}


@dataclass
class PhaseRecord:
    phase: str          # SPG | RCGD
    iterations: int
    f_start: float
    f_end: float
    active_set_size: int
    reason: str


@dataclass
class AsaResult:
    x: np.ndarray
    f: float
    status: str         # converged | cycle_limit | stalled
    cycles: int
    phases: list[PhaseRecord] = field(default_factory=list)
    degenerate_bounds: bool = False


def _row_multiplier(x, grad, kset: KnapsackSet) -> float:
    """Least-squares multiplier of the active linear row on the free
    coordinates (zero when no row is active at x)."""
    if kset.rhs is None:
        return 0.0
    if isinstance(kset.rhs, Interval):
        t = float(kset.a @ x)
        lt = linear_tolerance(kset, x)
        if not (abs(t - kset.rhs.lo) <= lt or abs(t - kset.rhs.hi) <= lt):
            return 0.0
    part = partition(x, kset)
    af = kset.a[part.inactive]
    ata = float(af @ af)
    return float(af @ np.asarray(grad, dtype=float)[part.inactive]) / ata if ata > 0.0 else 0.0


def undecided_set(x, grad, d1, kset: KnapsackSet, cfg: AsaConfig | None = None) -> np.ndarray:
    """Indices whose gradient component is still large while the point is
    far from both bounds; emptiness signals readiness for the reduced phase.

    U(x) = {i : |g_i - lam*a_i| > ||d1||^a and min(x_i - l_i, u_i - x_i) > ||d1||^b}
    with lam the free-coordinate row multiplier.  Removing the row component
    is what makes U empty at stationary points with strict complementarity;
    the raw gradient tends to lam*a there, not to zero.
    """
    cfg = cfg or AsaConfig()
    x = np.asarray(x, dtype=float)
    grad = np.asarray(grad, dtype=float)
    d1 = np.asarray(d1, dtype=float)
    nd = float(np.linalg.norm(d1, np.inf if cfg.u_norm == "inf" else 2))
    thr_g = nd ** cfg.exp_a
    thr_x = nd ** cfg.exp_b
    ghat = grad - _row_multiplier(x, grad, kset) * kset.a
    slack = np.minimum(x - kset.l, kset.u - x)
    return np.nonzero((np.abs(ghat) > thr_g) & (slack > thr_x))[0]


def kkt_residual(x, grad, kset: KnapsackSet, atol=None) -> float:
    """Max-norm stationarity residual with the least-squares row multiplier.

    Free coordinates must satisfy g = lam*a; bound multipliers must carry
    the right sign (g - lam*a >= 0 at lower bounds, <= 0 at upper).
    """
    x = np.asarray(x, dtype=float)
    grad = np.asarray(grad, dtype=float)
    part = partition(x, kset, atol)
    lam = 0.0
    if isinstance(kset.rhs, (Equality, Interval)):
        af = kset.a[part.inactive]
        ata = float(af @ af)
        if ata > 0.0:
            lam = float(af @ grad[part.inactive]) / ata
        if isinstance(kset.rhs, Interval):
            t = float(kset.a @ x)
            lt = 1e-8 * (1.0 + abs(t))
            lower = abs(t - kset.rhs.lo) <= lt
            upper = abs(t - kset.rhs.hi) <= lt
            if not (lower or upper):
                lam = 0.0
            elif lower and not upper:
                lam = min(lam, 0.0)  # multiplier sign for an active lower row
            elif upper and not lower:
                lam = max(lam, 0.0)
    r = grad - lam * kset.a
    res = float(np.max(np.abs(r[part.inactive]), initial=0.0))
    tolv = default_active_tolerance(kset)
    at_l = np.abs(x - kset.l) <= tolv
    at_u = np.abs(kset.u - x) <= tolv
    for i in part.active:
        fixed = kset.u[i] - kset.l[i] <= tolv[i]
        if fixed:
            continue
        if at_l[i]:
            res = max(res, max(0.0, -r[i]))
        elif at_u[i]:
            res = max(res, max(0.0, r[i]))
    return res


def _spg_stop_factory(kset: KnapsackSet, cfg: AsaConfig):
    state = {"last": None, "repeats": 0}

    def stop_test(it):
        act = partition(it.x, kset).active
        key = act.tobytes()
        if state["last"] == key:
            state["repeats"] += 1
        else:
            state["last"] = key
            state["repeats"] = 0
        if undecided_set(it.x, it.g, it.d1, kset, cfg).size == 0:
            return "undecided_empty"
        if state["repeats"] >= cfg.repeat_limit:
            return "active_set_stable"
        return None

    return stop_test


def asa_solve(objective: Objective, kset: KnapsackSet, x0,
              cfg: AsaConfig | None = None, spg_cfg: SpgConfig | None = None,
              rcgd_cfg: RcgdConfig | None = None) -> AsaResult:
    """Minimize the objective over the set from x0 (projected first)."""
    cfg = cfg or AsaConfig()
    spg_cfg = spg_cfg or SpgConfig(tol=cfg.tol, max_iter=2000, proj_eps=cfg.proj_eps)
    # face tolerance mu*tol: below it either the mu-rule or the global test
    # has already fired, so the reduced phase observes the final crossing
    rcgd_cfg = rcgd_cfg or RcgdConfig(tol=cfg.mu * cfg.tol)
    if not is_feasible_set(kset):
        raise ValueError("infeasible knapsack set")

    def restart_test(x, f, g_full, g_red):
        d1 = project(x - g_full, kset, cfg.proj_eps) - x
        nd1 = float(np.max(np.abs(d1), initial=0.0))
        if nd1 <= cfg.tol:
            return "converged"
        if float(np.max(np.abs(g_red), initial=0.0)) < cfg.mu * nd1:
            return "restart"
        return None

    phases: list[PhaseRecord] = []
    x = project(np.asarray(x0, dtype=float), kset, cfg.proj_eps)
    f = None
    status = "cycle_limit"
    stalls = 0
    cycle = 0
    for cycle in range(1, cfg.max_cycles + 1):
        spg_res = spg_solve(objective, kset, x, spg_cfg, stop_test=_spg_stop_factory(kset, cfg))
        f_start = spg_res.trace[0].f if spg_res.trace else spg_res.f
        phases.append(PhaseRecord("SPG", spg_res.iterations, f_start, spg_res.f,
                                  partition(spg_res.x, kset).dim_active, spg_res.status))
        x, f = spg_res.x, spg_res.f
        if spg_res.status == "converged":
            status = "converged"
            break
        if spg_res.status == "linesearch_failure":
            stalls += 1
            if stalls >= 2:
                status = "stalled"
                break
        else:
            stalls = 0

        leave_to_spg = False
        while True:
            rs = make_reduced_space(x, kset)
            rres = rcgd_solve(objective, kset, x, rs, rcgd_cfg, restart_test=restart_test)
            phases.append(PhaseRecord("RCGD", rres.iterations, f if f is not None else rres.f,
                                      rres.f, rs.part.dim_active, rres.status))
            x, f = rres.x, rres.f
            if rres.status == "global_converged":
                status = "converged"
                break
            if rres.status in ("bound_hit", "linear_hit_lower", "linear_hit_upper"):
                continue  # the active set grew; keep optimizing the smaller face
            if rres.status == "converged":
                g = rres.g_full if rres.g_full is not None else objective.grad(x)
                d1 = project(x - g, kset, cfg.proj_eps) - x
                if float(np.max(np.abs(d1), initial=0.0)) <= cfg.tol:
                    status = "converged"
                else:
                    leave_to_spg = True  # face optimum but not stationary: wrong face
                break
            if rres.status == "linesearch_failure":
                stalls += 1
                if stalls >= 2:
                    status = "stalled"
                else:
                    leave_to_spg = True
                break
            # restart_requested or iter_limit
            leave_to_spg = True
            break
        if status in ("converged", "stalled"):
            break
        if not leave_to_spg:
            break

    if f is None:
        f = objective.f(x)
    result = AsaResult(x=x, f=f, status=status, cycles=cycle, phases=phases)
    result.degenerate_bounds = _flag_degenerate_bounds(x, objective, kset)
    return result


def _flag_degenerate_bounds(x, objective: Objective, kset: KnapsackSet) -> bool:
    """Diagnostic: an active bound whose multiplier is near zero (ties the
    degenerate-convergence theory; no behavioral change)."""
    g = objective.grad(x)
    part = partition(x, kset)
    if part.active.size == 0:
        return False
    lam = _row_multiplier(x, g, kset)
    r = g - lam * kset.a
    scale = 1.0 + float(np.max(np.abs(g)))
    return bool(np.any(np.abs(r[part.active]) <= 1e-10 * scale))


@dataclass
class ThreeSolveResult:
    x: np.ndarray
    f: float
    which: str  # interior | lower | upper
    results: list[AsaResult] = field(default_factory=list)


def solve_interval_by_three(objective: Objective, kset: KnapsackSet, x0,
                            cfg: AsaConfig | None = None, spg_cfg: SpgConfig | None = None,
                            rcgd_cfg: RcgdConfig | None = None) -> ThreeSolveResult:
    """Sequential strategy for bilateral rows that may be degenerate.

    First solve ignoring the linear row; if that already satisfies
    lo <= a'x <= hi it is a local solution and the rest is skipped.
    Otherwise solve with the row pinned at each attainable face value and
    keep the smaller objective (ties go to the lower face).
    """
    if not isinstance(kset.rhs, Interval):
        raise TypeError("solve_interval_by_three needs an interval rhs")
    cfg = cfg or AsaConfig()
    box_set = replace(kset, rhs=None)
    res_m = asa_solve(objective, box_set, x0, cfg, spg_cfg, rcgd_cfg)
    t = float(kset.a @ res_m.x)
    slack = 1e-10 * (1.0 + abs(t))
    if kset.rhs.lo - slack <= t <= kset.rhs.hi + slack:
        return ThreeSolveResult(res_m.x, res_m.f, "interior", [res_m])

    smin, smax = kset.attainable_range()
    candidates = []
    for which, b in (("lower", kset.rhs.lo), ("upper", kset.rhs.hi)):
        if not (smin <= b <= smax):
            continue  # that face value is unattainable, the row can never bind there
        face = replace(kset, rhs=Equality(b))
        res = asa_solve(objective, face, x0, cfg, spg_cfg, rcgd_cfg)
        candidates.append((which, res))
    if not candidates:
        raise ValueError("no attainable face for an interval violated by the box solution")
    best_which, best = candidates[0]
    for which, res in candidates[1:]:
        if res.f < best.f:  # strict: ties keep the lower face (listed first)
            best_which, best = which, res
    return ThreeSolveResult(best.x, best.f, best_which, [res_m] + [r for _, r in candidates])


def write_phase_csv(phases: list[PhaseRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["phase", "iterations", "f_start", "f_end", "active_set_size", "reason"])
        for p in phases:
            w.writerow([p.phase, p.iterations, repr(p.f_start), repr(p.f_end),
                        p.active_set_size, p.reason])
