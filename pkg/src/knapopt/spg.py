"""Nonmonotone spectral projected gradient over knapsack sets.

Directions follow the scaled projected gradient d^alpha(x) =
P_D(x - alpha*grad) - x with the Barzilai-Borwein alpha (the inverse
Rayleigh quotient of the averaged Hessian along the last step, so
alpha*I approximates the inverse Hessian).  A Grippo-Lampariello-Lucidi
nonmonotone line search guards global convergence; when s'y <= 0 signals
negative curvature the large step sigma = 1 is taken.  Stopping measures
the unscaled projected gradient d^1(x) in the max norm.

The solver owns its state during a run; the evaluator must behave as a
pure function of x.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .problems import EvaluationError, Objective
from .projection import DEFAULT_EPS, project
from .sets import Equality, Interval, KnapsackSet


class LineSearchError(RuntimeError):
    """Backtracking exhausted; carries the best trial found."""

    def __init__(self, msg, best_x=None, best_f=None, best_t=None):
        super().__init__(msg)
        self.best_x = best_x
        self.best_f = best_f
        self.best_t = best_t


@dataclass
class SpgConfig:
    gamma: float = 1e-4          # sufficient-decrease constant
    memory: int = 10             # nonmonotone reference window M
    alpha_min: float = 1e-30
    alpha_max: float = 1e30
    sigma_neg_curv: float = 1.0  # step used when s'y <= 0
    sigma1: float = 0.1          # backtracking safeguards
    sigma2: float = 0.9
    max_iter: int = 10000
    max_backtracks: int = 50
    tol: float = 1e-8            # stop on ||d1(x)||_inf
    proj_eps: float = DEFAULT_EPS

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("need 0 < gamma < 1")
        if not self.alpha_min < self.alpha_max:
            raise ValueError("need alpha_min < alpha_max")
        if self.memory < 1:
            raise ValueError("need memory >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("gamma", "memory", "alpha_min", "alpha_max", "sigma_neg_curv",
                 "sigma1", "sigma2", "max_iter", "max_backtracks", "tol")}


@dataclass
class SolverIterate:
    """Snapshot handed to stop_test hooks each iteration."""

    k: int
    x: np.ndarray
    f: float
    g: np.ndarray
    d1: np.ndarray
    norm_d1: float
    alpha_bb: float


@dataclass
class SpgTraceRow:
    iter: int
    f: float
    norm_d1: float
    alpha_bb: float
    n_f: int
    n_g: int
    step: float | None = None        # accepted line-search parameter
    f_new: float | None = None
    f_ref: float | None = None
    decrease_rhs: float | None = None  # f_ref + gamma*t*delta
    box_violation: float = 0.0
    lin_residual: float = 0.0


@dataclass
class SpgResult:
    x: np.ndarray
    f: float
    status: str
    iterations: int
    trace: list[SpgTraceRow] = field(default_factory=list)


def scaled_projected_gradient(x, alpha: float, grad, kset: KnapsackSet,
                              eps: float = DEFAULT_EPS) -> np.ndarray:
    """d^alpha(x) = P_D(x - alpha*grad) - x; zero iff x is stationary."""
    x = np.asarray(x, dtype=float)
    return project(x - alpha * np.asarray(grad, dtype=float), kset, eps) - x


def bb_stepsize(s, y, cfg: SpgConfig | None = None) -> float:
    """Barzilai-Borwein step s's/s'y, safeguarded to [alpha_min, alpha_max];
    s'y <= 0 (negative curvature) returns the large step sigma."""
    cfg = cfg or SpgConfig()
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    sy = float(s @ y)
    if sy <= 0.0:
        return cfg.sigma_neg_curv
    return float(np.clip(float(s @ s) / sy, cfg.alpha_min, cfg.alpha_max))


def nonmonotone_linesearch(fun, x, d, f0: float, f_ref: float, delta: float,
                           cfg: SpgConfig | None = None):
    """First t in {1, backtracks} with f(x + t d) <= f_ref + gamma*t*delta.

    Backtracks to the minimizer of the quadratic through (0, f0), slope
    delta, and (t, f_trial), accepted only inside [sigma1*t, sigma2*t],
    otherwise t/2.  delta must be negative.  Returns (x_new, f_new, t).
    """
    cfg = cfg or SpgConfig()
    if not delta < 0.0:
        raise ValueError("need a descent direction (delta < 0)")
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    t = 1.0
    best_f, best_x, best_t = np.inf, None, None
    for _ in range(cfg.max_backtracks):
        xt = x + t * d
        ft = fun(xt)
        if ft <= f_ref + cfg.gamma * t * delta:
            return xt, ft, t
        if ft < best_f:
            best_f, best_x, best_t = ft, xt, t
        denom = ft - f0 - delta * t
        t_new = -delta * t * t / (2.0 * denom) if denom > 0.0 else 0.5 * t
        if not (cfg.sigma1 * t <= t_new <= cfg.sigma2 * t):
            t_new = 0.5 * t
        t = t_new
    raise LineSearchError("nonmonotone line search exhausted its backtracks",
                          best_x=best_x, best_f=best_f, best_t=best_t)


def _feasibility_metrics(x, kset: KnapsackSet) -> tuple[float, float]:
    box = max(0.0, float(np.max(kset.l - x, initial=0.0)),
              float(np.max(x - kset.u, initial=0.0)))
    if isinstance(kset.rhs, Equality):
        lin = abs(float(kset.a @ x) - kset.rhs.b)
    elif isinstance(kset.rhs, Interval):
        t = float(kset.a @ x)
        lin = max(0.0, kset.rhs.lo - t, t - kset.rhs.hi)
    else:
        lin = 0.0
    return box, lin


def spg_solve(objective: Objective, kset: KnapsackSet, x0, cfg: SpgConfig | None = None,
              stop_test=None) -> SpgResult:
    """Run SPG from x0 (projected onto the set first).

    stop_test(it: SolverIterate), when given, may return a reason string to
    stop early (used by the active-set driver and the topology loop); it is
    consulted after the convergence check, and not at k = 0 so a restarted
    phase always makes progress.
    """
    cfg = cfg or SpgConfig()
    x = project(np.asarray(x0, dtype=float), kset, cfg.proj_eps)
    f = objective.f(x)
    g = objective.grad(x)
    if not (np.isfinite(f) and np.isfinite(g).all()):
        raise EvaluationError("objective returned non-finite values at the start point")
    history = deque([f], maxlen=cfg.memory)

    d1 = scaled_projected_gradient(x, 1.0, g, kset, cfg.proj_eps)
    norm_d1 = float(np.max(np.abs(d1), initial=0.0))
    alpha = 1.0 if norm_d1 == 0.0 else float(np.clip(1.0 / norm_d1, cfg.alpha_min, cfg.alpha_max))

    trace: list[SpgTraceRow] = []
    status = "iter_limit"
    accepted = 0
    for k in range(cfg.max_iter):
        if k > 0:
            d1 = scaled_projected_gradient(x, 1.0, g, kset, cfg.proj_eps)
            norm_d1 = float(np.max(np.abs(d1), initial=0.0))
        box_v, lin_r = _feasibility_metrics(x, kset)
        row = SpgTraceRow(iter=k, f=f, norm_d1=norm_d1, alpha_bb=alpha,
                          n_f=objective.n_f, n_g=objective.n_g,
                          box_violation=box_v, lin_residual=lin_r)
        trace.append(row)
        if norm_d1 <= cfg.tol:
            status = "converged"
            break
        if stop_test is not None and k > 0:
            reason = stop_test(SolverIterate(k=k, x=x, f=f, g=g, d1=d1,
                                             norm_d1=norm_d1, alpha_bb=alpha))
            if reason:
                status = reason
                break

        d = d1 if alpha == 1.0 else scaled_projected_gradient(x, alpha, g, kset, cfg.proj_eps)
        delta = float(g @ d)
        if delta >= 0.0:
            d, delta = d1, float(g @ d1)
            if delta >= 0.0:
                status = "converged"  # numerically stationary
                break
        f_ref = max(history)
        try:
            x_new, f_new, t = nonmonotone_linesearch(objective.f, x, d, f, f_ref, delta, cfg)
        except LineSearchError:
            status = "linesearch_failure"
            break
        x_new = np.clip(x_new, kset.l, kset.u)  # keep the box exact
        g_new = objective.grad(x_new)
        if not (np.isfinite(f_new) and np.isfinite(g_new).all()):
            raise EvaluationError(f"objective returned non-finite values at iteration {k}")
        row.step, row.f_new, row.f_ref = t, f_new, f_ref
        row.decrease_rhs = f_ref + cfg.gamma * t * delta
        s = x_new - x
        yv = g_new - g
        if np.any(s):
            alpha = bb_stepsize(s, yv, cfg)
        x, f, g = x_new, f_new, g_new
        history.append(f)
        accepted += 1

    return SpgResult(x=x, f=f, status=status, iterations=accepted, trace=trace)


def write_trace_csv(trace: list[SpgTraceRow], path) -> None:
    """Emit the per-iteration trace (iter, f, norm_d1, alpha_bb, n_f, n_g)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "f", "norm_d1", "alpha_bb", "n_f", "n_g"])
        for r in trace:
            w.writerow([r.iter, repr(r.f), repr(r.norm_d1), repr(r.alpha_bb), r.n_f, r.n_g])
