"""Objective evaluators and a small library of test problems.

Evaluators are deterministic and pure aside from the call counters (n_f,
n_g grow exactly once per f / grad call; f_and_grad grows both).  Random
problems are reproducible from their seed using numpy's PCG64 generator,
so corpora match across platforms.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .sets import Equality, Interval, KnapsackSet

log = logging.getLogger("knapopt.problems")


class EvaluationError(RuntimeError):
    """Objective or gradient came back non-finite."""


class Objective:
    """Base evaluator: subclasses implement _f and _grad."""

    def __init__(self):
        self.n_f = 0
        self.n_g = 0

    def _f(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def _grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def f(self, x) -> float:
        self.n_f += 1
        return float(self._f(np.asarray(x, dtype=float)))

    def grad(self, x) -> np.ndarray:
        self.n_g += 1
        return np.asarray(self._grad(np.asarray(x, dtype=float)), dtype=float)

    def f_and_grad(self, x) -> tuple[float, np.ndarray]:
        return self.f(x), self.grad(x)

    def reset_counters(self) -> None:
        self.n_f = 0
        self.n_g = 0


class QuadraticObjective(Objective):
    """f(x) = 1/2 x'Hx + c'x with H dense symmetric or diagonal."""

    def __init__(self, c, hess=None, hess_diag=None):
        super().__init__()
        if (hess is None) == (hess_diag is None):
            raise ValueError("give exactly one of hess, hess_diag")
        self.c = np.asarray(c, dtype=float)
        self.hess = None if hess is None else np.asarray(hess, dtype=float)
        self.hess_diag = None if hess_diag is None else np.asarray(hess_diag, dtype=float)
        if self.hess is not None and not np.array_equal(self.hess, self.hess.T):
            raise ValueError("hess must be symmetric")

    def hess_mul(self, x: np.ndarray) -> np.ndarray:
        if self.hess is not None:
            return self.hess @ x
        return self.hess_diag * x

    def _f(self, x):
        return 0.5 * float(x @ self.hess_mul(x)) + float(self.c @ x)

    def _grad(self, x):
        return self.hess_mul(x) + self.c


class ProjectionObjective(Objective):
    """f(x) = 1/2 ||x - y||^2; the minimizer over the set is its projection."""

    def __init__(self, y):
        super().__init__()
        self.y = np.asarray(y, dtype=float)

    def _f(self, x):
        d = x - self.y
        return 0.5 * float(d @ d)

    def _grad(self, x):
        return x - self.y


class StyblinskiTangObjective(Objective):
    """Smooth nonconvex separable test: f = 1/2 sum(x^4 - 16x^2 + 5x)."""

    def _f(self, x):
        return 0.5 * float(np.sum(x ** 4 - 16.0 * x ** 2 + 5.0 * x))

    def _grad(self, x):
        return 2.0 * x ** 3 - 16.0 * x + 2.5


def projection_problem(y, kset: KnapsackSet) -> ProjectionObjective:
    del kset  # the set only matters to the solver
    return ProjectionObjective(y)


def check_gradient(obj: Objective, x, h_rel: float = 1e-6) -> float:
    """Max relative error of grad vs central differences at x."""
    x = np.asarray(x, dtype=float)
    g = obj.grad(x)
    worst = 0.0
    for i in range(x.size):
        h = h_rel * (1.0 + abs(x[i]))
        xp = x.copy(); xp[i] += h
        xm = x.copy(); xm[i] -= h
        fd = (obj.f(xp) - obj.f(xm)) / (2.0 * h)
        scale = max(1.0, abs(fd), abs(g[i]))
        worst = max(worst, abs(fd - g[i]) / scale)
    return worst


def rng_from_seed(seed: int) -> np.random.Generator:
    """Named generator (PCG64) so instances reproduce across platforms."""
    return np.random.Generator(np.random.PCG64(seed))


def random_knapsack_set(n: int, rng: np.random.Generator, set_kind: str = "equality",
                        zero_a_prob: float = 0.15, scale: float = 1.0) -> KnapsackSet:
    """Random feasible set: mixed-sign a (with zeros), rhs inside the
    attainable range of a'x over the box."""
    lo = rng.uniform(-scale, scale, n)
    hi = lo + rng.uniform(0.05 * scale, 2.0 * scale, n)
    a = rng.uniform(-1.0, 1.0, n)
    if n > 1 and zero_a_prob > 0.0:
        a[rng.random(n) < zero_a_prob] = 0.0
    if not np.any(a):
        a[int(rng.integers(n))] = 1.0
    probe = KnapsackSet(lo, hi, a, None)
    smin, smax = probe.attainable_range()
    if set_kind == "equality":
        b = smin + rng.uniform(0.1, 0.9) * (smax - smin)
        return KnapsackSet(lo, hi, a, Equality(b))
    if set_kind == "interval":
        t = np.sort(rng.uniform(0.05, 0.95, 2))
        return KnapsackSet(lo, hi, a, Interval(smin + t[0] * (smax - smin),
                                               smin + t[1] * (smax - smin)))
    if set_kind == "box":
        return probe
    raise ValueError(f"unknown set_kind {set_kind!r}")


@dataclass
class QpProblem:
    """Strictly convex quadratic over a knapsack set, plus its provenance."""

    c: np.ndarray
    kset: KnapsackSet
    seed: int
    kind: str
    hess: np.ndarray | None = None
    hess_diag: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.c.size

    def objective(self) -> QuadraticObjective:
        return QuadraticObjective(self.c, hess=self.hess, hess_diag=self.hess_diag)

    def to_json(self) -> dict:
        d = {"kind": "qp", "c": [float(v) for v in self.c],
             "set": self.kset.to_json(), "seed": self.seed}
        if self.hess_diag is not None:
            d["H"] = {"diag": [float(v) for v in self.hess_diag]}
        else:
            d["H"] = {"dense": [[float(v) for v in row] for row in self.hess]}
        return d


def make_random_qp(n: int, seed: int, kind: str = "dense_spd",
                   set_kind: str = "equality") -> QpProblem:
    """Reproducible random QP with a guaranteed-nonempty feasible set."""
    if n < 1:
        raise ValueError("need n >= 1")
    rng = rng_from_seed(seed)
    kset = random_knapsack_set(n, rng, set_kind)
    c = rng.uniform(-2.0, 2.0, n)
    if kind == "dense_spd":
        bmat = rng.uniform(-1.0, 1.0, (n, n))
        hess = bmat.T @ bmat + n * np.finfo(float).eps * np.eye(n)
        hess = 0.5 * (hess + hess.T)
        if log.isEnabledFor(logging.DEBUG):
            ev = np.linalg.eigvalsh(hess)
            log.debug("qp seed=%d n=%d eigen spread [%.3e, %.3e]", seed, n, ev[0], ev[-1])
        return QpProblem(c=c, kset=kset, seed=seed, kind=kind, hess=hess)
    if kind == "diagonal":
        diag = rng.uniform(0.5, 5.0, n)
        return QpProblem(c=c, kset=kset, seed=seed, kind=kind, hess_diag=diag)
    raise ValueError(f"unknown qp kind {kind!r}")


def qp_from_json(d: dict) -> QpProblem:
    for key in ("H", "c", "set"):
        if key not in d:
            raise ValueError(f"qp JSON: missing field '{key}'")
    h = d["H"]
    kset = KnapsackSet.from_json(d["set"])
    if "diag" in h:
        return QpProblem(c=d["c"], kset=kset, seed=int(d.get("seed", -1)),
                         kind="diagonal", hess_diag=np.asarray(h["diag"], dtype=float))
    if "dense" in h:
        return QpProblem(c=d["c"], kset=kset, seed=int(d.get("seed", -1)),
                         kind="dense_spd", hess=np.asarray(h["dense"], dtype=float))
    raise ValueError("qp JSON: field 'H' must contain 'diag' or 'dense'")
