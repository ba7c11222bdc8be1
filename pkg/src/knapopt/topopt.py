"""Two-material conductor topology optimization on [0,1]^d (d = 2 or 3).

Minimize J(w) = 1/2 int |grad theta|^2 where theta solves the Poisson
problem -div(k(w) grad theta) = f with Dirichlet data theta0, the material
field w in [0,1] mixes the conductivities k(w) = k_alpha + (k_beta -
k_alpha) w, and the resource constraint int w = R |Omega| with the
per-cell volumes as the linear row makes the admissible set a knapsack
set.  Discretization is cell-centered finite volume with two-point fluxes
and harmonic-mean face conductivities; boundary faces sit half a cell from
the centers.

The per-cell objective gradient is assembled by the exact discrete
adjoint: solve the same operator for eta with right-hand side equal to the
unit-conductivity operator applied to theta (the discrete -div(grad
theta), eta = 0 on the boundary), then chain through the harmonic means.
This is the discrete counterpart of -(k_beta - k_alpha) grad theta . grad
eta per cell and matches finite differences to solver precision.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .problems import Objective
from .projection import DEFAULT_EPS, project_equality
from .sets import Equality, KnapsackSet
from .spg import SpgConfig, spg_solve


class PcgError(RuntimeError):
    """Conjugate-gradient solve fell short; carries the residual history."""

    def __init__(self, msg, residuals):
        super().__init__(msg)
        self.residuals = residuals


@dataclass(frozen=True)
class TopoProblem:
    """Geometry, materials, load and resource fraction of one instance."""

    shape: tuple            # cells per axis on [0,1]^d
    k_alpha: float = 1.0
    k_beta: float = 2.0
    load: float | np.ndarray = 1.0
    theta0: float = 0.0
    volume_fraction: float = 0.4

    def __post_init__(self):
        shape = tuple(int(s) for s in (self.shape if np.iterable(self.shape) else (self.shape,)))
        if len(shape) not in (2, 3) or any(s < 2 for s in shape):
            raise ValueError("shape must give 2 or 3 axes with at least 2 cells each")
        object.__setattr__(self, "shape", shape)
        # equal conductivities are allowed (degenerate: the gradient vanishes)
        if not (0.0 < self.k_alpha <= self.k_beta):
            raise ValueError("need 0 < k_alpha <= k_beta")
        # R = 1 is the degenerate fully-filled design (w forced to 1)
        if not (0.0 < self.volume_fraction <= 1.0):
            raise ValueError("need volume_fraction in (0, 1]")

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> tuple:
        return tuple(1.0 / s for s in self.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def load_array(self) -> np.ndarray:
        if np.iterable(self.load):
            arr = np.asarray(self.load, dtype=float).reshape(self.shape)
            return arr
        return np.full(self.shape, float(self.load))

    def conductivity(self, w: np.ndarray) -> np.ndarray:
        return self.k_alpha + (self.k_beta - self.k_alpha) * np.asarray(w, dtype=float)


@dataclass
class TopoState:
    w: np.ndarray
    theta: np.ndarray
    eta: np.ndarray
    J: float
    G: np.ndarray


def topo_knapsack_set(prob: TopoProblem) -> KnapsackSet:
    """{0 <= w <= 1, sum(w * cell_volume) = R |Omega|}; the linear row is
    the vector of cell volumes."""
    n = prob.n_cells
    vol = prob.cell_volume
    return KnapsackSet(np.zeros(n), np.ones(n), np.full(n, vol),
                       Equality(prob.volume_fraction * 1.0))


def pcg(mat, rhs, rel_tol: float = 1e-10, max_iter: int | None = None):
    """Jacobi-preconditioned conjugate gradients; returns (x, residuals).

    Residuals are ||r||/||rhs||; failure to reach rel_tol raises PcgError
    with the history attached.
    """
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.size
    if max_iter is None:
        max_iter = 40 * n
    bnorm = float(np.linalg.norm(rhs))
    if bnorm == 0.0:
        return np.zeros(n), [0.0]
    dinv = 1.0 / mat.diagonal()
    x = np.zeros(n)
    r = rhs.copy()
    z = dinv * r
    p = z.copy()
    rz = float(r @ z)
    residuals = [1.0]
    for _ in range(max_iter):
        ap = mat @ p
        alpha = rz / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        res = float(np.linalg.norm(r)) / bnorm
        residuals.append(res)
        if res <= rel_tol:
            return x, residuals
        z = dinv * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise PcgError(f"PCG stalled at relative residual {residuals[-1]:.3e}", residuals)


def _axis_weights(prob: TopoProblem):
    # transmissibility scale per axis: face area / distance = vol / h^2
    vol = prob.cell_volume
    return [vol / h / h for h in prob.spacing]


def _face_slices(ndim, ax):
    lo = [slice(None)] * ndim
    hi = [slice(None)] * ndim
    lo[ax] = slice(None, -1)
    hi[ax] = slice(1, None)
    return tuple(lo), tuple(hi)


def _end_slices(ndim, ax):
    first = [slice(None)] * ndim
    last = [slice(None)] * ndim
    first[ax] = 0
    last[ax] = -1
    return tuple(first), tuple(last)


def assemble_system(kcell: np.ndarray, prob: TopoProblem):
    """Finite-volume operator and right-hand side for -div(k grad .) = f
    with Dirichlet value theta0 on the whole boundary."""
    shape = prob.shape
    kcell = np.asarray(kcell, dtype=float).reshape(shape)
    n = prob.n_cells
    idx = np.arange(n).reshape(shape)
    weights = _axis_weights(prob)
    diag = np.zeros(n)
    rows, cols, vals = [], [], []
    rhs = prob.load_array().ravel() * prob.cell_volume
    for ax in range(prob.ndim):
        w = weights[ax]
        lo, hi = _face_slices(prob.ndim, ax)
        kf = (2.0 * kcell[lo] * kcell[hi] / (kcell[lo] + kcell[hi])).ravel() * w
        i = idx[lo].ravel()
        j = idx[hi].ravel()
        rows.append(i); cols.append(j); vals.append(-kf)
        rows.append(j); cols.append(i); vals.append(-kf)
        np.add.at(diag, i, kf)
        np.add.at(diag, j, kf)
        first, last = _end_slices(prob.ndim, ax)
        for end in (first, last):
            tb = 2.0 * kcell[end].ravel() * w  # half-cell distance to the wall
            ib = idx[end].ravel()
            np.add.at(diag, ib, tb)
            np.add.at(rhs, ib, tb * prob.theta0)
    rows.append(np.arange(n)); cols.append(np.arange(n)); vals.append(diag)
    mat = sp.csr_matrix((np.concatenate(vals),
                         (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return mat, rhs


def solve_state(w: np.ndarray, prob: TopoProblem, rel_tol: float = 1e-10) -> np.ndarray:
    """Temperature field for the material layout w (flattened, cell order)."""
    w = np.asarray(w, dtype=float)
    if np.any(w < -1e-12) or np.any(w > 1.0 + 1e-12):
        raise ValueError("w must lie in [0, 1] per cell")
    mat, rhs = assemble_system(prob.conductivity(w), prob)
    theta, _ = pcg(mat, rhs, rel_tol)
    return theta


def objective_value(theta: np.ndarray, prob: TopoProblem) -> float:
    """J = 1/2 sum over faces of |face gradient|^2 times the face volume."""
    th = np.asarray(theta, dtype=float).reshape(prob.shape)
    weights = _axis_weights(prob)
    total = 0.0
    for ax in range(prob.ndim):
        w = weights[ax]
        lo, hi = _face_slices(prob.ndim, ax)
        d = th[hi] - th[lo]
        total += 0.5 * w * float(np.sum(d * d))
        first, last = _end_slices(prob.ndim, ax)
        for end in (first, last):
            d = th[end] - prob.theta0
            total += w * float(np.sum(d * d))  # half volume, half spacing
    return total


def _grad_j_theta(theta: np.ndarray, prob: TopoProblem) -> np.ndarray:
    """dJ/dtheta: the unit-conductivity operator applied with the boundary
    data, i.e. the discrete -div(grad theta) field.  The body load does not
    enter (J only sees theta), so it is zeroed before assembling."""
    from dataclasses import replace
    ones = np.ones(prob.shape)
    mat1, rhs1 = assemble_system(ones, replace(prob, load=0.0))
    return mat1 @ np.asarray(theta, dtype=float).ravel() - rhs1


def solve_adjoint(w: np.ndarray, theta: np.ndarray, prob: TopoProblem,
                  rel_tol: float = 1e-10) -> np.ndarray:
    """Adjoint field: same operator as the state, rhs = -div(grad theta),
    homogeneous Dirichlet."""
    mat, _ = assemble_system(prob.conductivity(w), prob)
    eta, _ = pcg(mat, _grad_j_theta(theta, prob), rel_tol)
    return eta


def gradient(w: np.ndarray, theta: np.ndarray, eta: np.ndarray, prob: TopoProblem) -> np.ndarray:
    """Per-cell dJ/dw (cell volume included) via the discrete adjoint.

    Interior faces chain through the harmonic mean, d k_face / d k_i =
    2 k_j^2/(k_i+k_j)^2; boundary faces contribute through their
    half-distance transmissibility.
    """
    shape = prob.shape
    th = np.asarray(theta, dtype=float).reshape(shape)
    et = np.asarray(eta, dtype=float).reshape(shape)
    k = prob.conductivity(np.asarray(w, dtype=float).reshape(shape))
    dk = prob.k_beta - prob.k_alpha
    weights = _axis_weights(prob)
    g = np.zeros(shape)
    for ax in range(prob.ndim):
        wgt = weights[ax]
        lo, hi = _face_slices(prob.ndim, ax)
        k1, k2 = k[lo], k[hi]
        dth = th[hi] - th[lo]
        det = et[hi] - et[lo]
        common = wgt * dth * det
        den = (k1 + k2) ** 2
        g[lo] -= dk * (2.0 * k2 * k2 / den) * common
        g[hi] -= dk * (2.0 * k1 * k1 / den) * common
        first, last = _end_slices(prob.ndim, ax)
        for end in (first, last):
            g[end] -= 2.0 * dk * wgt * (th[end] - prob.theta0) * et[end]
    return g.ravel()


class TopoObjective(Objective):
    """J(w) and its adjoint gradient as a counter-tracking evaluator.

    Declared caching: the state (and adjoint) fields of the most recent
    argument are kept, so grad(x) right after f(x) reuses the PDE solve.
    Counters still grow once per call.
    """

    def __init__(self, prob: TopoProblem, pcg_tol: float = 1e-10):
        super().__init__()
        self.prob = prob
        self.pcg_tol = pcg_tol
        self._w = None
        self._theta = None

    def _state_for(self, x):
        if self._w is None or not np.array_equal(self._w, x):
            self._theta = solve_state(x, self.prob, self.pcg_tol)
            self._w = x.copy()
        return self._theta

    def _f(self, x):
        return objective_value(self._state_for(x), self.prob)

    def _grad(self, x):
        theta = self._state_for(x)
        eta = solve_adjoint(x, theta, self.prob, self.pcg_tol)
        return gradient(x, theta, eta, self.prob)

    def state(self, x) -> TopoState:
        theta = self._state_for(np.asarray(x, dtype=float))
        eta = solve_adjoint(x, theta, self.prob, self.pcg_tol)
        return TopoState(w=np.asarray(x, float).copy(), theta=theta, eta=eta,
                         J=objective_value(theta, self.prob),
                         G=gradient(x, theta, eta, self.prob))


@dataclass
class TopoConfig:
    max_cycles: int = 500
    w_rel_tol: float = 1e-3     # stop when ||w_k+1 - w_k|| / ||w_k|| drops below
    pcg_tol: float = 1e-10
    proj_eps: float = DEFAULT_EPS
    driver: str = "spg"         # "spg" (default) or "asa", for experimentation


@dataclass
class TopoHistoryRow:
    cycle: int
    J: float
    rel_change: float
    volume_residual: float


@dataclass
class TopoRunResult:
    w: np.ndarray
    history: list[TopoHistoryRow] = field(default_factory=list)
    status: str = ""
    J: float = 0.0


def optimize_topology(prob: TopoProblem, w0=None, cfg: TopoConfig | None = None) -> TopoRunResult:
    """Projected-gradient loop over the volume-constrained design set.

    Stops when the relative variation of the topology between accepted
    iterates falls below w_rel_tol (or on the cycle cap).  Every iterate is
    projected, so the volume constraint holds to projection accuracy
    throughout.
    """
    cfg = cfg or TopoConfig()
    kset = topo_knapsack_set(prob)
    if w0 is None:
        w0 = np.full(prob.n_cells, prob.volume_fraction)
    w0 = project_equality(np.asarray(w0, dtype=float).ravel(), kset, cfg.proj_eps)
    objective = TopoObjective(prob, cfg.pcg_tol)

    history: list[TopoHistoryRow] = []
    state = {"prev": None}
    b = prob.volume_fraction

    def stop_test(it):
        prev = state["prev"]
        state["prev"] = it.x.copy()
        rel = np.inf
        if prev is not None:
            denom = float(np.linalg.norm(prev))
            rel = float(np.linalg.norm(it.x - prev)) / denom if denom > 0.0 else 0.0
        history.append(TopoHistoryRow(cycle=it.k, J=it.f, rel_change=rel,
                                      volume_residual=abs(float(kset.a @ it.x) - b)))
        if rel < cfg.w_rel_tol:
            return "topology_settled"
        return None

    spg_cfg = SpgConfig(tol=1e-12, max_iter=cfg.max_cycles, proj_eps=cfg.proj_eps)
    if cfg.driver == "asa":
        from .asa import AsaConfig, asa_solve
        res = asa_solve(objective, kset, w0, AsaConfig(tol=1e-12, max_cycles=20),
                        spg_cfg=spg_cfg)
        w, status, J = res.x, res.status, res.f
    else:
        res = spg_solve(objective, kset, w0, spg_cfg, stop_test=stop_test)
        w, status, J = res.x, res.status, res.f
    return TopoRunResult(w=w, history=history, status=status, J=J)


def write_w_text(w: np.ndarray, prob: TopoProblem, path) -> None:
    """Plain-text grid: one row of cells per line (2D), blocks per layer (3D)."""
    arr = np.asarray(w, dtype=float).reshape(prob.shape)
    with open(path, "w") as fh:
        if prob.ndim == 2:
            for row in arr:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        else:
            for layer in arr:
                for row in layer:
                    fh.write(" ".join(repr(float(v)) for v in row) + "\n")
                fh.write("\n")


def write_w_vtk(w: np.ndarray, prob: TopoProblem, path) -> None:
    """Legacy VTK structured-points file with w as cell data."""
    arr = np.asarray(w, dtype=float).ravel()
    # point dimensions: cells+1 along real axes, flat (1) along padded axes
    dims = [s + 1 for s in prob.shape] + [1] * (3 - prob.ndim)
    spac = list(prob.spacing) + [1.0] * (3 - prob.ndim)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("two-material layout\n")
        fh.write("ASCII\n")
        fh.write("DATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {dims[0]} {dims[1]} {dims[2]}\n")
        fh.write("ORIGIN 0 0 0\n")
        fh.write(f"SPACING {spac[0]} {spac[1]} {spac[2]}\n")
        fh.write(f"CELL_DATA {arr.size}\n")
        fh.write("SCALARS w double 1\n")
        fh.write("LOOKUP_TABLE default\n")
        for v in arr:
            fh.write(f"{float(v)!r}\n")


def write_history_csv(history: list[TopoHistoryRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cycle", "J", "rel_change", "volume_residual"])
        for r in history:
            w.writerow([r.cycle, repr(r.J), repr(r.rel_change), repr(r.volume_residual)])
