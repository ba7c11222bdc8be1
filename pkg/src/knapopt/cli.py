"""Command-line front end.

Subcommands: project (exact projection of a point), solve (active-set
solver on a problem file), gen (emit random problem files), topopt
(two-material conductor demo), bench (projection timing sweeps).  Results
go to stdout (or --out) as JSON/CSV with full round-trip float precision;
human logs go to stderr, controlled by KNAPSACK_LOG in {error, info,
debug}.  Exit codes: 0 success, 1 solver failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import statistics
import sys
import time

import numpy as np

from . import __version__
from .asa import AsaConfig, asa_solve, solve_interval_by_three, write_phase_csv
from .rcgd import RcgdConfig
from .spg import SpgConfig
from .problems import (ProjectionObjective, make_random_qp, qp_from_json,
                       random_knapsack_set, rng_from_seed)
from .projection import DEFAULT_EPS, find_multiplier, project_info
from .sets import Equality, Interval, KnapsackSet
from .topopt import (TopoConfig, TopoProblem, optimize_topology,
                     write_history_csv, write_w_text, write_w_vtk)

log = logging.getLogger("knapopt")


class InputDataError(ValueError):
    """Malformed input file or field; reported with exit code 2."""


def _setup_logging():
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("KNAPSACK_LOG", "error").lower(), logging.ERROR)
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InputDataError(f"cannot open '{path}'")
    except json.JSONDecodeError as e:
        raise InputDataError(f"'{path}' is not valid JSON: {e}")


def _set_from_file(path) -> KnapsackSet:
    d = _load_json(path)
    try:
        return KnapsackSet.from_json(d)
    except (ValueError, TypeError) as e:
        raise InputDataError(f"'{path}': {e}")


def _vector_from_file(path, key="y") -> np.ndarray:
    d = _load_json(path)
    if isinstance(d, dict):
        if key not in d:
            raise InputDataError(f"'{path}': missing field '{key}'")
        d = d[key]
    try:
        return np.asarray(d, dtype=float)
    except (ValueError, TypeError):
        raise InputDataError(f"'{path}': field '{key}' is not a numeric vector")


def _emit(payload, out_path):
    text = json.dumps(payload, sort_keys=True)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _floats(x):
    return [float(v) for v in np.asarray(x).ravel()]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_project(args):
    kset = _set_from_file(args.set)
    y = _vector_from_file(args.point, "y")
    res = project_info(y, kset, eps=args.eps)
    _emit({"z": _floats(res.z), "lambda": res.lam, "evals": res.evals,
           "config": {"eps": args.eps}}, args.out)
    return 0


def _objective_from_problem(d, path):
    kind = d.get("kind")
    if kind == "qp":
        try:
            qp = qp_from_json(d)
        except ValueError as e:
            raise InputDataError(f"'{path}': {e}")
        return qp.objective(), qp.kset
    if kind == "projection":
        if "y" not in d or "set" not in d:
            raise InputDataError(f"'{path}': projection problems need fields 'y' and 'set'")
        try:
            kset = KnapsackSet.from_json(d["set"])
        except ValueError as e:
            raise InputDataError(f"'{path}': {e}")
        return ProjectionObjective(np.asarray(d["y"], dtype=float)), kset
    raise InputDataError(f"'{path}': field 'kind' must be 'qp' or 'projection'")


def _cmd_solve(args):
    d = _load_json(args.problem)
    objective, kset = _objective_from_problem(d, args.problem)
    cfg_d = _load_json(args.config) if args.config else {}
    cfg_kwargs = {k: cfg_d[k] for k in ("exp_a", "exp_b", "mu", "repeat_limit",
                                        "tol", "max_cycles", "u_norm") if k in cfg_d}
    if args.tol is not None:
        cfg_kwargs["tol"] = args.tol          # flags beat the config file
    if args.max_cycles is not None:
        cfg_kwargs["max_cycles"] = args.max_cycles
    cfg = AsaConfig(**cfg_kwargs)

    mode = args.mode
    if mode == "auto":
        mode = "interval" if isinstance(kset.rhs, Interval) else "equality"
    if mode == "equality" and not isinstance(kset.rhs, Equality):
        raise InputDataError("mode 'equality' needs an equality rhs in the problem set")
    if mode in ("interval", "three") and not isinstance(kset.rhs, Interval):
        raise InputDataError(f"mode '{mode}' needs an interval rhs in the problem set")

    x0 = np.asarray(d["x0"], dtype=float) if "x0" in d else 0.5 * (kset.l + kset.u)
    eff = cfg.to_dict()
    eff["spg"] = SpgConfig(tol=cfg.tol).to_dict()
    eff["rcgd"] = RcgdConfig(tol=cfg.mu * cfg.tol).to_dict()
    payload = {"config": eff, "mode": mode}
    if mode == "three":
        res3 = solve_interval_by_three(objective, kset, x0, cfg)
        payload.update({"x": _floats(res3.x), "f": res3.f, "which_face": res3.which,
                        "status": "converged" if all(r.status == "converged" for r in res3.results)
                                  else res3.results[-1].status,
                        "cycles": sum(r.cycles for r in res3.results)})
        phases = [p for r in res3.results for p in r.phases]
    else:
        res = asa_solve(objective, kset, x0, cfg)
        payload.update({"x": _floats(res.x), "f": res.f, "status": res.status,
                        "cycles": res.cycles})
        phases = res.phases
    if args.trace:
        write_phase_csv(phases, args.trace)
    _emit(payload, args.out)
    return 0 if payload["status"] in ("converged",) else 1


def _cmd_gen(args):
    if args.kind == "qp":
        qp = make_random_qp(args.n, args.seed, kind=args.hessian, set_kind=args.set_kind)
        d = qp.to_json()
    elif args.kind == "projection":
        rng = rng_from_seed(args.seed)
        kset = random_knapsack_set(args.n, rng, args.set_kind)
        y = rng.uniform(-3.0, 3.0, args.n)
        d = {"kind": "projection", "y": _floats(y), "set": kset.to_json(), "seed": args.seed}
    else:
        raise InputDataError("gen: --kind must be 'qp' or 'projection'")
    _emit(d, args.out)
    return 0


def _cmd_topopt(args):
    shape = (args.grid,) * args.dim
    prob = TopoProblem(shape=shape, k_alpha=args.kalpha, k_beta=args.kbeta,
                       load=args.load, volume_fraction=args.R)
    cfg = TopoConfig(max_cycles=args.maxiter)
    log.info("topology run on %s grid, R=%.3f", "x".join(map(str, shape)), args.R)
    res = optimize_topology(prob, cfg=cfg)
    prefix = args.out_prefix
    write_w_text(res.w, prob, f"{prefix}_w.txt")
    write_w_vtk(res.w, prob, f"{prefix}_w.vtk")
    write_history_csv(res.history, f"{prefix}_history.csv")
    vol = float(np.full(prob.n_cells, prob.cell_volume) @ res.w)
    _emit({"J": res.J, "cycles": len(res.history), "status": res.status,
           "volume": vol, "files": [f"{prefix}_w.txt", f"{prefix}_w.vtk",
                                    f"{prefix}_history.csv"],
           "config": {"grid": args.grid, "dim": args.dim, "R": args.R,
                      "kalpha": args.kalpha, "kbeta": args.kbeta,
                      "maxiter": args.maxiter}}, args.out)
    return 0


def _bench_projection_once(n, seed):
    rng = rng_from_seed(seed)
    kset = random_knapsack_set(n, rng, "equality")
    y = rng.uniform(-3.0, 3.0, n)
    t0 = time.perf_counter_ns()
    _, evals = find_multiplier(y, kset)
    dt = time.perf_counter_ns() - t0
    return dt, evals


def _cmd_bench(args):
    if args.suite != "projection":
        raise InputDataError("bench: only the 'projection' suite is available")
    sizes = []
    for tok in args.sizes.split(","):
        try:
            sizes.append(int(float(tok)))
        except ValueError:
            raise InputDataError(f"bench: bad size '{tok}' in --sizes")
    lines = ["n,median_ns,evals"]
    for n in sizes:
        seeds = [args.seed + 1000 * i for i in range(args.reps)]
        if args.jobs > 1:
            from concurrent.futures import ProcessPoolExecutor
            with ProcessPoolExecutor(max_workers=args.jobs) as ex:
                results = list(ex.map(_bench_projection_once, [n] * len(seeds), seeds))
        else:
            results = [_bench_projection_once(n, s) for s in seeds]
        med_ns = int(statistics.median(r[0] for r in results))
        med_ev = statistics.median(r[1] for r in results)
        lines.append(f"{n},{med_ns},{med_ev}")
        log.info("bench n=%d median %.3f ms", n, med_ns / 1e6)
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------

def _build_parser():
    p = argparse.ArgumentParser(prog="knapopt",
                                description="solvers over continuous-knapsack sets")
    p.add_argument("--version", action="version", version=f"knapopt {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    pp = sub.add_parser("project", help="project a point onto a knapsack set")
    pp.add_argument("--set", required=True, help="KnapsackSet JSON file")
    pp.add_argument("--point", required=True, help="JSON file with the point y")
    pp.add_argument("--eps", type=float, default=DEFAULT_EPS)
    pp.add_argument("--out")
    pp.set_defaults(func=_cmd_project)

    ps = sub.add_parser("solve", help="run the active-set solver on a problem file")
    ps.add_argument("--problem", required=True)
    ps.add_argument("--mode", choices=["auto", "equality", "interval", "three"], default="auto")
    ps.add_argument("--tol", type=float, default=None)
    ps.add_argument("--max-cycles", type=int, default=None, dest="max_cycles")
    ps.add_argument("--trace", help="write the phase trace CSV here")
    ps.add_argument("--config", help="JSON file with AsaConfig overrides")
    ps.add_argument("--out")
    ps.set_defaults(func=_cmd_solve)

    pg = sub.add_parser("gen", help="emit a random problem file")
    pg.add_argument("--kind", choices=["qp", "projection"], default="qp")
    pg.add_argument("--n", type=int, required=True)
    pg.add_argument("--seed", type=int, required=True)
    pg.add_argument("--set-kind", choices=["equality", "interval"], default="equality",
                    dest="set_kind")
    pg.add_argument("--hessian", choices=["dense_spd", "diagonal"], default="dense_spd")
    pg.add_argument("--out")
    pg.set_defaults(func=_cmd_gen)

    pt = sub.add_parser("topopt", help="two-material conductor demo")
    pt.add_argument("--grid", type=int, default=64)
    pt.add_argument("--dim", type=int, choices=[2, 3], default=2)
    pt.add_argument("--R", type=float, default=0.4)
    pt.add_argument("--kalpha", type=float, default=1.0)
    pt.add_argument("--kbeta", type=float, default=2.0)
    pt.add_argument("--load", type=float, default=1.0)
    pt.add_argument("--maxiter", type=int, default=500)
    pt.add_argument("--out-prefix", default="topopt", dest="out_prefix")
    pt.add_argument("--out")
    pt.set_defaults(func=_cmd_topopt)

    pb = sub.add_parser("bench", help="projection timing sweep")
    pb.add_argument("--suite", default="projection")
    pb.add_argument("--sizes", default="1e3,1e4,1e5")
    pb.add_argument("--seed", type=int, default=7)
    pb.add_argument("--reps", type=int, default=11)
    pb.add_argument("--jobs", type=int, default=1)
    pb.add_argument("--out")
    pb.set_defaults(func=_cmd_bench)
    return p


def main(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except InputDataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # solver-level failure
        log.debug("failure", exc_info=True)
        print(f"solver error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
