"""Benchmark harness: generate or load a system, run solvers, write histories.

    nscraig run --problem oseen --grid 12 --solver nscraig --tol 1e-3 --out runs/a
    nscraig compare --problem synthetic --m 200 --n 20 --seed 3 --out runs/cmp
    nscraig generate --problem oseen --grid 8 --out systems/oseen8
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .baselines import (
    BlockPreconditionedSystem,
    FomBreakdownError,
    MemoryBudgetError,
    SchurOperator,
    compute_restart_kmax,
    fom_solve,
    gmres_solve,
    memory_estimate,
)
from .gkb import Criterion, SolverConfig, nscraig_solve
from .linalg import FactorizationError, apply_inverse, factorize, spmv
from .mmio import save_system
from .problems import ProblemSpec, SaddleSystem, make_system

log = logging.getLogger("nscraig")

EXIT_OK = 0
EXIT_NOT_CONVERGED = 1
EXIT_USAGE = 2
EXIT_BREAKDOWN = 3

_FLOAT = "{:.17g}".format


@dataclass
class RunRecord:
    solver: str
    problem_digest: str
    problem: dict
    config: dict
    report: dict
    wall_time: float
    history: dict = field(default_factory=dict, repr=False)

    def summary(self) -> dict:
        out = asdict(self)
        out.pop("history")
        return out


def _positive_float(text: str) -> float:
    val = float(text)
    if not val > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return val


def _positive_int(text: str) -> int:
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return val


def _restart(text: str):
    if text in ("none", "auto"):
        return text
    try:
        return _positive_int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected none, auto or a positive integer, got {text!r}") from None


def _add_problem_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--problem", choices=["synthetic", "oseen", "file"], default="synthetic")
    p.add_argument("--m", type=_positive_int, default=60)
    p.add_argument("--n", type=_positive_int, default=20)
    p.add_argument("--grid", type=int, default=12)
    p.add_argument("--nu", type=_positive_float, default=0.01)
    p.add_argument("--wind-x", type=float, default=1.0)
    p.add_argument("--wind-y", type=float, default=0.5)
    p.add_argument("--skew-scale", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--path", type=str, default=None)
    p.add_argument("--out", type=Path, required=True)


def _add_solver_flags(p: argparse.ArgumentParser, with_solver: bool) -> None:
    if with_solver:
        p.add_argument("--solver", choices=["nscraig", "fom", "gmres"], default="nscraig")
    p.add_argument("--tol", type=_positive_float, default=1e-3)
    p.add_argument("--maxit", type=_positive_int, default=None)
    p.add_argument("--stop", choices=["residual", "error"], default="residual")
    p.add_argument("--delay", type=_positive_int, default=5)
    p.add_argument("--orthogonalization", choices=["mgs", "mgs_twice"], default="mgs")
    p.add_argument("--restart", type=_restart, default="none")
    p.add_argument("--validate", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nscraig", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one solver on one system")
    _add_problem_flags(run)
    _add_solver_flags(run, with_solver=True)
    cmp_ = sub.add_parser("compare", help="nsCRAIG vs FOM vs GMRES (full and memory-matched)")
    _add_problem_flags(cmp_)
    _add_solver_flags(cmp_, with_solver=False)
    gen = sub.add_parser("generate", help="write a system directory in Matrix Market format")
    _add_problem_flags(gen)
    return parser


def spec_from_args(args) -> ProblemSpec:
    kind = {"oseen": "oseen_fd"}.get(args.problem, args.problem)
    return ProblemSpec(kind=kind, m=args.m, n=args.n, grid=args.grid, seed=args.seed, nu=args.nu,
                       wind=(args.wind_x, args.wind_y), skew_scale=args.skew_scale, path=args.path)


def _true_residuals(system: SaddleSystem, u, p) -> dict:
    r1, r2 = system.residuals(u, p)
    bn = float(np.linalg.norm(system.b))
    return {"residual_primal": r1, "residual_constraint": r2, "rhs_norm": bn,
            "relative_residual": float(np.hypot(r1, r2) / bn)}


def run_nscraig(system: SaddleSystem, fact, args) -> RunRecord:
    cfg = SolverConfig(tol=args.tol, maxit=args.maxit or system.n,
                       criterion=Criterion.ERROR_ESTIMATE if args.stop == "error" else Criterion.RESIDUAL,
                       delay_d=args.delay, orthogonalization=args.orthogonalization,
                       validate=args.validate)
    t0 = time.perf_counter()
    rep = nscraig_solve(system.M, system.A, system.b, cfg, fact=fact)
    wall = time.perf_counter() - t0
    hist = {"rel_residual": list(rep.relative_residual_history)}
    if rep.explicit_residual_history is not None:
        hist["rel_residual_explicit"] = list(rep.explicit_residual_history / rep.rhs_norm)
    if cfg.criterion is Criterion.ERROR_ESTIMATE or cfg.validate:
        # the estimate refers to iterate k - d and exists from iteration d on
        est = [None] * (cfg.delay_d - 1) + list(rep.error_estimate_history)
        hist["error_estimate"] = est[: rep.iterations]
    report = {
        "termination": rep.termination.value,
        "iterations": rep.iterations,
        "memory_estimate": rep.memory_estimate,
        "lucky_breakdown": rep.lucky_breakdown,
        "negative_estimate": rep.negative_estimate,
        "message": rep.message,
        **_true_residuals(system, rep.u, rep.p),
    }
    config = {k: (v.value if hasattr(v, "value") else v) for k, v in asdict(cfg).items()}
    return RunRecord("nscraig", _digest(system), _problem(system), config, report, wall, hist)


def run_fom(system: SaddleSystem, fact, args) -> RunRecord:
    maxit = args.maxit or system.n
    t0 = time.perf_counter()
    try:
        res = fom_solve(SchurOperator(system.A, fact), -system.b, args.tol, maxit)
    except FomBreakdownError as exc:
        report = {"termination": "breakdown", "iterations": exc.step, "message": str(exc)}
        return RunRecord("fom", _digest(system), _problem(system), {"tol": args.tol, "maxit": maxit},
                         report, time.perf_counter() - t0, {"rel_residual": []})
    wall = time.perf_counter() - t0
    u = -apply_inverse(fact, spmv(system.A, res.p))
    bn = float(np.linalg.norm(system.b))
    report = {
        "termination": "converged" if res.converged else "maxit_reached",
        "iterations": res.iterations,
        "memory_estimate": memory_estimate("fom", res.iterations, system.m, system.n),
        **_true_residuals(system, u, res.p),
    }
    return RunRecord("fom", _digest(system), _problem(system), {"tol": args.tol, "maxit": maxit},
                     report, wall, {"rel_residual": list(res.history / bn)})


def run_gmres(system: SaddleSystem, fact, args, restart: int | None, label: str = "gmres",
              extra: dict | None = None) -> RunRecord:
    maxit = args.maxit or 20 * (system.m + system.n)
    bps = BlockPreconditionedSystem(system.M, system.A, fact, system.b)
    t0 = time.perf_counter()
    res = gmres_solve(bps, args.tol, maxit, restart)
    wall = time.perf_counter() - t0
    bn = float(np.linalg.norm(system.b))
    kmem = restart if restart is not None else res.iterations
    report = {
        "termination": res.termination.value,
        "iterations": res.iterations,
        "restart": restart,
        "cycles": res.cycles,
        "memory_estimate": memory_estimate("gmres", kmem, system.m, system.n),
        "max_basis_scalars": res.max_basis_scalars,
        **(extra or {}),
        **_true_residuals(system, res.u, res.p),
    }
    config = {"tol": args.tol, "maxit": maxit, "restart": restart}
    return RunRecord(label, _digest(system), _problem(system), config, report, wall,
                     {"rel_residual": list(res.history / bn)})


def _digest(system: SaddleSystem) -> str:
    return system.spec.digest() if system.spec is not None else "unknown"


def _problem(system: SaddleSystem) -> dict:
    base = system.spec.to_json() if system.spec is not None else {}
    return {**base, "m": system.m, "n": system.n}


def write_history_csv(path: Path, records: list[RunRecord], with_solver: bool) -> None:
    cols: list[str] = []
    for rec in records:
        cols.extend(c for c in rec.history if c not in cols)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow((["solver"] if with_solver else []) + ["iter"] + cols)
        for rec in records:
            n = len(rec.history.get("rel_residual", []))
            for i in range(n):
                row = [rec.solver] if with_solver else []
                row.append(i + 1)
                for c in cols:
                    vals = rec.history.get(c)
                    v = vals[i] if vals is not None and i < len(vals) else None
                    row.append("" if v is None else _FLOAT(v))
                w.writerow(row)


def _exit_code(termination: str) -> int:
    if termination == "converged":
        return EXIT_OK
    if termination == "breakdown":
        return EXIT_BREAKDOWN
    return EXIT_NOT_CONVERGED


def _paired_restart(system, fact, args) -> tuple[int, int]:
    paired = run_nscraig(system, fact, args)
    iters = paired.report["iterations"]
    return compute_restart_kmax(iters, system.m, system.n), iters


def cmd_run(args) -> int:
    system = make_system(spec_from_args(args))
    fact = factorize(system.M)
    if args.solver == "nscraig":
        rec = run_nscraig(system, fact, args)
    elif args.solver == "fom":
        rec = run_fom(system, fact, args)
    else:
        restart, extra = None, {}
        if args.restart == "auto":
            restart, iters = _paired_restart(system, fact, args)
            extra = {"paired_nscraig_iterations": iters}
        elif args.restart != "none":
            restart = args.restart
        rec = run_gmres(system, fact, args, restart, extra=extra)
    args.out.mkdir(parents=True, exist_ok=True)
    write_history_csv(args.out / "history.csv", [rec], with_solver=False)
    (args.out / "summary.json").write_text(json.dumps(rec.summary(), indent=2, default=_jsonable))
    print(f"{rec.solver}: {rec.report['termination']} after {rec.report['iterations']} iterations "
          f"(relative residual {rec.report.get('relative_residual', float('nan')):.3e})")
    return _exit_code(rec.report["termination"])


def cmd_compare(args) -> int:
    system = make_system(spec_from_args(args))
    fact = factorize(system.M)
    records: list[RunRecord] = []
    craig = run_nscraig(system, fact, args)
    records.append(craig)
    for label, fn in (("fom", lambda: run_fom(system, fact, args)),
                      ("gmres", lambda: run_gmres(system, fact, args, None))):
        try:
            records.append(fn())
        except Exception as exc:  # recorded per solver, compare carries on
            log.error("%s failed: %s", label, exc)
            records.append(RunRecord(label, _digest(system), _problem(system), {},
                                     {"termination": "error", "message": str(exc)}, 0.0))
    try:
        kmax = compute_restart_kmax(craig.report["iterations"], system.m, system.n)
        records.append(run_gmres(system, fact, args, kmax, label="gmres_restarted",
                                 extra={"paired_nscraig_iterations": craig.report["iterations"]}))
    except (MemoryBudgetError, ValueError) as exc:
        log.error("gmres_restarted skipped: %s", exc)
        records.append(RunRecord("gmres_restarted", _digest(system), _problem(system), {},
                                 {"termination": "error", "message": str(exc)}, 0.0))

    base_mem = craig.report["memory_estimate"]
    table = []
    for rec in records:
        mem = rec.report.get("memory_estimate")
        table.append({
            "solver": rec.solver,
            "termination": rec.report.get("termination"),
            "iterations": rec.report.get("iterations"),
            "memory_estimate": mem,
            "memory_ratio": (mem / base_mem) if mem is not None else None,
            "relative_residual": rec.report.get("relative_residual"),
        })
    args.out.mkdir(parents=True, exist_ok=True)
    write_history_csv(args.out / "histories.csv", records, with_solver=True)
    with open(args.out / "comparison.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(table[0]))
        w.writeheader()
        w.writerows(table)
    (args.out / "comparison.json").write_text(json.dumps(
        {"problem": _problem(system), "problem_digest": _digest(system),
         "table": table, "runs": [r.summary() for r in records]}, indent=2, default=_jsonable))

    print(f"{'solver':<16}{'termination':<15}{'iters':>7}{'memory':>10}{'ratio':>8}")
    for row in table:
        ratio = "" if row["memory_ratio"] is None else f"{row['memory_ratio']:.2f}"
        print(f"{row['solver']:<16}{str(row['termination']):<15}{str(row['iterations']):>7}"
              f"{str(row['memory_estimate']):>10}{ratio:>8}")
    return _exit_code(craig.report["termination"])


def cmd_generate(args) -> int:
    spec = spec_from_args(args)
    system = make_system(spec)
    save_system(args.out, system)
    print(f"wrote {spec.kind} system m={system.m} n={system.n} to {args.out}")
    return EXIT_OK


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.problem == "file" and not args.path:
        parser.error("--problem file requires --path")
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "compare":
            return cmd_compare(args)
        return cmd_generate(args)
    except (ValueError, FactorizationError, OSError) as exc:
        print(f"nscraig: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
