"""Command-line entry point: ``loopgauge <experiment> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 solver did not
converge (trace still written), 3 an invariant was violated.
"""

import argparse
import csv
import fcntl
import json
import logging
import math
import os
import sys
import time
from contextlib import contextmanager

import numpy as np

from . import coulomb as cs
from . import fields as fl
from . import g2
from . import loops as lp
from . import snapshot
from . import suites
from .config import EXPERIMENTS, ConfigError, load
from .constants import CONSTANTS

log = logging.getLogger("loopgauge")

EXIT_OK, EXIT_USAGE, EXIT_NO_CONVERGENCE, EXIT_INVARIANT = 0, 1, 2, 3


class OutputBusy(RuntimeError):
    pass


@contextmanager
def output_lock(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, ".lock")
    fh = open(path, "w")
    try:
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError as exc:
            raise OutputBusy(f"another run holds {path}") from exc
        yield
    finally:
        fh.close()


# ---------------------------------------------------------------------------
# deterministic writers


def _clean(obj):
    """Recursively turn numpy scalars into Python floats/ints; non-finite -> None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, obj):
    # json emits floats via repr, the shortest round-trip decimal
    text = json.dumps(_clean(obj), indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text + "\n")


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


# ---------------------------------------------------------------------------
# experiments


def _instance(cfg):
    L = lp.get_instance(cfg.instance)
    return lp.corrupted_instance(L) if cfg.corrupt_structure else L


def run_algebra_check(cfg):
    L = _instance(cfg)
    rows = suites.algebra_rows(L, suites.make_rng(cfg.seed), cfg.samples, cfg.bracket_samples)
    write_csv(os.path.join(cfg.out, "algebra_check.csv"), suites.HEADER, [r.as_list() for r in rows])
    failed = [r.name for r in rows if not r.passed]
    if failed:
        log.error("identities over threshold: %s", ", ".join(failed))
        return EXIT_INVARIANT
    return EXIT_OK


def run_exp_bench(cfg):
    L = _instance(cfg)
    rng = suites.make_rng(cfg.seed)
    rows = suites.exp_rows(L, rng, cfg.exp_draws)
    write_csv(os.path.join(cfg.out, "exp_bench.csv"), suites.HEADER, [r.as_list() for r in rows])
    s = L.random_point(rng)
    xi = rng.standard_normal(L.dim_l)
    xi *= 0.5 / np.linalg.norm(xi)
    table = suites.rk4_order_table(L, s, xi)
    lo, hi = CONSTANTS.rk4_ratio_lo, CONSTANTS.rk4_ratio_hi
    order_ok = all(lo <= r <= hi for _, _, r in table[1:])
    write_csv(
        os.path.join(cfg.out, "exp_order.csv"),
        ["step", "endpoint_error", "halving_ratio", "ratio_lo", "ratio_hi"],
        [[h, e, r, lo, hi] for h, e, r in table],
    )
    if not order_ok or not all(r.passed for r in rows):
        return EXIT_INVARIANT
    return EXIT_OK


def _solve_payload(cfg, report):
    d = report.to_dict()
    d.pop("wall_time", None)  # keeps reports byte-identical across runs
    conf = cfg.to_dict()
    conf.pop("out")
    return {"config": conf, "report": d}


def _write_trace_csv(cfg, report):
    keys = ["iter", "G", "xi", "damping", "inner_iters", "inner_method"]
    write_csv(os.path.join(cfg.out, "trace.csv"), keys, [[t[k] for k in keys] for t in report.trace])


def _write_norms(cfg, L, grid, omega, T0, T1, xi):
    reps = []
    for chi, lead in ((T0, 1), (T1, 1), (xi, 0)):
        reps.append(fl.sobolev_norm(L, grid, omega, chi, lead, cfg.k - 1 if lead else cfg.k, cfg.r))
    rows = []
    for label, rep in zip(("torsion_initial", "torsion_final", "xi"), reps):
        rows += [[label, row["k"], row["r"], row["j"], row["lr"]] for row in rep.rows()]
    write_csv(os.path.join(cfg.out, "norms.csv"), ["field", "k", "r", "j", "value"], rows)


def _problem(cfg, L):
    grid = fl.TorusGrid.periodic(cfg.grid)
    xi0 = cs.perturbation_field(grid, cfg.seed, cfg.eps, ncomp=L.dim_l, nmodes=cfg.nmodes, kmax=cfg.kmax)
    s = L.mul(L.exp(xi0), L.one(grid.sizes))
    return cs.GaugeProblem(L, grid, s, None, tol_outer=cfg.tol_outer, max_steps=cfg.max_steps,
                           cg_max_iter=cfg.cg_max_iter, k=cfg.k, r=cfg.r, residual=cfg.residual)


def run_coulomb_solve(cfg):
    L = _instance(cfg)
    problem = _problem(cfg, L)
    grid = problem.grid
    T0 = cs.initial_torsion(problem)
    snapshot.write(os.path.join(cfg.out, "section_initial.lgf"), problem.s, snapshot.Kind.SECTION)
    snapshot.write(os.path.join(cfg.out, "torsion_initial.lgf"), T0, snapshot.Kind.ONE_FORM)
    try:
        xi, A, report = cs.newton_solve(problem)
    except cs.NoConvergence as exc:
        write_json(os.path.join(cfg.out, "report.json"), _solve_payload(cfg, exc.report))
        _write_trace_csv(cfg, exc.report)
        log.error("%s", exc)
        return EXIT_NO_CONVERGENCE
    s1 = L.mul(A, problem.s)
    T1 = fl.torsion(L, grid, s1)
    snapshot.write(os.path.join(cfg.out, "section_final.lgf"), s1, snapshot.Kind.SECTION)
    snapshot.write(os.path.join(cfg.out, "torsion_final.lgf"), T1, snapshot.Kind.ONE_FORM)
    snapshot.write(os.path.join(cfg.out, "xi.lgf"), xi, snapshot.Kind.ZERO_FORM)
    write_json(os.path.join(cfg.out, "report.json"), _solve_payload(cfg, report))
    _write_trace_csv(cfg, report)
    _write_norms(cfg, L, grid, None, T0, T1, xi)
    log.info("converged in %d steps, |G| = %.3e, %.1f s", report.iterations, report.final_G, report.wall_time)
    return EXIT_OK


def run_g2_solve(cfg):
    L = _instance(cfg)
    problem = _problem(cfg, L)
    grid, V0 = problem.grid, problem.s
    phi0 = g2.sigma_A(g2.PHI0, V0)
    snapshot.write(os.path.join(cfg.out, "phi_initial.lgf"), phi0, snapshot.Kind.THREE_FORM)
    try:
        V, xi, report, summary = g2.g2_coulomb_solve(
            grid, V0, tol_outer=cfg.tol_outer, max_steps=cfg.max_steps, cg_max_iter=cfg.cg_max_iter,
            k=cfg.k, r=cfg.r, residual=cfg.residual,
        )
    except cs.NoConvergence as exc:
        write_json(os.path.join(cfg.out, "report.json"), _solve_payload(cfg, exc.report))
        _write_trace_csv(cfg, exc.report)
        log.error("%s", exc)
        return EXIT_NO_CONVERGENCE
    snapshot.write(os.path.join(cfg.out, "section_final.lgf"), V, snapshot.Kind.SECTION)
    snapshot.write(os.path.join(cfg.out, "phi_final.lgf"), g2.sigma_A(g2.PHI0, V), snapshot.Kind.THREE_FORM)
    payload = _solve_payload(cfg, report)
    payload["g2"] = summary
    write_json(os.path.join(cfg.out, "report.json"), payload)
    _write_trace_csv(cfg, report)
    write_csv(
        os.path.join(cfg.out, "g2_checks.csv"),
        ["check", "value", "threshold", "status"],
        [
            ["div_torsion_g2", summary["div_g2"], CONSTANTS.g2_div_tol,
             "pass" if summary["div_g2"] < CONSTANTS.g2_div_tol else "fail"],
            ["dual_pipeline", summary["dual_pipeline"], CONSTANTS.g2_div_tol,
             "pass" if summary["dual_pipeline"] < CONSTANTS.g2_div_tol else "fail"],
        ],
    )
    if summary["div_g2"] >= CONSTANTS.g2_div_tol:
        return EXIT_INVARIANT
    return EXIT_OK


RUNNERS = {
    "algebra-check": run_algebra_check,
    "exp-bench": run_exp_bench,
    "coulomb-solve": run_coulomb_solve,
    "g2-solve": run_g2_solve,
}


def build_parser():
    p = argparse.ArgumentParser(prog="loopgauge", description="Loop gauge-theory experiments.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="JSON file with RunConfig fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (one run at a time)")
    p.add_argument("--grid", help="grid sizes, e.g. 64x64")
    p.add_argument("--eps", type=float, help="perturbation amplitude")
    p.add_argument("--instance", choices=("octonion", "quaternion"))
    p.add_argument("--residual", choices=("map", "direct"))
    p.add_argument("--corrupt-structure", action="store_true", default=None, help=argparse.SUPPRESS)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    overrides = {"seed": args.seed, "out": args.out, "grid": args.grid, "eps": args.eps,
                 "instance": args.instance, "residual": args.residual,
                 "corrupt_structure": args.corrupt_structure}
    try:
        cfg = load(args.experiment, args.config, overrides)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_USAGE
    try:
        with output_lock(cfg.out):
            write_json(os.path.join(cfg.out, "config.json"), cfg.to_dict())
            t0 = time.perf_counter()
            code = RUNNERS[cfg.experiment](cfg)
            log.info("%s finished with exit %d in %.1f s", cfg.experiment, code, time.perf_counter() - t0)
            return code
    except OutputBusy as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (cs.KernelDriftError, ArithmeticError, ValueError) as exc:
        log.error("invariant violated: %s", exc)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
