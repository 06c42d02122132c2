"""Command-line entry point ``uotkit``.

Exit codes: 0 on success, 1 on invalid input or usage, 2 when a solver
diverges.
"""

import argparse
import os
import sys

import numba
import numpy as np

from . import __version__
from .color import color_transfer, read_image, write_image
from .core import uot_objective
from .exceptions import DivergenceError, UOTError, ValidationError
from .experiments import ExperimentConfig, generate_synthetic, random_simplex_problem
from .io import load_problem, save_problem, write_json_report, write_plan_csv, write_rows_csv
from .oracle import tau_scaling_study, theorem2_check, theorem4_check
from .rounding import gem_ot
from .solvers import GemConfig, gem_ruot, gem_uot, sinkhorn_uot

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_DIVERGED = 2

BOUND_COLUMNS = ["tau", "empirical", "bound", "satisfied"]
TRACE_COLUMNS = ["iter", "f", "g_eta", "dual_gap", "marginal_gap"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_INVALID)


def _float_list(text):
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _eta(text):
    if text == "auto":
        return None
    try:
        return float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"--eta must be 'auto' or a number, got {text!r}") from exc


def _problem_from_args(args):
    if getattr(args, "problem", None):
        problem = load_problem(args.problem)
    else:
        problem = generate_synthetic(ExperimentConfig(seed=args.seed, n=args.n))
    if getattr(args, "tau", None) is not None:
        problem = problem.with_tau(args.tau)
    return problem


def _simplex_problem(args):
    if args.problem:
        return load_problem(args.problem)
    return random_simplex_problem(args.n, 1.0, args.seed)


def _cmd_generate(args):
    cfg = ExperimentConfig(seed=args.seed, n=args.n, alpha=args.alpha, beta=args.beta, tau=args.tau)
    save_problem(args.out, generate_synthetic(cfg))
    return EXIT_OK


def _cmd_solve(args):
    problem = _problem_from_args(args)
    record = args.trace is not None
    extra = {}
    if args.solver in ("gem-uot", "gem-ruot"):
        cfg = GemConfig(epsilon=args.epsilon, eta=args.eta, max_iters=args.max_iters,
                        gap_tol=args.gap_tol, record_trace=record, use_budget=not args.no_budget)
        if args.solver == "gem-uot":
            plan, report = gem_uot(problem, cfg)
        else:
            value, plan, report = gem_ruot(problem, cfg)
            extra["distance_estimate"] = value
    else:
        eta = args.eta if args.eta is not None else args.epsilon / 2.0
        tol = args.gap_tol if args.gap_tol is not None else 1e-9
        plan, report = sinkhorn_uot(problem, eta, epsilon=tol, max_iters=args.max_iters,
                                    record_trace=record)
    write_plan_csv(args.plan, plan.entries)
    d = report.to_dict()
    d["duality_gap_final"] = report.duality_gap_trace[-1] if report.duality_gap_trace else None
    d.pop("duality_gap_trace")
    d["sparsity"] = plan.sparsity(1e-10)
    d.update(extra)
    write_json_report(args.report, d)
    if record:
        write_rows_csv(args.trace, TRACE_COLUMNS, report.trace)
    return EXIT_OK


def _cmd_retrieve_ot(args):
    problem = load_problem(args.problem)
    Y, report = gem_ot(problem.cost, problem.a, problem.b, args.epsilon, max_iters=args.max_iters)
    write_plan_csv(args.plan, Y.entries)
    write_json_report(args.report, report.to_dict())
    return EXIT_OK


def _cmd_check(args, fn):
    problem = _simplex_problem(args)
    reports = fn(problem, args.taus)
    write_rows_csv(args.out, BOUND_COLUMNS, [r.as_row() for r in reports])
    bad = sum(not r.as_row()["satisfied"] for r in reports)
    print(f"{len(reports) - bad}/{len(reports)} grid points satisfied -> {args.out}")
    return EXIT_OK


def _cmd_tau_study(args):
    problem = _problem_from_args(args)
    study = tau_scaling_study(problem, args.taus, args.epsilon, sinkhorn_eta=args.sinkhorn_eta,
                              sinkhorn_max_iters=args.sinkhorn_max_iters,
                              gem_max_iters=args.max_iters)
    rows = [{"tau": r.tau, "solver": r.solver, "iterations": r.iterations, "censored": r.censored}
            for r in study.rows]
    write_rows_csv(args.out, ["tau", "solver", "iterations", "censored"], rows)
    write_json_report(args.report, {"epsilon": study.epsilon, "sinkhorn_eta": study.sinkhorn_eta,
                                    "fits": study.fits})
    for solver, fit in study.fits.items():
        print(f"{solver}: log R^2={fit['log_r2']}, linear R^2={fit['linear_r2']}")
    return EXIT_OK


def _cmd_color_transfer(args):
    src = read_image(args.src)
    dst = read_image(args.dst)
    res = color_transfer(src, dst, n=args.n, solver=args.solver, tau=args.tau,
                         epsilon=args.epsilon, eta=args.eta, seed=args.seed,
                         max_iters=args.max_iters)
    write_image(args.out, res.image)
    write_json_report(args.report, {
        "solver": args.solver,
        "n": args.n,
        "tau": res.tau,
        "sparsity": res.sparsity,
        "sparsity_threshold": 1e-10,
        "iterations": res.report.iterations,
        "stop_reason": res.report.stop_reason.value,
    })
    return EXIT_OK


def _cmd_sparsity(args):
    rows = []
    for k in range(args.instances):
        problem = generate_synthetic(ExperimentConfig(seed=args.seed + k, n=args.n, tau=args.tau))
        plan_g, _ = gem_uot(problem, GemConfig(epsilon=args.epsilon, max_iters=args.max_iters))
        plan_s, _ = sinkhorn_uot(problem, args.epsilon / 2.0, epsilon=1e-9, max_iters=args.max_iters)
        rows.append({
            "seed": args.seed + k,
            "gem_sparsity": plan_g.sparsity(1e-10),
            "sinkhorn_sparsity": plan_s.sparsity(1e-10),
            "gem_f": uot_objective(problem, plan_g),
            "sinkhorn_f": uot_objective(problem, plan_s),
        })
    write_rows_csv(args.out, ["seed", "gem_sparsity", "sinkhorn_sparsity", "gem_f", "sinkhorn_f"], rows)
    return EXIT_OK


def build_parser():
    p = _Parser(prog="uotkit", description="Unbalanced optimal transport solvers and studies.")
    p.add_argument("--version", action="version", version=f"uotkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic problem JSON")
    g.add_argument("--n", type=int, default=200)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--alpha", type=float, default=4.0)
    g.add_argument("--beta", type=float, default=5.0)
    g.add_argument("--tau", type=float, default=55.0)
    g.add_argument("--out", default="problem.json")
    g.set_defaults(func=_cmd_generate)

    s = sub.add_parser("solve", help="solve a UOT problem")
    s.add_argument("--problem", help="problem JSON; a synthetic instance is generated if omitted")
    s.add_argument("--n", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--solver", choices=["gem-uot", "gem-ruot", "sinkhorn"], default="gem-uot")
    s.add_argument("--tau", type=float)
    s.add_argument("--eta", type=_eta, default=None)
    s.add_argument("--epsilon", type=float, default=1e-2)
    s.add_argument("--max-iters", type=int, default=200_000)
    s.add_argument("--gap-tol", type=float)
    s.add_argument("--no-budget", action="store_true", help="ignore the theoretical iteration budget")
    s.add_argument("--trace")
    s.add_argument("--plan", default="plan.csv")
    s.add_argument("--report", default="report.json")
    s.set_defaults(func=_cmd_solve)

    r = sub.add_parser("retrieve-ot", help="approximate balanced OT via UOT and rounding")
    r.add_argument("--problem", required=True)
    r.add_argument("--epsilon", type=float, default=0.05)
    r.add_argument("--max-iters", type=int, default=200_000)
    r.add_argument("--plan", default="ot_plan.csv")
    r.add_argument("--report", default="ot_report.json")
    r.set_defaults(func=_cmd_retrieve_ot)

    for name, fn in (("check-thm2", theorem2_check), ("check-thm4", theorem4_check)):
        c = sub.add_parser(name, help="compare an approximation error with its bound over a tau grid")
        c.add_argument("--problem")
        c.add_argument("--n", type=int, default=5)
        c.add_argument("--seed", type=int, default=0)
        c.add_argument("--taus", type=_float_list, default=[10.0, 100.0, 1000.0, 10000.0])
        c.add_argument("--out", default=f"{name}.csv")
        c.set_defaults(func=lambda a, fn=fn: _cmd_check(a, fn))

    t = sub.add_parser("tau-study", help="iteration counts of GEM-UOT and Sinkhorn versus tau")
    t.add_argument("--problem")
    t.add_argument("--n", type=int, default=50)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--taus", type=_float_list, default=[10.0, 100.0, 1000.0, 10000.0])
    t.add_argument("--epsilon", type=float, default=1e-2)
    t.add_argument("--sinkhorn-eta", type=float)
    t.add_argument("--sinkhorn-max-iters", type=int, default=20_000_000)
    t.add_argument("--max-iters", type=int, default=200_000)
    t.add_argument("--out", default="tau_study.csv")
    t.add_argument("--report", default="tau_study.json")
    t.set_defaults(func=_cmd_tau_study)

    ct = sub.add_parser("color-transfer", help="recolor an image with another image's palette")
    ct.add_argument("--src", required=True)
    ct.add_argument("--dst", required=True)
    ct.add_argument("--n", type=int, default=64)
    ct.add_argument("--solver", choices=["gem-uot", "sinkhorn"], default="gem-uot")
    ct.add_argument("--tau", type=float)
    ct.add_argument("--eta", type=float)
    ct.add_argument("--epsilon", type=float, default=1e-2)
    ct.add_argument("--seed", type=int, default=0)
    ct.add_argument("--max-iters", type=int, default=200_000)
    ct.add_argument("--out", default="recolored.ppm")
    ct.add_argument("--report", default="color_report.json")
    ct.set_defaults(func=_cmd_color_transfer)

    sp = sub.add_parser("sparsity", help="compare plan sparsity of GEM-UOT and Sinkhorn")
    sp.add_argument("--n", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--instances", type=int, default=10)
    sp.add_argument("--tau", type=float, default=55.0)
    sp.add_argument("--epsilon", type=float, default=1e-2)
    sp.add_argument("--max-iters", type=int, default=200_000)
    sp.add_argument("--out", default="sparsity.csv")
    sp.set_defaults(func=_cmd_sparsity)
    return p


def _apply_thread_cap():
    raw = os.environ.get("UOTKIT_THREADS")
    if raw is None:
        return
    try:
        k = int(raw)
    except ValueError as exc:
        raise ValidationError(f"UOTKIT_THREADS must be a positive integer, got {raw!r}") from exc
    if k < 1:
        raise ValidationError(f"UOTKIT_THREADS must be a positive integer, got {raw!r}")
    numba.set_num_threads(min(k, numba.config.NUMBA_NUM_THREADS))


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INVALID
    try:
        _apply_thread_cap()
        np.seterr(over="ignore", under="ignore")
        return args.func(args)
    except DivergenceError as exc:
        print(f"uotkit: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValidationError, UOTError, OSError, ValueError) as exc:
        print(f"uotkit: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
