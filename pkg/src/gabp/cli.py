"""Command line front end.

Exit codes: 0 success (and converged, for iterative commands), 1 domain
problem (invalid model, non walk-summable field), 2 unreadable or
malformed input, 3 iteration budget exhausted, 4 divergence detected,
5 existence violation in strict mode.

Set GABP_LOG=DEBUG (or INFO, WARNING, ...) to see progress logging.
"""

import argparse
import logging
import os
import sys

import numpy as np

from gabp.analysis import certify, compute_bounds, information_fixed_point
from gabp.bp import Belief, BpOptions, run_bp
from gabp.errors import (DomainError, ExistenceViolation, InputFormatError,
                         IterationBudgetError)
from gabp.graph import build_factor_graph, classify_topology, to_dot
from gabp.io import (fmt, load_custom_init, load_model, load_mrf, save_model,
                     write_beliefs_csv, write_trajectory_csv)
from gabp.model import centralized_solve, random_model, require_valid, validate_model
from gabp.mrf import check_walk_summability, mrf_to_linear_gaussian, normalize_mrf

log = logging.getLogger("gabp")


def _setup_logging():
    level_name = os.environ.get("GABP_LOG")
    if not level_name:
        return
    level = getattr(logging, level_name.upper(), None)
    if not isinstance(level, int):
        print(f"warning: unknown GABP_LOG level {level_name!r}", file=sys.stderr)
        level = logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s",
                        force=True)


def _print_beliefs(beliefs):
    for vid in sorted(beliefs):
        b = beliefs[vid]
        var = np.diag(b.cov)
        for c in range(len(b.mean)):
            print(f"agent {vid} component {c + 1}: "
                  f"mean {fmt(b.mean[c])} variance {fmt(var[c])}")


def _parse_init(value):
    if value.startswith("custom:"):
        path = value[len("custom:"):]
        if not path:
            raise InputFormatError("--init custom: needs a file path after the colon")
        return "custom", path
    if value in ("zero", "lower", "upper"):
        return value, None
    raise InputFormatError(
        f"--init must be zero, lower, upper or custom:<path>, got {value!r}")


def cmd_validate(args):
    model = load_model(args.model)
    problems = validate_model(model)
    if problems:
        for p in problems:
            print(f"problem: {p}")
        print(f"invalid: {len(problems)} problem(s)")
        return 1
    graph = build_factor_graph(model)
    topo = classify_topology(graph)
    print(f"ok: {len(model.variables)} agents, {len(model.factors)} factors, "
          f"topology {topo.overall}, diameter {topo.diameter}")
    if args.dot:
        with open(args.dot, "w") as fh:
            fh.write(to_dot(graph))
        print(f"wrote {args.dot}")
    return 0


def cmd_solve(args):
    model = load_model(args.model)
    require_valid(model)
    sol = centralized_solve(model)
    beliefs = {vid: Belief(mean=sol.means[vid], cov=sol.covs[vid]) for vid in sol.means}
    _print_beliefs(beliefs)
    if args.out:
        write_beliefs_csv(beliefs, args.out)
        print(f"wrote {args.out}")
    return 0


def cmd_run(args):
    model = load_model(args.model)
    require_valid(model)
    graph = build_factor_graph(model)
    init, custom_path = _parse_init(args.init)
    custom = load_custom_init(custom_path) if custom_path else None
    opts = BpOptions(tol_j=args.tol_j, tol_v=args.tol_v, max_iters=args.max_iters,
                     schedule=args.schedule, seed=args.seed, strict=args.strict)

    reference = None
    if args.trajectory:
        try:
            reference = information_fixed_point(model, graph).f2v
        except IterationBudgetError:
            log.warning("fixed point not found within budget; "
                        "trajectory part-metric column left empty")

    result = run_bp(model, graph, init=init, options=opts,
                    custom_init=custom, reference=reference)
    print(f"status: {result.status} after {result.iterations} iteration(s)")
    if result.beliefs is not None:
        _print_beliefs(result.beliefs)
    if args.trajectory:
        write_trajectory_csv(result.trajectory.rows, args.trajectory)
        print(f"wrote {args.trajectory}")
    if args.out and result.beliefs is not None:
        write_beliefs_csv(result.beliefs, args.out)
        print(f"wrote {args.out}")
    if result.status == "converged":
        return 0
    if result.status == "diverged":
        print("message means grew past the divergence guard", file=sys.stderr)
        return 4
    print("iteration budget exhausted before convergence", file=sys.stderr)
    return 3


def cmd_analyze(args):
    model = load_model(args.model)
    require_valid(model)
    graph = build_factor_graph(model)
    report = certify(model, graph, cross_check=args.certify)
    print(f"topology: {report.topology} ({len(report.components)} component(s), "
          f"diameter {report.diameter})")
    print(f"fixed point: {report.fixed_point_iterations} iteration(s), "
          f"bounds {'hold' if report.bounds_hold else 'VIOLATED'}")
    print(f"rho(Q): {fmt(report.rho_q)}")
    print(f"verdict: {report.verdict}")
    print(f"mean recursion: {report.mean_recursion_status} "
          f"after {report.mean_recursion_iterations} iteration(s)")
    if args.certify:
        print(f"gabp cross-check: {report.bp_status} "
              f"after {report.bp_iterations} iteration(s), "
              f"max mean error {fmt(report.max_mean_error)}")
        if report.fitted_rate is not None:
            print(f"fitted contraction rate: {fmt(report.fitted_rate)}")
    for note in report.notes:
        print(f"note: {note}")
    if args.out:
        import json
        with open(args.out, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2)
            fh.write("\n")
        print(f"wrote {args.out}")
    if args.dot:
        with open(args.dot, "w") as fh:
            fh.write(to_dot(graph))
        print(f"wrote {args.dot}")
    if report.verdict == "diverges_rho_ge_1":
        return 4
    return 0


def cmd_convert_mrf(args):
    j, h, _meta = load_mrf(args.mrf)
    scale = None
    if np.max(np.abs(np.diag(j) - 1.0)) > 1e-9:
        j, h, scale = normalize_mrf(j, h)
        log.info("rescaled input to unit diagonal")
    ws = check_walk_summability(j)
    print(f"walk-summable: {'yes' if ws.walk_summable else 'no'} "
          f"(min eigenvalue of I - |R|: {fmt(ws.min_eig)})")
    model, info = mrf_to_linear_gaussian(j, h, omega=args.omega)
    if scale is not None:
        model.meta["scale"] = [float(x) for x in scale]
    print(f"omega: {fmt(info.omega)}")
    print(f"columns: {info.columns} ({info.pair_columns} pair, "
          f"{info.folded_columns} folded into priors)")
    if args.out:
        save_model(model, args.out)
        print(f"wrote {args.out}")
    return 0


def cmd_gen(args):
    model = random_model(seed=args.seed, n_agents=args.agents,
                         dims=(1, args.max_dim), topology=args.topology,
                         coeff_scale=args.coeff_scale, noise_scale=args.noise_scale)
    graph = build_factor_graph(model)
    topo = classify_topology(graph)
    print(f"generated {len(model.variables)} agents, {len(model.factors)} factors, "
          f"topology {topo.overall}")
    if args.out:
        save_model(model, args.out)
        print(f"wrote {args.out}")
    if args.dot:
        with open(args.dot, "w") as fh:
            fh.write(to_dot(graph))
        print(f"wrote {args.dot}")
    return 0


def _parser():
    parser = argparse.ArgumentParser(
        prog="gabp",
        description="Gaussian belief propagation for distributed linear models")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a model file")
    p.add_argument("model")
    p.add_argument("--dot", help="write the factor graph in DOT format")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="centralized joint estimate")
    p.add_argument("model")
    p.add_argument("--out", help="belief CSV path")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("run", help="run message passing")
    p.add_argument("model")
    p.add_argument("--init", default="zero",
                   help="zero, lower, upper or custom:<path> (default zero)")
    p.add_argument("--schedule", default="sync", choices=["sync", "seq", "random"])
    p.add_argument("--tol-j", type=float, default=1e-10)
    p.add_argument("--tol-v", type=float, default=1e-10)
    p.add_argument("--max-iters", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0,
                   help="permutation seed for the random schedule")
    p.add_argument("--strict", action="store_true",
                   help="stop on any existence violation or non-pd message")
    p.add_argument("--out", help="belief CSV path")
    p.add_argument("--trajectory", help="per-edge trajectory CSV path")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="convergence analysis")
    p.add_argument("model")
    p.add_argument("--certify", action="store_true",
                   help="also run message passing and cross-check the means")
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--dot", help="write the factor graph in DOT format")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("convert-mrf", help="turn a scalar MRF into a model file")
    p.add_argument("mrf")
    p.add_argument("--omega", type=float, default=None,
                   help="diagonal shift (default half the walk-summability margin)")
    p.add_argument("--out", help="model JSON path")
    p.set_defaults(func=cmd_convert_mrf)

    p = sub.add_parser("gen", help="generate a random model file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--agents", type=int, default=8)
    p.add_argument("--topology", default="multi_loop",
                   choices=["forest", "single_loop", "multi_loop"])
    p.add_argument("--max-dim", type=int, default=3)
    p.add_argument("--coeff-scale", type=float, default=1.0)
    p.add_argument("--noise-scale", type=float, default=1.0)
    p.add_argument("--out", help="model JSON path")
    p.add_argument("--dot", help="write the factor graph in DOT format")
    p.set_defaults(func=cmd_gen)

    return parser


def main(argv=None):
    _setup_logging()
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except InputFormatError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except ExistenceViolation as exc:
        print(f"existence violation: {exc}", file=sys.stderr)
        return 5
    except IterationBudgetError as exc:
        print(f"budget exhausted: {exc}", file=sys.stderr)
        return 3
    except DomainError as exc:
        print(f"domain error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
