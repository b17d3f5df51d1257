"""
Command-line front end.

Exit codes: 0 success, 2 verification failure (stepsize condition
violated, divergence, uncertified result), 1 usage or I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional, Sequence

from tripd.trace import fmt_float

EXIT_OK, EXIT_USAGE, EXIT_VERIFY = 0, 1, 2
MAX_SEED = (1 << 64) - 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}")
    if not 0 <= v <= MAX_SEED:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit value")
    return v


def _threads() -> int:
    raw = os.environ.get("TRIPD_THREADS", "1")
    try:
        v = int(raw)
    except ValueError:
        raise UsageError(f"TRIPD_THREADS must be a positive integer, got {raw!r}")
    if v < 1:
        raise UsageError("TRIPD_THREADS must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=_seed, default=0, help="unsigned 64-bit seed (default 0)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--tol", type=float, help="residual / distance tolerance")
    common.add_argument("--max-iters", type=int, help="iteration or round cap")
    common.add_argument("--timing", action="store_true", help="record wall time in traces (breaks byte-identical output)")

    p = _Parser(prog="tripd", description="Primal-dual proximal solvers and distributed simulations.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("solve", parents=[common], help="full TriPD solve of a problem config")
    b = sub.add_parser("bc", parents=[common], help="randomized block-coordinate solve")
    b.add_argument("--p", type=float, help="activation probability for every block")
    d = sub.add_parser("dist", parents=[common], help="distributed simulation of a graph config")
    d.add_argument("--mode", choices=["sync", "async"], default="sync")
    d.add_argument("--p", type=float, default=0.5, help="agent activation probability (async)")
    d.add_argument("--budget", type=int, default=10**6, help="transmission budget")
    fm = sub.add_parser("formation", parents=[common], help="formation benchmark")
    fm.add_argument("--mode", choices=["sync", "async"], help="run only this TriPD-Dist mode (plus the baseline)")
    fm.add_argument("--p", type=float, help="agent activation probability (async)")
    fm.add_argument("--m", type=int, help="number of robots")
    fm.add_argument("--budget", type=int, help="transmission budget")
    fm.add_argument("--no-baseline", action="store_true", help="skip the dual-decomposition baseline")
    sub.add_parser("check-stepsizes", parents=[common], help="verify stepsizes (formation defaults without --config)")
    v = sub.add_parser("vu-compare", parents=[common], help="Vu-Condat stepsize thresholds")
    v.add_argument("--mu", type=float, default=1.5)
    v.add_argument("--lambda", dest="lam", type=float, default=1.0)
    return p


def _out_dir(args) -> Optional[str]:
    if args.out is None:
        return None
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _write(out: Optional[str], name: str, text: str):
    if out is not None:
        with open(os.path.join(out, name), "w", newline="") as fh:
            fh.write(text)


# %% commands

def cmd_solve(args) -> int:
    from tripd.diagnostics import format_summary, kkt_residual
    from tripd.io import load_json, parse_problem, write_point
    from tripd.solver import SolverConfig, solve

    if args.config is None:
        raise UsageError("solve: --config is required")
    cfg = load_json(args.config)
    problem, sigma, gamma = parse_problem(cfg, args.seed)
    scfg = cfg.get("solver", {})
    config = SolverConfig(
        sigma, gamma,
        relaxation=scfg.get("relaxation"),
        max_iters=args.max_iters if args.max_iters is not None else int(scfg.get("max_iters", 10_000)),
        tol=args.tol if args.tol is not None else float(scfg.get("tol", 1e-10)),
        timing=args.timing,
    )
    rep = solve(problem, config)
    kkt = kkt_residual(rep.z, problem)
    out = _out_dir(args)
    if out is not None:
        rep.trace.to_csv(os.path.join(out, "trace.csv"))
        write_point(os.path.join(out, "solution.csv"), rep.z)
    summary = format_summary({
        "command": "solve", "iterations": rep.iterations, "stop_reason": rep.stop_reason,
        "resid_S": rep.residual, "kkt_residual": kkt, "L_applies": rep.l_applies,
        "units": "resid_S and dist_S in the S-metric norm; elapsed_ns in nanoseconds (0 unless --timing)",
    })
    _write(out, "summary.txt", summary)
    print(summary, end="")
    return EXIT_OK if rep.converged else EXIT_VERIFY


def cmd_bc(args) -> int:
    from tripd.block import ActivationScheme, BlockPartition, run_bc
    from tripd.diagnostics import format_summary
    from tripd.io import ConfigError, load_json, parse_problem, write_point
    from tripd.solver import SolverConfig

    if args.config is None:
        raise UsageError("bc: --config is required")
    cfg = load_json(args.config)
    problem, sigma, gamma = parse_problem(cfg, args.seed)
    bcfg = cfg.get("blocks", {})
    labels = bcfg.get("labels")
    part = BlockPartition.primal_dual(problem.r, problem.n) if labels is None else BlockPartition.from_labels(labels)
    if part.dim != problem.r + problem.n:
        raise ConfigError("blocks.labels: one label per coordinate of (u, x) required")
    kind = bcfg.get("kind", "independent")
    if args.p is not None:
        probs = [args.p] * part.m if kind == "independent" else [1.0 / part.m] * part.m
    else:
        probs = bcfg.get("p", [0.5] * part.m if kind == "independent" else [1.0 / part.m] * part.m)
    try:
        scheme = ActivationScheme(kind, tuple(probs), args.seed)
    except ValueError as exc:
        raise ConfigError(f"blocks: {exc}") from exc
    scfg = cfg.get("solver", {})
    config = SolverConfig(
        sigma, gamma,
        max_iters=args.max_iters if args.max_iters is not None else int(scfg.get("max_iters", 100_000)),
        tol=args.tol if args.tol is not None else float(scfg.get("tol", 1e-10)),
        timing=args.timing,
    )
    rep = run_bc(problem, config, part, scheme)
    out = _out_dir(args)
    if out is not None:
        rep.trace.to_csv(os.path.join(out, "bc_trace.csv"))
        write_point(os.path.join(out, "solution.csv"), rep.z)
    summary = format_summary({
        "command": "bc", "seed": args.seed, "blocks": part.m, "iterations": rep.iterations,
        "stop_reason": rep.stop_reason, "resid_S": rep.residual,
        "units": "resid_S in the S-metric norm; active_mask one character per block",
    })
    _write(out, "summary.txt", summary)
    print(summary, end="")
    return EXIT_OK if rep.converged else EXIT_VERIFY


def cmd_dist(args) -> int:
    from tripd.diagnostics import format_summary, reference_solution
    from tripd.distributed import check_local_stepsizes, lift_to_global, run_distributed
    from tripd.io import load_json, parse_graph

    if args.config is None:
        raise UsageError("dist: --config is required")
    graph = parse_graph(load_json(args.config))
    bad = [v for v in check_local_stepsizes(graph) if not v.ok]
    if bad:
        for v in bad:
            print(f"agent {v.agent}: tau = {fmt_float(v.tau)} violates tau < {fmt_float(v.bound)}", file=sys.stderr)
        return EXIT_VERIFY
    lifted = lift_to_global(graph)
    ref = reference_solution(lifted.problem, lifted.sigma, lifted.gamma, eps=1e-12, max_iters=args.max_iters or 10**6)
    tol = args.tol if args.tol is not None else 1e-8
    run = run_distributed(graph, args.mode, args.budget, ref.z, tol, args.p, args.seed, lifted=lifted)
    out = _out_dir(args)
    if out is not None:
        run.trace.to_csv(os.path.join(out, f"dist_{args.mode}.csv"))
    summary = format_summary({
        "command": "dist", "mode": args.mode, "seed": args.seed, "rounds": run.rounds,
        "transmissions": run.transmissions, "stop_reason": run.stop_reason,
        "final_dist_euclid": float(run.trace.last("dist_euclid")),
        "reference_certified": ref.certified,
        "units": "transmissions in messages; distances in Euclidean, S and Pi^-1 S norms",
    })
    _write(out, "summary.txt", summary)
    print(summary, end="")
    return EXIT_OK if run.stop_reason == "tol" and ref.certified else EXIT_VERIFY


def _formation_one(bc):
    from tripd.formation import run_benchmark

    rep = run_benchmark(bc)
    return rep.summary, rep.reference_certified


def cmd_formation(args) -> int:
    import dataclasses
    from concurrent.futures import ProcessPoolExecutor

    from tripd.diagnostics import format_summary
    from tripd.formation import BenchmarkConfig
    from tripd.io import ConfigError, load_json

    cfg = load_json(args.config) if args.config else {}
    bc = BenchmarkConfig()
    for key in ("m", "N", "budget", "tol", "target", "p", "ref_eps", "ref_max_iters", "baseline_max_iters"):
        if key in cfg:
            try:
                setattr(bc, key, type(getattr(bc, key))(cfg[key]))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{key}: {exc}") from exc
    if "modes" in cfg:
        bad = set(cfg["modes"]) - {"sync", "async", "baseline"}
        if bad:
            raise ConfigError(f"modes: unknown mode(s) {sorted(bad)}")
        bc.modes = tuple(cfg["modes"])
    if args.m is not None:
        bc.m = args.m
    if args.budget is not None:
        bc.budget = args.budget
    if args.tol is not None:
        bc.tol = args.tol
    if args.max_iters is not None:
        bc.baseline_max_iters = args.max_iters
    if args.mode is not None:
        bc.modes = (args.mode,) + tuple(m for m in bc.modes if m == "baseline")
    if args.no_baseline:
        bc.modes = tuple(m for m in bc.modes if m != "baseline")
    if args.p is not None:
        bc.p = args.p
    bc.cache_dir = cfg.get("cache_dir")
    out = args.out or cfg.get("out_dir")
    # --seed overrides the config's seed list
    seeds = [args.seed] if args.seed_given or "seeds" not in cfg else [int(s) for s in cfg["seeds"]]
    runs = []
    for s in sorted(set(seeds)):
        sub = None if out is None else (out if len(seeds) == 1 else os.path.join(out, f"seed_{s}"))
        runs.append(dataclasses.replace(bc, seed=s, out_dir=sub))
    workers = min(_threads(), len(runs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_formation_one, runs))
    else:
        results = [_formation_one(r) for r in runs]
    ok = True
    for run_cfg, (summary, certified) in zip(runs, results):
        print(format_summary(summary), end="")
        reached = all(summary.get(f"{m}_transmissions_to_target") is not None for m in run_cfg.modes if m != "baseline")
        ok = ok and certified and reached
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_check_stepsizes(args) -> int:
    from tripd.io import load_json, parse_graph, parse_problem
    from tripd.solver import verify_stepsizes

    if args.config is None:
        from tripd.formation import build_formation_problem, default_problem

        graph = build_formation_problem(default_problem())
    else:
        cfg = load_json(args.config)
        if "problem" in cfg:
            problem, sigma, gamma = parse_problem(cfg, args.seed)
            v = verify_stepsizes(problem, sigma, gamma)
            print(f"method: {v.method}")
            print(f"min_eigenvalue: {fmt_float(v.min_eig)}")
            print(f"ok: {v.ok}")
            if not v.ok:
                print(v.message, file=sys.stderr)
            return EXIT_OK if v.ok else EXIT_VERIFY
        graph = parse_graph(cfg)
    from tripd.distributed import check_local_stepsizes

    verdicts = check_local_stepsizes(graph)
    print(f"{'agent':>5} {'sigma':>12} {'tau':>12} {'bound':>12} {'ok':>4}")
    for v in verdicts:
        a = graph.agents[v.agent]
        print(f"{v.agent:>5} {a.sigma:>12.6g} {v.tau:>12.6g} {v.bound:>12.6g} {str(v.ok):>4}")
    return EXIT_OK if all(v.ok for v in verdicts) else EXIT_VERIFY


def cmd_vu_compare(args) -> int:
    from tripd.solver import vu_condat_thresholds

    if args.mu <= 0 or not 0 < args.lam < 2:
        raise UsageError("vu-compare: need mu > 0 and lambda in (0, 2)")
    ours, theirs = vu_condat_thresholds(args.mu, args.lam)
    print(f"mu: {fmt_float(args.mu)}")
    print(f"lambda: {fmt_float(args.lam)}")
    print(f"nu_max_fejer: {ours:.12f}")
    print(f"nu_max_averaged: {theirs:.12f}")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "bc": cmd_bc,
    "dist": cmd_dist,
    "formation": cmd_formation,
    "check-stepsizes": cmd_check_stepsizes,
    "vu-compare": cmd_vu_compare,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    from tripd.io import ConfigError
    from tripd.solver import DivergenceError, StepsizeError

    try:
        argv = list(sys.argv[1:] if argv is None else argv)
        args = build_parser().parse_args(argv)
        args.seed_given = any(a == "--seed" or a.startswith("--seed=") for a in argv)
        _threads()
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StepsizeError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_VERIFY


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
