"""Command-line entry point: ``cmmi <command> [options]``."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .exact import BUDGET, INFEASIBLE, export_lp, solve_optimal
from .game import (allocation_from_json, allocation_to_json, build_game, car_delays,
                   is_feasible, social_welfare, total_delay, violations)
from .metrics import (CSV_COLUMNS, RunConfig, RunRecord, compare_experiment, dump_json,
                      externality, gini, poa_ratio)
from .network import ScenarioError, load_scenario, save_scenario, scenario_to_dict
from .simgen import fixture, random_grid_scenario
from .solver import DSAConfig, SolverConfig, solve

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _sha(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def manifest(command, args, scenario=None) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items())
           if k not in ("func", "out", "out_dir", "json_out", "jobs")}
    return {"command": command, "config_hash": _sha(cfg),
            "scenario_hash": _sha(scenario_to_dict(scenario)) if scenario is not None else None,
            "seed": getattr(args, "seed", None), "tool_version": __version__}


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _scenario(args):
    if getattr(args, "fixture", None) and getattr(args, "scenario", None):
        raise UsageError("give either --fixture or --scenario, not both")
    if getattr(args, "fixture", None):
        return fixture(args.fixture)
    if getattr(args, "scenario", None):
        try:
            text = Path(args.scenario).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read scenario: {exc}") from exc
        return load_scenario(text, strict=True)
    raise UsageError("a scenario is required (--fixture NAME or --scenario PATH)")


def _parse_order(text, agents):
    if text in (None, "", "id"):
        return None
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        try:
            out.append(tuple(int(x) for x in tok.split(":")) if agents == "atomic" else int(tok))
        except ValueError:
            raise UsageError(f"bad --order entry {tok!r}") from None
    return out


def _solver_config(args, s):
    init = args.init
    if init == "file":
        if not args.init_file:
            raise UsageError("--init file needs --init-file PATH")
        init = allocation_from_json(json.loads(Path(args.init_file).read_text()), s)
    if not 0 < args.p <= 1:
        raise UsageError("--p must lie in (0, 1]")
    return SolverConfig(agent_model=args.agents, init=init,
                        best_update=args.mode == "bru-best",
                        dsa=DSAConfig(args.p, args.seed) if args.mode == "dsa" else None,
                        agent_order=_parse_order(args.order, args.agents),
                        max_iterations=args.max_iterations,
                        release_final_edge=args.release_final_edge)


def _csv_line(row):
    return ",".join(str(row[c]) for c in CSV_COLUMNS) + "\n"


# ---------------------------------------------------------------------------

def cmd_generate(args):
    if args.fixture:
        s = fixture(args.fixture)
    else:
        rows, cols = _grid(args.grid)
        s = random_grid_scenario(args.seed, rows, cols, args.K, args.edge_len, args.routes,
                                 args.rate, args.crossing)
    text = save_scenario(s)
    head = json.dumps({"manifest": manifest("generate", args, s)}, sort_keys=True)
    _write(args.out, head[:-1] + ",\n" + text.lstrip()[1:].lstrip("\n"))
    return EXIT_OK


def cmd_solve(args):
    s = _scenario(args)
    cfg = _solver_config(args, s)
    g = build_game(s, cfg.agent_model, cfg.release_final_edge)
    a, trace = solve(g, cfg)
    feas = is_feasible(g, a)
    d = total_delay(s, a)
    man = manifest("solve", args, s)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prefix = args.prefix
    alloc = dict(allocation_to_json(a))
    alloc["cost"] = social_welfare(g, a).as_dict()
    alloc["termination"] = trace.termination
    (out / f"{prefix}.allocation.json").write_text(dump_json(alloc, man))
    (out / f"{prefix}.trace.jsonl").write_text(json.dumps({"manifest": man}, sort_keys=True)
                                               + "\n" + trace.to_jsonl())
    rec = RunRecord(args.fixture or args.scenario, args.agents, args.init, args.mode, args.seed,
                    feas, d, None, None, gini(s, a, cfg.release_final_edge) if feas else None,
                    len(trace.records), trace.evals)
    (out / f"{prefix}.metrics.csv").write_text(
        f"# manifest {json.dumps(man, sort_keys=True)}\n" + ",".join(CSV_COLUMNS) + "\n"
        + _csv_line(rec.row()))
    print(f"delay={d} feasible={int(feas)} termination={trace.termination} "
          f"updates={len(trace.records)} evals={trace.evals}")
    return EXIT_OK if feas else EXIT_INFEASIBLE


def cmd_optimal(args):
    s = _scenario(args)
    res = solve_optimal(s, args.budget, args.release_final_edge)
    if res.status == INFEASIBLE:
        print("optimal_delay=infeasible")
        return EXIT_INFEASIBLE
    if res.status == BUDGET:
        best = "none" if res.delay is None else res.delay
        print(f"budget exceeded after {res.nodes} nodes; best_delay={best}", file=sys.stderr)
        return EXIT_ERROR
    print(f"optimal_delay={res.delay}")
    if args.out:
        body = dict(allocation_to_json(res.allocation))
        body.update(delay=res.delay, nodes=res.nodes, status=res.status)
        _write(args.out, dump_json(body, manifest("optimal", args, s)))
    return EXIT_OK


def cmd_export_lp(args):
    s = _scenario(args)
    man = json.dumps(manifest("export-lp", args, s), sort_keys=True)
    _write(args.out, export_lp(s, args.release_final_edge, header=f"manifest {man}"))
    return EXIT_OK


def _grid(text):
    try:
        rows, cols = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"--grid expects ROWSxCOLS, got {text!r}") from None
    return rows, cols


def _parse_configs(text, p, release):
    out = []
    for tok in text.split(","):
        parts = tok.strip().split(":")
        if len(parts) != 3:
            raise UsageError(f"bad config {tok!r}; expected agents:init:mode")
        agents, init, mode = parts
        if agents not in ("atomic", "car", "intersection") or init not in ("empty", "pba") \
                or mode not in ("bru", "bru-best", "dsa"):
            raise UsageError(f"bad config {tok!r}")
        out.append(RunConfig(agents, init, mode, p, None, release))
    return out


def cmd_compare(args):
    rows, cols = _grid(args.grid)
    configs = _parse_configs(args.configs, args.p, args.release_final_edge)
    rng = np.random.default_rng(args.seed)
    scenarios = []
    while len(scenarios) < args.runs:
        sub = int(rng.integers(2**63))
        s = random_grid_scenario(sub, rows, cols, args.K, args.edge_len, args.routes, args.rate,
                                 args.crossing)
        if args.conflicts_only:
            res = solve_optimal(s, args.budget, args.release_final_edge)
            if not res.optimal or res.delay == 0:
                continue
        scenarios.append((f"grid{rows}x{cols}-K{args.K}-s{sub}", s))
    rep = compare_experiment(scenarios, configs, seeds=(args.seed,), budget=args.budget,
                             jobs=args.jobs, release_final_edge=args.release_final_edge)
    man = manifest("compare", args)
    _write(args.out, rep.to_csv(json.dumps(man, sort_keys=True)))
    if args.json_out:
        _write(args.json_out, rep.to_json(man))
    for agg in rep.aggregates:
        r = "n/a" if agg["ratio_mean"] is None else f"{agg['ratio_mean']:.4f}"
        print(f"{agg['label']}: ratio_mean={r} feasible={agg['feasible']}/{agg['runs']}",
              file=sys.stderr)
    return EXIT_OK


def cmd_metrics(args):
    s = _scenario(args)
    body = {}
    if args.allocation:
        a = allocation_from_json(json.loads(Path(args.allocation).read_text()), s)
        g = build_game(s, args.agents, args.release_final_edge)
        bad = violations(s, a, args.release_final_edge)
        body.update(total_delay=total_delay(s, a), feasible=not bad, violations=bad,
                    car_delays={str(k): v for k, v in car_delays(s, a).items()},
                    social_welfare=social_welfare(g, a).as_dict(),
                    gini=None if bad else str(gini(s, a, args.release_final_edge)))
    if args.externality:
        cfg = _solver_config(args, s)
        body["externality"] = {str(k): externality(s, k, cfg)._asdict() for k in s.cars}
    if args.poa:
        res = poa_ratio(s, args.agents, args.eps, args.budget, args.release_final_edge)
        body["poa"] = {"ratio": str(res.ratio), "worst_equilibrium": res.worst_equilibrium,
                       "optimum": res.optimum, "optimum_is_nash": res.optimum_is_nash,
                       "equilibria": res.equilibria}
    if not body:
        raise UsageError("metrics needs --allocation, --externality or --poa")
    _write(args.out, dump_json(body, manifest("metrics", args, s)))
    return EXIT_OK


# ---------------------------------------------------------------------------

def _add_scenario(p):
    p.add_argument("--fixture", help="named fixture, e.g. fig2 or fig2_extended:5")
    p.add_argument("--scenario", help="path to a scenario JSON file")
    p.add_argument("--release-final-edge", action="store_true",
                   help="free final-edge capacity once the car has driven it")


def _add_solver(p):
    p.add_argument("--agents", choices=("atomic", "car", "intersection"), default="car")
    p.add_argument("--init", choices=("empty", "pba", "file"), default="empty")
    p.add_argument("--init-file")
    p.add_argument("--mode", choices=("bru", "bru-best", "dsa"), default="bru")
    p.add_argument("--p", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--order", default="id", help='"id" or a comma list (atomic: i:k pairs)')
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--budget", type=int, default=5_000_000)


def _add_generator(p):
    p.add_argument("--grid", default="3x3")
    p.add_argument("--K", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--edge-len", type=int, default=2)
    p.add_argument("--routes", type=int, default=4)
    p.add_argument("--rate", type=float, default=0.5)
    p.add_argument("--crossing", choices=("all_crossing", "fourway"), default="all_crossing")


def build_parser():
    ap = _Parser(prog="cmmi", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("generate", help="write a generated or fixture scenario")
    _add_generator(p)
    p.add_argument("--fixture")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", help="run best-response dynamics")
    _add_scenario(p)
    _add_solver(p)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--prefix", default="solve")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("optimal", help="exact minimum total delay")
    _add_scenario(p)
    p.add_argument("--budget", type=int, default=5_000_000)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_optimal)

    p = sub.add_parser("export-lp", help="write the MILP in LP format")
    _add_scenario(p)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_export_lp)

    p = sub.add_parser("compare", help="batch comparison against the optimum")
    _add_generator(p)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--configs", default="car:pba:bru,car:empty:bru,atomic:empty:bru")
    p.add_argument("--p", type=float, default=0.7)
    p.add_argument("--budget", type=int, default=5_000_000)
    p.add_argument("--conflicts-only", action="store_true")
    p.add_argument("--release-final-edge", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("-o", "--out")
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("metrics", help="evaluate an allocation or equilibrium metrics")
    _add_scenario(p)
    _add_solver(p)
    p.add_argument("--allocation")
    p.add_argument("--externality", action="store_true")
    p.add_argument("--poa", action="store_true")
    p.add_argument("--eps", default="1")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_metrics)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError("a command is required: generate, solve, optimal, export-lp, compare, metrics")
        return args.func(args)
    except (UsageError, ScenarioError, KeyError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
