"""Fairness, externality, price-of-anarchy and batch comparison reports."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from typing import NamedTuple, Optional, Sequence

from .exact import BUDGET, INFEASIBLE, enumerate_nash, solve_optimal
from .game import (AgentModel, build_game, car_delays, is_feasible, social_welfare,
                   total_delay, violations)
from .solver import FULL, BudgetExceeded, DSAConfig, SolverConfig, is_nash, solve

CSV_COLUMNS = ("scenario", "agents", "init", "mode", "seed", "feasible", "delay",
               "optimal", "ratio", "gini", "updates", "evals")
FCFS_LABEL = "FCFS/AIM baseline"


def gini(s, a, release_final_edge=False) -> Fraction:
    bad = violations(s, a, release_final_edge)
    if bad:
        raise ValueError(f"gini needs a feasible allocation; violations: {bad[:3]}")
    d = list(car_delays(s, a).values())
    total = sum(d)
    if total == 0:
        return Fraction(0)
    num = sum(abs(x - y) for x in d for y in d)
    return Fraction(num, 2 * len(d) * abs(total))


class Externality(NamedTuple):
    value: int
    delay_with: int
    delay_without: int
    feasible_with: bool
    feasible_without: bool


def externality(s, k, cfg: SolverConfig) -> Externality:
    """Equilibrium delay with car ``k`` minus the delay once it is removed."""
    if k not in s.trip:
        raise KeyError(f"car {k} not in scenario")
    rest = s.without_car(k)
    order = cfg.agent_order
    if order is not None and cfg.agent_model is AgentModel.CAR:
        order = [j for j in order if j != k]
    elif order is not None and cfg.agent_model is AgentModel.ATOMIC:
        order = [j for j in order if tuple(j)[1] != k]
    sub_cfg = replace(cfg, agent_order=order)
    if isinstance(cfg.init, dict):
        sub_cfg = replace(sub_cfg, init={v: t for v, t in cfg.init.items() if v[1] != k})
    out = []
    for scen, c in ((s, cfg), (rest, sub_cfg)):
        g = build_game(scen, c.agent_model, c.release_final_edge)
        a, _ = solve(g, c)
        out.append((total_delay(scen, a), is_feasible(g, a)))
    return Externality(out[0][0] - out[1][0], out[0][0], out[1][0], out[0][1], out[1][1])


class PoAResult(NamedTuple):
    ratio: Fraction
    worst_equilibrium: int
    optimum: int
    optimum_is_nash: bool
    equilibria: int


def poa_ratio(s, agent_model, eps=Fraction(1), budget: Optional[int] = 5_000_000,
              release_final_edge=False) -> PoAResult:
    """Worst feasible equilibrium welfare against the optimum, both shifted by ``eps``."""
    eps = Fraction(eps)
    if eps <= 0:
        raise ValueError("eps must be positive")
    g = build_game(s, agent_model, release_final_edge)
    opt = solve_optimal(s, budget, release_final_edge)
    if opt.status == BUDGET:
        raise BudgetExceeded("optimum search exceeded budget", opt.allocation)
    if opt.status == INFEASIBLE:
        raise ValueError("scenario has no feasible allocation")
    nes = enumerate_nash(s, agent_model, budget, release_final_edge)
    if not nes:
        raise ValueError("no feasible equilibrium found")
    j_so = abs(social_welfare(g, opt.allocation).delay)
    worst = max(abs(social_welfare(g, a).delay) for a, _ in nes)
    return PoAResult((worst + eps) / (j_so + eps), worst, j_so,
                     is_nash(g, opt.allocation, FULL, budget=budget), len(nes))


# ---------------------------------------------------------------------------
# Batch comparison

@dataclass(frozen=True)
class RunConfig:
    agents: str = "car"
    init: str = "empty"
    mode: str = "bru"  # bru, bru-best, dsa
    p: float = 0.7
    order: Optional[tuple] = None
    release_final_edge: bool = False

    def solver_config(self, seed) -> SolverConfig:
        if self.mode not in ("bru", "bru-best", "dsa"):
            raise ValueError(f"unknown mode {self.mode!r}")
        return SolverConfig(agent_model=self.agents, init=self.init,
                            best_update=self.mode == "bru-best",
                            dsa=DSAConfig(self.p, seed) if self.mode == "dsa" else None,
                            agent_order=self.order, release_final_edge=self.release_final_edge)

    @property
    def label(self):
        if self.agents == "atomic" and self.init == "empty":
            return FCFS_LABEL
        return f"{self.agents}+{self.init}+{self.mode}"


@dataclass
class RunRecord:
    scenario: str
    agents: str
    init: str
    mode: str
    seed: int
    feasible: bool
    delay: int
    optimal: Optional[int]
    ratio: Optional[Fraction]
    gini: Optional[Fraction]
    updates: int
    evals: int
    iterations: int = 0
    car_delays: dict = field(default_factory=dict)
    error: Optional[str] = None

    def row(self):
        return {
            "scenario": self.scenario, "agents": self.agents, "init": self.init,
            "mode": self.mode, "seed": self.seed, "feasible": int(self.feasible),
            "delay": self.delay, "optimal": "" if self.optimal is None else self.optimal,
            "ratio": "" if self.ratio is None else f"{float(self.ratio):.6f}",
            "gini": "" if self.gini is None else f"{float(self.gini):.6f}",
            "updates": self.updates, "evals": self.evals,
        }


def _mean_ci(xs):
    n = len(xs)
    if n == 0:
        return None, None
    m = sum(xs) / n
    if n == 1:
        return m, 0.0
    var = sum((x - m) ** 2 for x in xs) / (n - 1)
    return m, 1.96 * math.sqrt(var / n)


@dataclass
class Report:
    records: list
    aggregates: list

    def to_csv(self, header=None) -> str:
        buf = io.StringIO()
        if header:
            buf.write(f"# manifest {header}\n")
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.records:
            w.writerow(r.row())
        return buf.getvalue()

    def to_json(self, manifest=None) -> str:
        body = {"records": [r.row() for r in self.records], "aggregates": self.aggregates}
        return dump_json(body, manifest)


def dump_json(body: dict, manifest=None) -> str:
    """JSON text; when given, the manifest is written alone on the first line."""
    parts = json.dumps(body, indent=1, sort_keys=True)
    if manifest is None:
        return parts + "\n"
    head = '{"manifest": ' + json.dumps(manifest, sort_keys=True) + ","
    inner = parts[1:]  # drop the opening brace
    if inner.strip() == "}":
        return head[:-1] + "}\n"
    return head + inner + "\n"


def _oracle(job):
    name, s, budget, release = job
    res = solve_optimal(s, budget, release)
    return name, res.delay if res.optimal else None


def _run(job):
    name, s, rc, seed, optimum, release = job
    cfg = rc.solver_config(seed)
    g = build_game(s, cfg.agent_model, release)
    try:
        a, tr = solve(g, cfg)
    except Exception as exc:  # recorded, not raised
        return RunRecord(name, rc.agents, rc.init, rc.mode, seed, False, 0, optimum, None,
                         None, 0, 0, error=str(exc))
    feas = is_feasible(g, a)
    d = total_delay(s, a)
    ratio = None
    if feas and optimum:
        ratio = Fraction(d, optimum)
    return RunRecord(name, rc.agents, rc.init, rc.mode, seed, feas, d, optimum, ratio,
                     gini(s, a, release) if feas else None, len(tr.records), tr.evals,
                     tr.sweeps, car_delays(s, a))


def _map(fn, jobs, workers):
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def compare_experiment(scenarios: Sequence, configs: Sequence, seeds: Sequence = (0,),
                       budget: Optional[int] = 5_000_000, jobs: int = 1,
                       release_final_edge=False) -> Report:
    """Run every (scenario, config, seed) and tabulate delay against the optimum.

    ``scenarios`` is a list of ``(name, Scenario)`` pairs and ``configs`` a
    list of :class:`RunConfig`.  Ratios are only formed for feasible runs on
    scenarios whose optimum is known and positive.
    """
    scenarios = list(scenarios)
    optima = dict(_map(_oracle, [(n, s, budget, release_final_edge) for n, s in scenarios], jobs))
    work = [(n, s, rc, seed, optima[n], release_final_edge)
            for n, s in scenarios for rc in configs for seed in seeds]
    records = _map(_run, work, jobs)
    aggregates = []
    for rc in configs:
        rs = [r for r in records if (r.agents, r.init, r.mode) == (rc.agents, rc.init, rc.mode)]
        ratios = [float(r.ratio) for r in rs if r.ratio is not None]
        m_ratio, ci_ratio = _mean_ci(ratios)
        m_delay, ci_delay = _mean_ci([r.delay for r in rs if r.feasible])
        ginis = [float(r.gini) for r in rs if r.gini is not None and r.optimal]
        m_gini, ci_gini = _mean_ci(ginis)
        aggregates.append({
            "label": rc.label, "agents": rc.agents, "init": rc.init, "mode": rc.mode,
            "runs": len(rs), "feasible": sum(r.feasible for r in rs),
            "ratio_runs": len(ratios), "ratio_mean": m_ratio, "ratio_ci95": ci_ratio,
            "delay_mean": m_delay, "delay_ci95": ci_delay,
            "gini_mean": m_gini, "gini_ci95": ci_gini,
            "updates_mean": _mean_ci([r.updates for r in rs])[0],
            "evals_mean": _mean_ci([r.evals for r in rs])[0],
        })
    return Report(records, aggregates)


def record_dict(r: RunRecord) -> dict:
    d = asdict(r)
    d["ratio"] = None if r.ratio is None else str(r.ratio)
    d["gini"] = None if r.gini is None else str(r.gini)
    d["car_delays"] = {str(k): v for k, v in r.car_delays.items()}
    return d
