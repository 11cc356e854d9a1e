"""The named experiments behind the command line runner.

Each experiment takes an ``ExperimentConfig`` and returns an
``ExperimentResult``: CSV columns, rows (deterministic given config and
seed) and a JSON-ready summary.
"""
from dataclasses import dataclass, field

import numpy as np

from .conjugate import conj_table, detect_degeneracy
from .convexify import (ReplicationExperiment, acceptance_cloud, default_lambda_grid,
                        default_segment, minkowski_nonconvexity)
from .infconv import (AgentPopulation, conditional_reduction, dual_lower_bound, group_convolve,
                      improperness_probe, population_tables, solve)
from .markers import Marker, as_float, is_finite
from .ordering import consistency_spot_check, dilatation_monotone_check
from .probspace import FiniteProbSpace, PartitionAlgebra, all_partitions
from .riskmeasures import VaR, EssSup


class InvariantViolation(RuntimeError):
    """An internal consistency check failed; results would be untrustworthy."""


@dataclass
class ExperimentResult:
    columns: list
    rows: list
    summary: dict = field(default_factory=dict)


def _num(v):
    """Stable text for a number or marker in CSV cells."""
    if isinstance(v, Marker):
        return str(v)
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _vec(x):
    return ";".join(_num(v) for v in np.ravel(x))


def _solver_kw(cfg):
    kw = dict(cfg.solver)
    kw.setdefault("seed", cfg.seed)
    return kw


def _conj_kw(cfg, threads=1):
    kw = {k: v for k, v in cfg.conjugate.items() if k in ("step", "M", "payoff_step", "polish_tol")}
    kw["threads"] = threads
    return kw


def _check_feasible(pop, X, allocation, tol=1e-9):
    total = pop.weights @ np.asarray(allocation)
    if np.max(np.abs(total - X)) > tol * (1.0 + np.abs(X).max()):
        raise InvariantViolation(f"allocation does not add up to X: {total} vs {X}")


def run_eval(cfg, threads=1):
    rows = []
    for i, X in enumerate(cfg.payoffs):
        for spec in cfg.specs:
            rows.append([i, _vec(X), repr(spec), _num(spec.evaluate(cfg.space, X))])
        if cfg.population is not None:
            res = solve(cfg.population, cfg.space, X, dual=False, **_solver_kw(cfg))
            _check_feasible(cfg.population, np.asarray(X), res.allocation)
            rows.append([i, _vec(X), "value_function", _num(res.value)])
    return ExperimentResult(["payoff", "X", "measure", "value"], rows)


def run_conj(cfg, threads=1):
    rows, summary = [], {}
    for spec in cfg.specs:
        t = conj_table(spec, cfg.space, **_conj_kw(cfg, threads))
        for q, v, s, w in zip(t.grid, t.values, t.status, t.witnesses):
            rows.append([repr(spec), _vec(q), _num(v), _num(not is_finite(v)), s, _vec(w)])
        summary[repr(spec)] = {"points": len(t), "finite": int(t.finite_mask.sum()),
                               "box_bound": t.box_bound, "grid_step": t.grid_step}
    return ExperimentResult(["measure", "q", "value", "diverged", "status", "witness"], rows, summary)


def run_infconv(cfg, threads=1):
    pop, space = cfg.population, cfg.space
    dual = cfg.params.get("dual", True)
    tables = population_tables(pop, space, **{k: v for k, v in _conj_kw(cfg).items()
                                             if k in ("step", "M", "payoff_step")}) if dual else None
    rows = []
    for i, X in enumerate(cfg.payoffs):
        X = np.asarray(X, dtype=float)
        res = solve(pop, space, X, dual=False, **_solver_kw(cfg))
        if is_finite(res.value):
            _check_feasible(pop, X, res.allocation)
        bound = dual_lower_bound(pop, space, X, tables) if dual else None
        gap = None
        if dual and is_finite(res.value) and is_finite(bound):
            gap = res.value - bound
            if gap < -1e-6 * (1.0 + abs(bound)):
                raise InvariantViolation(f"weak duality violated at X={X.tolist()}: "
                                         f"value {res.value} < bound {bound}")
        rows.append([i, _vec(X), _num(res.value), _num(bound), _num(gap), res.meta.get("method"),
                     _vec(res.allocation)])
    return ExperimentResult(["payoff", "X", "value", "dual_bound", "gap", "method", "allocation"],
                            rows, {"agents": pop.n, "mode": pop.mode})


def run_degeneracy(cfg, threads=1):
    esc = tuple(cfg.conjugate.get("escalation", (10.0, 100.0, 1000.0)))
    rows, summary = [], {}
    for spec in cfg.specs:
        v = detect_degeneracy(spec, cfg.space, escalation=esc, step=cfg.conjugate.get("step"),
                              payoff_step=cfg.conjugate.get("payoff_step", 0.1))
        verdict = "inconclusive" if v.inconclusive else ("degenerate" if v.degenerate else "finite")
        rows.append([repr(spec), verdict,
                     "" if v.witness_q is None else _vec(v.witness_q), _num(v.witness_value),
                     "" if v.escape_direction is None else _vec(v.escape_direction)])
        summary[repr(spec)] = verdict
    return ExperimentResult(["measure", "verdict", "witness_q", "witness_value", "escape_direction"],
                            rows, summary)


def run_improperness(cfg, threads=1):
    steps = int(cfg.params.get("steps", 7))
    kw = {"threshold": float(cfg.params["threshold"])} if "threshold" in cfg.params else {}
    v = improperness_probe(cfg.population, cfg.space, steps=steps, **kw)
    rows = [[_num(K), _num(obj), v.label, _vec(a)] for K, obj, a in zip(v.scales, v.objectives, v.witness)]
    return ExperimentResult(["K", "objective", "verdict", "allocation"], rows,
                            {"verdict": v.label, "direction": v.direction})


def run_convexify(cfg, threads=1):
    spec = cfg.specs[0]
    p = cfg.params
    seg = p.get("segment")
    segment = default_segment(cfg.space) if seg is None else (seg[0], seg[1])
    exp = ReplicationExperiment(spec, tuple(p.get("n_list", (1, 2, 4, 8, 16))), segment,
                                tuple(default_lambda_grid(int(p.get("lambda_points", 65)))))
    table = conj_table(spec, cfg.space, **_conj_kw(cfg, threads))
    report = exp.run(cfg.space, table=table, **_solver_kw(cfg))
    rows = [[n, _num(v), _num(g)] for n, v, g in report.per_n]
    summary = report.to_dict()
    if cfg.space.d == 2:
        cloud = acceptance_cloud(spec, cfg.space)
        summary["minkowski"] = {n: minkowski_nonconvexity(cloud, n, lower_closed=True)
                                for n in exp.n_list if n <= 8}
    return ExperimentResult(["n", "violation", "gap"], rows, summary)


def run_consistency(cfg, threads=1):
    p = cfg.params
    q = np.asarray(p.get("q", cfg.space.probs), dtype=float)
    explicit = p.get("explicit_payoffs")
    rows, summary = [], {}
    for spec in cfg.specs:
        dil = dilatation_monotone_check(spec, cfg.space, q, int(p.get("samples", 1000)), cfg.seed,
                                        payoffs=explicit)
        con = consistency_spot_check(spec, cfg.space, q, int(p.get("pairs", 200)), cfg.seed)
        for name, rep in (("dilatation", dil), ("consistency", con)):
            cex = rep.counterexample or {}
            rows.append([repr(spec), name, _num(rep.passed), rep.checked,
                         _vec(cex["X"]) if "X" in cex else "",
                         str(cex.get("partition", "")) if cex else ""])
        summary[repr(spec)] = {"dilatation": dil.to_dict(), "consistency": con.to_dict()}
    return ExperimentResult(["measure", "check", "passed", "checked", "counterexample_X",
                             "counterexample_partition"], rows, summary)


def run_identity_var(cfg, threads=1):
    N = int(cfg.params.get("N", cfg.space.d))
    space = FiniteProbSpace.uniform(N)
    beta = 1.0 / (2 * N)
    rng = np.random.default_rng(cfg.seed)
    Xs = rng.uniform(-10, 10, size=(int(cfg.params.get("samples", 200)), N))
    var_vals, sup_vals = VaR(beta).evaluate(space, Xs), EssSup().evaluate(space, Xs)
    mismatches = int(np.sum(var_vals != sup_vals))
    X = space.indicator([0])
    pop = AgentPopulation.unweighted([VaR(beta), VaR(beta)])
    res = solve(pop, space, X, dual=False, **_solver_kw(cfg))
    _check_feasible(pop, X, res.allocation)
    rows = [["var_equals_esssup_mismatches", mismatches],
            ["two_agent_value_at_indicator", _num(res.value)],
            ["var_2beta_at_indicator", _num(VaR(2 * beta).evaluate(space, X))]]
    return ExperimentResult(["quantity", "value"], rows, {"N": N, "beta": beta})


def run_group_check(cfg, threads=1):
    pop, space = cfg.population, cfg.space
    groups = [list(g) for g in cfg.params["groups"]]
    rows = []
    for i, X in enumerate(cfg.payoffs):
        X = np.asarray(X, dtype=float)
        direct = solve(pop, space, X, dual=False, **_solver_kw(cfg))
        grouped = group_convolve(pop, groups, space, X)
        _check_feasible(pop, X, grouped.allocation)
        rows.append([i, _vec(X), _num(direct.value), _num(grouped.value),
                     _num(abs(as_float(direct.value) - as_float(grouped.value)))])
    return ExperimentResult(["payoff", "X", "direct", "grouped", "abs_diff"], rows, {"groups": groups})


def run_conditional_check(cfg, threads=1):
    pop, space = cfg.population, cfg.space
    q = np.asarray(cfg.params.get("q", space.probs), dtype=float)
    parts = cfg.params.get("partitions", "all")
    partitions = all_partitions(space.d) if parts == "all" else \
        [PartitionAlgebra(tuple(tuple(b) for b in p)) for p in parts]
    rows = []
    for G in partitions:
        # payoffs from the config are projected onto G so every row is G-measurable
        for i, X in enumerate(cfg.payoffs):
            Xg = np.asarray(G.basis) @ (np.linalg.pinv(np.asarray(G.basis)) @ np.asarray(X))
            red = conditional_reduction(pop, space, G, q, Xg, **_solver_kw(cfg))
            _check_feasible(pop, Xg, red.g_result.allocation)
            rows.append([str(G.to_list()), i, _vec(Xg), _num(red.value_all), _num(red.value_g),
                         _num(as_float(red.value_g) - as_float(red.value_all))])
    return ExperimentResult(["partition", "payoff", "X", "value_all", "value_g", "diff"], rows,
                            {"partitions": len(partitions)})


RUNNERS = {
    "eval": run_eval,
    "conj": run_conj,
    "infconv": run_infconv,
    "degeneracy": run_degeneracy,
    "improperness": run_improperness,
    "convexify": run_convexify,
    "consistency": run_consistency,
    "identity-var": run_identity_var,
    "group-check": run_group_check,
    "conditional-check": run_conditional_check,
}


def run_experiment(cfg, threads=1):
    return RUNNERS[cfg.experiment](cfg, threads=threads)
