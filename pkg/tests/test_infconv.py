import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from riskshare.conjugate import conj_table
from riskshare.infconv import (UNWEIGHTED, AgentPopulation, GridMismatch, ValueFunction,
                               conditional_reduction, dual_lower_bound, group_convolve,
                               improperness_probe, objective, population_tables, solve,
                               solve_exact, solve_exact_batch, solve_heuristic)
from riskshare.markers import MINUS_INF, is_finite
from riskshare.probspace import FiniteProbSpace, PartitionAlgebra, all_partitions
from riskshare.riskmeasures import (ES, VaR, Choquet, Distortion, Entropic, EssSup,
                                    ExpectationUnder, MinOf, Shifted)


def es_convolution_lp(p, X, betas, weights=None):
    """Weighted ES convolution as a linear program (tail-minimisation form)."""
    p, X = np.asarray(p), np.asarray(X, dtype=float)
    d, n = len(p), len(betas)
    w = np.ones(n) if weights is None else np.asarray(weights)
    # variables: X_i (n*d), t_i (n), u_i (n*d)
    nv = 2 * n * d + n
    c = np.zeros(nv)
    for i, b in enumerate(betas):
        c[n * d + i] = w[i]
        c[n * d + n + i * d: n * d + n + (i + 1) * d] = w[i] * p / b
    A_ub, b_ub = [], []
    for i in range(n):
        for k in range(d):
            row = np.zeros(nv)
            row[i * d + k] = 1.0           # X_i[k]
            row[n * d + i] = -1.0          # - t_i
            row[n * d + n + i * d + k] = -1.0  # - u_i[k]
            A_ub.append(row)
            b_ub.append(0.0)
    A_eq = np.zeros((d, nv))
    for i in range(n):
        A_eq[np.arange(d), i * d + np.arange(d)] = w[i]
    bounds = [(None, None)] * (n * d + n) + [(0, None)] * (n * d)
    res = linprog(c, A_ub=np.array(A_ub), b_ub=b_ub, A_eq=A_eq, b_eq=X, bounds=bounds, method="highs")
    assert res.status == 0
    return res.fun


S2, S3, S4 = (FiniteProbSpace.uniform(d) for d in (2, 3, 4))


def test_population_validation():
    with pytest.raises(ValueError):
        AgentPopulation(())
    with pytest.raises(ValueError):
        AgentPopulation(((0.0, ES(0.5)),))
    with pytest.raises(ValueError):
        AgentPopulation(((2.0, ES(0.5)),), UNWEIGHTED)
    with pytest.raises(TypeError):
        AgentPopulation(((1.0, "es"),))
    pop = AgentPopulation.replicated(ES(0.5), 4)
    assert pop.n == 4 and np.allclose(pop.weights, 0.25)
    assert AgentPopulation.from_dict(pop.to_dict()) == pop
    assert pop.with_agent(1.0, EssSup()).n == 5
    assert pop.subpopulation([0, 2]).n == 2


def test_objective_shape_checked():
    pop = AgentPopulation.unweighted([ES(0.5), ES(0.5)])
    with pytest.raises(ValueError):
        objective(pop, S3, np.zeros((3, 3)))


def test_var_pair_at_atom_indicator():
    pop = AgentPopulation.unweighted([VaR(0.125), VaR(0.125)])
    res = solve_exact(pop, S4, S4.indicator([0]), dual=False)
    assert res.value == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(res.allocation.sum(axis=0), S4.indicator([0]))


@pytest.mark.parametrize("betas", [(0.25, 0.5), (0.5, 0.5), (0.3, 0.6, 0.9)])
def test_es_convolution_is_es_of_largest_level(betas, rng):
    S = FiniteProbSpace((0.1, 0.2, 0.3, 0.4)) if len(betas) == 2 else S3
    pop = AgentPopulation.unweighted([ES(b) for b in betas])
    X = rng.uniform(-5, 5, size=(6, S.d))
    vals, alloc, _ = solve_exact_batch(pop, S, X)
    expect = ES(max(betas)).evaluate(S, X)
    assert np.allclose(np.asarray(vals, float), expect, atol=1e-8)
    assert np.allclose(alloc.sum(axis=1), X)


def test_weighted_es_matches_lp(rng):
    S = FiniteProbSpace((0.2, 0.5, 0.3))
    w = (0.5, 2.0)
    pop = AgentPopulation(((w[0], ES(0.2)), (w[1], ES(0.7))))
    for X in rng.uniform(-4, 4, size=(5, 3)):
        res = solve(pop, S, X, dual=False)
        assert res.value == pytest.approx(es_convolution_lp(S.probs, X, (0.2, 0.7), w), abs=1e-7)
        assert np.allclose(w @ res.allocation, X)


def test_entropic_convolution_closed_form(rng):
    # 1/theta adds up under convolution
    pop = AgentPopulation.unweighted([Entropic(1.0), Entropic(2.0)])
    for X in rng.uniform(-3, 3, size=(5, 3)):
        res = solve(pop, S3, X, dual=False)
        assert res.value == pytest.approx(Entropic(2.0 / 3.0).evaluate(S3, X), abs=1e-6)


def test_heuristic_agrees_with_exact(rng):
    pop = AgentPopulation.unweighted([ES(0.25), ES(0.5), Entropic(1.0)])
    for X in rng.uniform(-5, 5, size=(4, 3)):
        a = solve_exact(pop, S3, X, dual=False).value
        b = solve_heuristic(pop, S3, X, restarts=2, seed=1, dual=False).value
        assert b == pytest.approx(a, abs=1e-6)


def test_heuristic_is_deterministic_given_seed():
    pop = AgentPopulation.unweighted([ES(0.2)] * 5)
    X = np.array([1.0, -2.0, 3.0, 0.5, 0.0])
    S = FiniteProbSpace.uniform(5)
    a = solve_heuristic(pop, S, X, seed=7)
    b = solve_heuristic(pop, S, X, seed=7)
    assert a.value == b.value and np.array_equal(a.allocation, b.allocation)
    assert a.value == pytest.approx(ES(0.2).evaluate(S, X), abs=1e-6)


def test_minof_replicated_values_are_analytic():
    spec = MinOf(EssSup(), Shifted(ExpectationUnder(), 1.0))
    X = np.array([4.0, -4.0])
    for n in (1, 2, 4, 8, 16):
        pop = AgentPopulation.replicated(spec, n)
        for lam in (0.25, 0.5):
            Z = lam * X
            v = solve(pop, S2, Z, dual=False).value
            assert v == pytest.approx(Z.mean() + min(abs(Z[0]), 1.0 / n), abs=1e-9)


def test_partition_restricted_solve_is_measurable():
    G = PartitionAlgebra(((0, 1), (2, 3)))
    pop = AgentPopulation.unweighted([ES(0.5), Entropic(1.0)])
    X = np.array([2.0, 2.0, -1.0, -1.0])
    res = solve(pop, S4, X, partition=G, dual=False)
    assert all(G.is_measurable(a, 1e-9) for a in res.allocation)


def test_dual_bound_and_gap():
    # on four uniform atoms the extreme densities of ES(0.5) sit on the 1/10 grid
    pop = AgentPopulation.unweighted([ES(0.25), ES(0.5)])
    X = np.array([3.0, -1.0, 0.5, 2.0])
    res = solve(pop, S4, X)
    assert res.dual_bound == pytest.approx(ES(0.5).evaluate(S4, X), abs=1e-9)
    assert abs(res.gap) <= 1e-8
    # off-grid extreme points leave a valid but loose bound
    X3 = np.array([3.0, -1.0, 0.5])
    res3 = solve(pop, S3, X3)
    assert res3.dual_bound <= res3.value + 1e-9


def test_dual_bound_grid_mismatch():
    pop = AgentPopulation.unweighted([ES(0.25), ES(0.5)])
    t1 = conj_table(ES(0.25), S3, step=0.1)
    t2 = conj_table(ES(0.5), S3, step=0.05)
    with pytest.raises(GridMismatch):
        dual_lower_bound(pop, S3, np.zeros(3), [t1, t2])


def test_dual_bound_minus_inf_for_var():
    pop = AgentPopulation.unweighted([VaR(0.5), ES(0.5)])
    tables = population_tables(pop, S2)
    assert dual_lower_bound(pop, S2, np.zeros(2), tables) is MINUS_INF


@settings(max_examples=20)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(-5, 5))
def test_weak_duality_and_cash_additivity(x, c):
    pop = AgentPopulation.unweighted([ES(0.3), Entropic(1.0)])
    X = np.array(x)
    a = solve(pop, S3, X)
    assert a.value >= a.dual_bound - 1e-6
    b = solve(pop, S3, X + c, dual=False)
    assert b.value == pytest.approx(a.value + c, abs=1e-5)


@settings(max_examples=15)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_adding_an_agent_never_hurts(x):
    X = np.array(x)
    pop = AgentPopulation.unweighted([ES(0.5), Entropic(1.0)])
    bigger = pop.with_agent(1.0, ES(0.3))
    v_small = solve(pop, S3, X, dual=False).value
    v_big = solve(bigger, S3, X, dual=False).value
    assert v_big <= v_small + 1e-6
    assert v_small <= min(ES(0.5).evaluate(S3, X), Entropic(1.0).evaluate(S3, X)) + 1e-9


def test_value_function_as_spec():
    pop = AgentPopulation.unweighted([ES(0.25), ES(0.5)])
    vf = ValueFunction(pop)
    X = np.array([[1.0, 2.0, -1.0], [0.0, 0.0, 4.0]])
    assert np.allclose(vf.evaluate(S3, X), ES(0.5).evaluate(S3, X), atol=1e-8)
    improper = ValueFunction(AgentPopulation.unweighted([VaR(0.5), VaR(0.5)]))
    with pytest.raises(ValueError):
        improper.evaluate(S2, [1.0, 0.0])


def test_exact_solver_reports_minus_inf():
    pop = AgentPopulation.unweighted([VaR(0.5), VaR(0.5)])
    res = solve_exact(pop, S2, np.array([1.0, 0.0]), dual=False)
    assert res.value is MINUS_INF


def test_improperness_probe():
    pop = AgentPopulation.unweighted([VaR(0.5), VaR(0.5)])
    v = improperness_probe(pop, S2)
    assert v.improper and v.label == "MINUS_INF"
    assert v.objectives[-1] <= -2e6
    es = improperness_probe(AgentPopulation.unweighted([ES(0.5), ES(0.5)]), S2)
    assert not es.improper and es.label == "FINITE_SO_FAR"
    with pytest.raises(ValueError):
        improperness_probe(AgentPopulation.unweighted([ES(0.5)]), S2)


def test_group_convolve_matches_direct(rng):
    pop = AgentPopulation.unweighted([ES(0.2), ES(0.4), ES(0.6), ES(0.8)])
    for X in rng.uniform(-4, 4, size=(3, 4)):
        g = group_convolve(pop, [[0, 1], [2, 3]], S4, X)
        assert g.value == pytest.approx(ES(0.8).evaluate(S4, X), abs=1e-6)
        assert np.allclose(g.allocation.sum(axis=0), X, atol=1e-9)
    with pytest.raises(ValueError):
        group_convolve(pop, [[0, 1], [1, 2, 3]], S4, np.zeros(4))


def test_conditional_reduction_es_and_var():
    q = S4.probs
    es = AgentPopulation.unweighted([ES(0.25), ES(0.5)])
    var = AgentPopulation.unweighted([VaR(0.25), VaR(0.25)])
    for G in all_partitions(4)[:6]:
        X = np.asarray(G.basis) @ np.arange(1.0, len(G.blocks) + 1)
        r = conditional_reduction(es, S4, G, q, X)
        assert r.value_all == pytest.approx(r.value_g, abs=1e-6)
        rv = conditional_reduction(var, S4, G, q, X)
        assert not is_finite(rv.value_all) or rv.value_all <= rv.value_g + 1e-9
    with pytest.raises(ValueError):
        conditional_reduction(es, S4, PartitionAlgebra.trivial(4), q, [1.0, 0.0, 0.0, 0.0])


def test_result_to_dict_encodes_markers():
    pop = AgentPopulation.unweighted([VaR(0.5), VaR(0.5)])
    d = solve_exact(pop, S2, np.array([1.0, 0.0]), dual=False).to_dict()
    assert d["value"] == str(MINUS_INF)


def test_choquet_pair_is_improper_on_four_atoms():
    h = Choquet(Distortion.shifted_ramp())
    v = improperness_probe(AgentPopulation.unweighted([h, h]), S4)
    assert v.improper and v.objectives[-1] < -1e6
