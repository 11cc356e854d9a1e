import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from riskshare.ordering import (consistency_spot_check, dilatation_monotone_check, icx_dominates,
                                stop_loss)
from riskshare.probspace import FiniteProbSpace, PartitionAlgebra, all_partitions, cond_expectation
from riskshare.riskmeasures import ES, VaR, Entropic, EssSup, ExpectationUnder

S4 = FiniteProbSpace.uniform(4)
vec4 = arrays(np.float64, (4,), elements=st.floats(-10, 10))


def test_stop_loss_values():
    q = np.array([0.5, 0.5])
    assert np.allclose(stop_loss(q, np.array([0.0, 2.0]), [-1.0, 0.0, 1.0, 3.0]), [2.0, 1.0, 0.5, 0.0])


def test_mean_preserving_spread_dominates():
    q = S4.probs
    X = np.array([1.0, 1.0, 1.0, 1.0])
    Y = np.array([0.0, 2.0, 0.0, 2.0])
    assert icx_dominates(q, X, Y)
    v = icx_dominates(q, Y, X)
    assert not v and v.failing_threshold is not None and v.excess > 0


def test_larger_mean_reported_at_sentinel():
    v = icx_dominates(S4.probs, np.full(4, 2.0), np.full(4, 1.0))
    assert not v.dominated and v.failing_threshold == 0.0 and v.excess == pytest.approx(1.0)


@given(vec4)
def test_icx_reflexive_and_shift(x):
    q = S4.probs
    assert icx_dominates(q, x, x)
    assert icx_dominates(q, x - 1.0, x)


@given(vec4, vec4, vec4)
def test_icx_transitive(x, y, z):
    q = S4.probs
    if icx_dominates(q, x, y) and icx_dominates(q, y, z):
        assert icx_dominates(q, x, z, tol=1e-9)


@given(vec4, st.integers(0, 14))
def test_conditional_expectation_is_dominated(x, k):
    G = all_partitions(4)[k]
    assert icx_dominates(S4.probs, cond_expectation(S4.probs, x, G), x, tol=1e-9)


def test_es_and_entropic_are_dilatation_monotone():
    for spec in (ES(0.25), ES(0.5), Entropic(1.0), EssSup(), ExpectationUnder()):
        rep = dilatation_monotone_check(spec, S4, S4.probs, samples=300)
        assert rep.passed and rep.checked == 300 * 15


def test_var_counterexample_is_the_explicit_payoff():
    rep = dilatation_monotone_check(VaR(0.25), S4, S4.probs, samples=100, payoffs=[[0, 0, 0, 4]])
    assert not rep.passed
    cex = rep.counterexample
    assert cex["X"] == [0.0, 0.0, 0.0, 4.0]
    assert cex["partition"] == [[0, 1, 2, 3]]
    assert cex["risk_conditioned"] == 1.0 and cex["risk"] == 0.0
    assert json.loads(rep.to_json())["passed"] is False


def test_dilatation_check_needs_small_space_or_partitions():
    S = FiniteProbSpace.uniform(7)
    with pytest.raises(ValueError):
        dilatation_monotone_check(ES(0.5), S, S.probs, samples=2)
    rep = dilatation_monotone_check(ES(0.5), S, S.probs, samples=5,
                                    partitions=[PartitionAlgebra.trivial(7)])
    assert rep.passed and rep.checked == 5


def test_consistency_spot_check():
    assert consistency_spot_check(ES(0.5), S4, S4.probs, pairs=100)
    rep = consistency_spot_check(VaR(0.25), S4, S4.probs, pairs=0,
                                 explicit=[([1.0, 1.0, 1.0, 1.0], [0.0, 0.0, 0.0, 4.0])])
    assert not rep.passed and rep.counterexample["risk_X"] == 1.0
