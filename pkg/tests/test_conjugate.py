import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from riskshare.conjugate import (CertificateInvalid, biconj, conj, conj_details, conj_table,
                                 detect_degeneracy, finiteness_certificate, simplex_grid)
from riskshare.infconv import AgentPopulation
from riskshare.markers import DIVERGED, MINUS_INF, is_finite
from riskshare.probspace import FiniteProbSpace
from riskshare.riskmeasures import (ES, VaR, Choquet, Distortion, Entropic, EssSup,
                                    ExpectationUnder, MinOf, Scaled, Shifted)


def kl(q, p):
    q, p = np.asarray(q), np.asarray(p)
    m = q > 0
    return float(np.sum(q[m] * np.log(q[m] / p[m])))


def es_conj(q, p, beta):
    return 0.0 if np.all(np.asarray(q) <= np.asarray(p) / beta + 1e-12) else DIVERGED


S3 = FiniteProbSpace((0.2, 0.3, 0.5))


def test_simplex_grid_size_and_extra():
    g = simplex_grid(3, 20)
    assert len(g) == 231 and np.allclose(g.sum(axis=1), 1)
    g2 = simplex_grid(3, 20, extra=[(1 / 3, 1 / 3, 1 / 3)])
    assert len(g2) == 232


@pytest.mark.parametrize("theta", [0.5, 1.0, 2.0])
def test_entropic_conjugate_is_scaled_kl(theta):
    for q in [(0.2, 0.3, 0.5), (0.6, 0.2, 0.2), (0.1, 0.1, 0.8)]:
        assert conj(Entropic(theta), S3, q) == pytest.approx(kl(q, S3.probs) / theta, abs=1e-6)


def test_es_table_matches_closed_form():
    t = conj_table(ES(0.5), S3)
    for q, v, s in zip(t.grid, t.values, t.status):
        expect = es_conj(q, S3.probs, 0.5)
        if expect is DIVERGED:
            assert v is DIVERGED and s == "diverged"
        else:
            assert s == "finite" and v == pytest.approx(0.0, abs=1e-12)


def test_linear_measure_conjugate_is_indicator():
    S = FiniteProbSpace.uniform(2)
    assert conj(ExpectationUnder(), S, (0.5, 0.5)) == pytest.approx(0.0)
    assert conj(ExpectationUnder(), S, (0.6, 0.4)) is DIVERGED


def test_var_conjugate_degenerate_everywhere():
    S = FiniteProbSpace.uniform(2)
    t = conj_table(VaR(0.5), S)
    assert all(v is DIVERGED for v in t.values)
    d = conj_details(VaR(0.5), S, (0.5, 0.5))
    assert d.witness_objective > 1e6


def test_minof_conjugate_finite_only_at_reference():
    S = FiniteProbSpace.uniform(2)
    spec = MinOf(EssSup(), Shifted(ExpectationUnder(), 1.0))
    t = conj_table(spec, S)
    fin = t.grid[t.finite_mask]
    assert np.allclose(fin, [[0.5, 0.5]])
    assert t.lookup((0.5, 0.5)) == pytest.approx(0.0, abs=1e-12)
    # hence the biconjugate is the plain expectation
    X = np.array([[4.0, -4.0], [1.0, 3.0]])
    assert np.allclose(biconj(spec, S, X, t), X.mean(axis=1))


def test_lookup_missing_raises():
    t = conj_table(ES(0.5), FiniteProbSpace.uniform(2))
    with pytest.raises(KeyError):
        t.lookup((0.123, 0.877))


def test_threads_do_not_change_table():
    a = conj_table(Entropic(1.0), S3, step=0.1)
    b = conj_table(Entropic(1.0), S3, step=0.1, threads=3)
    assert a.values == b.values and a.status == b.status


def test_table_csv(tmp_path):
    t = conj_table(ES(0.5), FiniteProbSpace.uniform(2), step=0.25)
    path = tmp_path / "t.csv"
    t.to_csv(str(path))
    lines = path.read_text().strip().splitlines()
    assert len(lines) == len(t) + 1


@settings(max_examples=25)
@given(st.sampled_from([ES(0.3), Entropic(1.0), EssSup(), Choquet(Distortion(((0, 0), (0.4, 0.8), (1, 1))))]),
       st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_fenchel_inequality_and_biconj_below(spec, x):
    t = conj_table(spec, S3, step=0.1)
    X = np.array(x)
    Q, v = t.finite_values()
    # E^q X - rho(X) <= rho*(q) for every finite table entry
    assert np.all(Q @ X - spec.evaluate(S3, X) <= v + 1e-9)
    assert biconj(spec, S3, X, t) <= spec.evaluate(S3, X) + 1e-9


def test_biconj_reproduces_convex_measure():
    X = np.array([[1.0, -2.0, 0.5], [3.0, 3.0, -1.0]])
    t = conj_table(ES(0.5), S3)
    assert np.allclose(biconj(ES(0.5), S3, X, t), ES(0.5).evaluate(S3, X), atol=1e-9)


def test_biconj_all_diverged_is_minus_inf():
    S = FiniteProbSpace.uniform(2)
    t = conj_table(VaR(0.5), S)
    assert biconj(VaR(0.5), S, [1.0, 0.0], t) is MINUS_INF


@pytest.mark.parametrize("gamma", [0.5, 2.0])
def test_scaled_conjugate_scales(gamma):
    q = (0.1, 0.3, 0.6)
    base = conj(Entropic(1.0), S3, q)
    assert conj(Scaled(gamma, Entropic(1.0)), S3, q) == pytest.approx(gamma * base, rel=1e-5)


def test_entropic_conjugate_convex_along_grid():
    S = FiniteProbSpace.uniform(2)
    t = conj_table(Entropic(1.0), S, step=0.05)
    order = np.argsort(t.grid[:, 0])
    inner = order[1:-1]  # drop vertices: KL is steep there and the box clips it
    v = np.array([t.values[i] for i in inner])
    assert np.all(np.diff(v, 2) >= -1e-6)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_degeneracy_verdicts(d):
    S = FiniteProbSpace.uniform(d)
    assert detect_degeneracy(VaR(1.0 / d), S).degenerate
    v = detect_degeneracy(Entropic(1.0), S)
    assert not v.degenerate and v.witness_value == pytest.approx(kl(v.witness_q, S.probs), abs=1e-3)


def test_degeneracy_escalation_validated():
    S = FiniteProbSpace.uniform(2)
    with pytest.raises(ValueError):
        detect_degeneracy(ES(0.5), S, escalation=(10.0, 5.0))
    with pytest.raises(ValueError):
        detect_degeneracy(ES(0.5), S, escalation=(1.0, 10.0, 50.0))


def test_finiteness_certificate():
    S = FiniteProbSpace.uniform(3)
    pop = AgentPopulation.unweighted([ES(0.5), ES(0.5)])
    cert = finiteness_certificate(pop, S, S.probs, [0.0, 0.0])
    X = np.array([3.0, -1.0, 2.0])
    assert cert(X) == pytest.approx(S.probs @ X)
    with pytest.raises(CertificateInvalid):
        finiteness_certificate(pop, S, (0.9, 0.05, 0.05), [0.0, 0.0])
    ent = AgentPopulation.unweighted([Entropic(1.0)])
    with pytest.raises(CertificateInvalid):
        finiteness_certificate(ent, S, (0.6, 0.2, 0.2), [0.1])


def test_bad_box_rejected():
    with pytest.raises(ValueError):
        conj(ES(0.5), S3, S3.probs, M=0.0)
    with pytest.raises(ValueError):
        conj(ES(0.5), S3, S3.probs, step=0.3)
