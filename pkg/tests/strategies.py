"""Shared hypothesis strategies."""
import numpy as np
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from riskshare.probspace import FiniteProbSpace
from riskshare.riskmeasures import ES, Choquet, Distortion, Entropic, EssSup, ExpectationUnder, \
    MinOf, Scaled, Shifted, VaR

finite = st.floats(-20, 20, allow_nan=False, allow_infinity=False)


def payoffs(d):
    return arrays(np.float64, (d,), elements=finite)


@st.composite
def spaces(draw, min_d=1, max_d=5):
    d = draw(st.integers(min_d, max_d))
    w = draw(arrays(np.float64, (d,), elements=st.floats(0.05, 1.0)))
    return FiniteProbSpace(tuple(w / w.sum()))


@st.composite
def space_and_payoff(draw, min_d=1, max_d=5):
    space = draw(spaces(min_d, max_d))
    return space, draw(payoffs(space.d))


catalog = st.sampled_from([
    VaR(0.0), VaR(0.25), VaR(0.5), ES(0.1), ES(0.5), ES(1.0), Entropic(0.5), Entropic(2.0),
    EssSup(), ExpectationUnder(), Choquet(Distortion.shifted_ramp(0.5)),
    Choquet(Distortion(((0.0, 0.0), (0.3, 0.6), (1.0, 1.0)))),
    MinOf(EssSup(), Shifted(ExpectationUnder(), 1.0)), Scaled(2.0, Entropic(1.0)),
])

convex_catalog = st.sampled_from([
    ES(0.1), ES(0.5), ES(1.0), Entropic(0.5), Entropic(2.0), EssSup(), ExpectationUnder(),
    Choquet(Distortion(((0.0, 0.0), (0.3, 0.6), (1.0, 1.0)))), Scaled(2.0, Entropic(1.0)),
])
