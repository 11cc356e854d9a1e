"""scikit-learn style wrappers around the functional API.

Rows of ``X`` are payoffs (one column per atom). The wrappers hold no logic
of their own; they exist so experiments can be composed with sklearn
tooling (``get_params``, ``clone``, pipelines).
"""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .conjugate import biconj, conj_table
from .infconv import AgentPopulation, solve
from .markers import as_float
from .probspace import FiniteProbSpace
from .validation import DimensionError, check_payoffs


def _space(probabilities, d):
    if probabilities is None:
        return FiniteProbSpace.uniform(d)
    space = FiniteProbSpace(tuple(probabilities))
    if space.d != d:
        raise DimensionError(f"payoffs have {d} atoms, probabilities have {space.d}")
    return space


class RiskMeasure(BaseEstimator, TransformerMixin):
    """Evaluate one risk measure row by row; ``transform`` returns a column."""

    def __init__(self, spec=None, probabilities=None):
        self.spec = spec
        self.probabilities = probabilities

    def fit(self, X, y=None):
        X, _ = check_payoffs(X)
        if self.spec is None:
            raise ValueError("spec is required")
        self.space_ = _space(self.probabilities, X.shape[1])
        self.spec.validate(self.space_)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "space_")
        X, _ = check_payoffs(X, self.n_features_in_)
        return self.spec.evaluate(self.space_, X)

    def transform(self, X):
        return self.predict(X)[:, None]


class ConjugateDual(BaseEstimator, TransformerMixin):
    """Conjugate table of ``spec``; predictions are biconjugate values.

    ``transform`` returns the columns ``(rho, rho**, rho - rho**)`` so the
    convexification gap can be read off directly.
    """

    def __init__(self, spec=None, probabilities=None, step=None, M=10.0, payoff_step=0.1):
        self.spec = spec
        self.probabilities = probabilities
        self.step = step
        self.M = M
        self.payoff_step = payoff_step

    def fit(self, X, y=None):
        X, _ = check_payoffs(X)
        if self.spec is None:
            raise ValueError("spec is required")
        self.space_ = _space(self.probabilities, X.shape[1])
        self.table_ = conj_table(self.spec, self.space_, step=self.step, M=self.M,
                                 payoff_step=self.payoff_step)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "table_")
        X, _ = check_payoffs(X, self.n_features_in_)
        vals = biconj(self.spec, self.space_, X, self.table_)
        return np.array([as_float(v) for v in vals])

    def transform(self, X):
        X, _ = check_payoffs(X, getattr(self, "n_features_in_", None))
        rho = self.spec.evaluate(self.space_, X)
        low = self.predict(X)
        return np.column_stack([rho, low, rho - low])


class RiskSharing(BaseEstimator):
    """Value function of a population; ``predict`` gives values, ``transform`` allocations.

    ``agents`` is a sequence of ``(weight, spec)`` pairs. Allocations come
    back flattened to ``n_agents * d`` columns, agent-major.
    """

    def __init__(self, agents=(), mode="weighted", probabilities=None, method="auto",
                 restarts=3, seed=0):
        self.agents = agents
        self.mode = mode
        self.probabilities = probabilities
        self.method = method
        self.restarts = restarts
        self.seed = seed

    def fit(self, X, y=None):
        X, _ = check_payoffs(X)
        self.population_ = AgentPopulation(tuple(self.agents), self.mode)
        self.space_ = _space(self.probabilities, X.shape[1])
        for spec in self.population_.specs:
            spec.validate(self.space_)
        self.n_features_in_ = X.shape[1]
        return self

    def _solve(self, X):
        check_is_fitted(self, "population_")
        X, _ = check_payoffs(X, self.n_features_in_)
        return [solve(self.population_, self.space_, x, method=self.method, dual=False,
                      restarts=self.restarts, seed=self.seed) for x in X]

    def predict(self, X):
        return np.array([as_float(r.value) for r in self._solve(X)])

    def transform(self, X):
        return np.array([np.ravel(r.allocation) for r in self._solve(X)])


__all__ = ["ConjugateDual", "RiskMeasure", "RiskSharing"]
