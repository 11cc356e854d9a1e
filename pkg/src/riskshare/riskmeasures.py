"""Monetary risk measures on finite probability spaces.

Every measure is an immutable spec object. ``spec.evaluate(space, X)`` accepts
a single payoff (returns a float) or a 2-D batch with one payoff per row
(returns an array); all catalog measures are vectorised over rows.
"""
from dataclasses import dataclass, field

import numpy as np

from .probspace import FiniteProbSpace
from .validation import check_measure, check_payoff, check_payoffs

MAX_NESTING = 8
# Slack when comparing cumulative probabilities against quantile levels.
_CUM_TOL = 1e-12


class RiskMeasureSpec:
    """Base class: monotone, cash-additive functional on payoffs."""

    kind = None
    convex = False

    def evaluate(self, space, X):
        arr, single = check_payoffs(X, space.d)
        self.validate(space)
        out = self._batch(space, arr)
        return float(out[0]) if single else out

    def __call__(self, space, X):
        return self.evaluate(space, X)

    def validate(self, space):
        """Raise ``ValueError`` if the spec cannot act on ``space``."""

    def _batch(self, space, X):
        raise NotImplementedError

    @property
    def depth(self):
        return 1

    def to_dict(self):
        raise NotImplementedError


@dataclass(frozen=True)
class VaR(RiskMeasureSpec):
    """Value at risk, ``inf{x : P(X <= x) >= 1 - beta}``."""

    beta: float
    kind = "var"

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"VaR level must lie in [0, 1), got {self.beta}")

    def _batch(self, space, X):
        order = np.argsort(X, axis=1, kind="stable")
        xs = np.take_along_axis(X, order, axis=1)
        cum = np.cumsum(space.probs[order], axis=1)
        # first sorted atom whose cumulative mass reaches 1 - beta
        hit = cum >= 1.0 - self.beta - _CUM_TOL
        idx = np.argmax(hit, axis=1)
        return xs[np.arange(X.shape[0]), idx]

    def to_dict(self):
        return {"kind": self.kind, "beta": self.beta}


@dataclass(frozen=True)
class ES(RiskMeasureSpec):
    """Expected shortfall: average of the worst ``beta`` tail of losses.

    The boundary atom is split fractionally, so ``ES(1)`` is the mean and
    ``ES(beta) -> max`` as ``beta -> 0``.
    """

    beta: float
    kind = "es"
    convex = True

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"ES level must lie in (0, 1], got {self.beta}")

    def _batch(self, space, X):
        ps = space.probs
        if np.all(ps == ps[0]):
            # equal masses: tail weights depend on rank only
            before = np.arange(space.d) * ps[0]
            w = np.clip(np.minimum(ps, self.beta - before), 0.0, None) / self.beta
            return np.sort(X, axis=1)[:, ::-1] @ w
        order = np.argsort(-X, axis=1, kind="stable")
        xs = np.take_along_axis(X, order, axis=1)
        ps = ps[order]
        before = np.cumsum(ps, axis=1) - ps
        w = np.clip(np.minimum(ps, self.beta - before), 0.0, None)
        return (xs * w).sum(axis=1) / self.beta

    def to_dict(self):
        return {"kind": self.kind, "beta": self.beta}


@dataclass(frozen=True)
class Entropic(RiskMeasureSpec):
    """``(1/theta) log E[exp(theta X)]``."""

    theta: float
    kind = "entropic"
    convex = True

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError(f"entropic parameter must be positive, got {self.theta}")

    def _batch(self, space, X):
        Z = self.theta * X
        top = Z.max(axis=1)
        return (top + np.log(np.exp(Z - top[:, None]) @ space.probs)) / self.theta

    def to_dict(self):
        return {"kind": self.kind, "theta": self.theta}


@dataclass(frozen=True)
class Distortion:
    """Piecewise-linear distortion through ``(t, h(t))`` breakpoints."""

    breakpoints: tuple

    def __post_init__(self):
        pts = tuple((float(t), float(h)) for t, h in self.breakpoints)
        object.__setattr__(self, "breakpoints", pts)
        t = np.array([a for a, _ in pts])
        h = np.array([b for _, b in pts])
        if len(pts) < 2 or t[0] != 0.0 or t[-1] != 1.0:
            raise ValueError("distortion breakpoints must start at t=0 and end at t=1")
        if np.any(np.diff(t) <= 0):
            raise ValueError("distortion breakpoints must be strictly increasing in t")
        if h[0] != 0.0:
            raise ValueError("distortion must satisfy h(0) = 0")
        if np.any(np.diff(h) < 0):
            raise ValueError("distortion must be nondecreasing")
        if h[-1] > 1.0:
            raise ValueError("distortion must satisfy h(1) <= 1")

    @classmethod
    def shifted_ramp(cls, knee=0.5):
        """``h(t) = (t - knee)^+ / (1 - knee)``; ``knee=0.5`` gives ``2(t - 1/2)^+``."""
        return cls(((0.0, 0.0), (knee, 0.0), (1.0, 1.0)))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.interp(t, [a for a, _ in self.breakpoints], [b for _, b in self.breakpoints])

    @property
    def at_one(self):
        return self.breakpoints[-1][1]

    def is_concave(self):
        t = np.array([a for a, _ in self.breakpoints])
        h = np.array([b for _, b in self.breakpoints])
        slopes = np.diff(h) / np.diff(t)
        return bool(np.all(np.diff(slopes) <= 1e-12))


@dataclass(frozen=True)
class Choquet(RiskMeasureSpec):
    """Choquet integral with respect to ``nu = h o P``.

    Signed payoffs use the cash-additive extension
    ``int_0^inf nu(X >= t) dt + int_-inf^0 (nu(X >= t) - nu(Omega)) dt``,
    which over finitely many layers reads
    ``x_min * h(1) + sum_k (x_(k) - x_(k+1)) h(P(X >= x_(k)))``.
    """

    distortion: Distortion
    kind = "choquet"

    def __post_init__(self):
        if not isinstance(self.distortion, Distortion):
            object.__setattr__(self, "distortion", Distortion(self.distortion))
        if self.distortion.at_one != 1.0:
            raise ValueError("a cash-additive Choquet integral needs h(1) = 1")

    @property
    def convex(self):
        return self.distortion.is_concave()

    def _batch(self, space, X):
        order = np.argsort(-X, axis=1, kind="stable")
        xs = np.take_along_axis(X, order, axis=1)
        tail = np.cumsum(space.probs[order], axis=1)
        h = self.distortion(tail[:, :-1])
        layers = (xs[:, :-1] - xs[:, 1:]) * h
        return xs[:, -1] * self.distortion.at_one + layers.sum(axis=1)

    def to_dict(self):
        return {"kind": self.kind, "breakpoints": [list(bp) for bp in self.distortion.breakpoints]}


@dataclass(frozen=True)
class EssSup(RiskMeasureSpec):
    """Worst loss over atoms (all atoms carry positive mass)."""

    kind = "esssup"
    convex = True

    def _batch(self, space, X):
        return X.max(axis=1)

    def to_dict(self):
        return {"kind": self.kind}


@dataclass(frozen=True)
class ExpectationUnder(RiskMeasureSpec):
    """Linear risk measure ``E^Q[X]``; ``q=None`` means the reference measure."""

    q: tuple = None
    kind = "expectation"
    convex = True

    def __post_init__(self):
        if self.q is not None:
            q = tuple(float(v) for v in self.q)
            check_measure(q)
            object.__setattr__(self, "q", q)

    def measure(self, space):
        return space.probs if self.q is None else np.asarray(self.q)

    def validate(self, space):
        if self.q is not None:
            check_measure(self.q, space.d)

    def _batch(self, space, X):
        return X @ self.measure(space)

    def to_dict(self):
        out = {"kind": self.kind}
        if self.q is not None:
            out["q"] = list(self.q)
        return out


@dataclass(frozen=True)
class MinOf(RiskMeasureSpec):
    """Pointwise minimum of two risk measures (monotone, cash-additive, rarely convex)."""

    left: RiskMeasureSpec
    right: RiskMeasureSpec
    kind = "min"

    def __post_init__(self):
        if self.depth > MAX_NESTING:
            raise ValueError(f"MinOf nesting depth {self.depth} exceeds {MAX_NESTING}")

    @property
    def depth(self):
        return 1 + max(self.left.depth, self.right.depth)

    def validate(self, space):
        self.left.validate(space)
        self.right.validate(space)

    def _batch(self, space, X):
        return np.minimum(self.left._batch(space, X), self.right._batch(space, X))

    def to_dict(self):
        return {"kind": self.kind, "left": self.left.to_dict(), "right": self.right.to_dict()}


@dataclass(frozen=True)
class Scaled(RiskMeasureSpec):
    """``gamma * inner(X / gamma)``."""

    gamma: float
    inner: RiskMeasureSpec
    kind = "scaled"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"scale must be positive, got {self.gamma}")

    @property
    def convex(self):
        return self.inner.convex

    @property
    def depth(self):
        return self.inner.depth

    def validate(self, space):
        self.inner.validate(space)

    def _batch(self, space, X):
        return self.gamma * self.inner._batch(space, X / self.gamma)

    def to_dict(self):
        return {"kind": self.kind, "gamma": self.gamma, "inner": self.inner.to_dict()}


@dataclass(frozen=True)
class Shifted(RiskMeasureSpec):
    """``inner(X) + offset``; e.g. ``Shifted(ExpectationUnder(), 1.0)`` is ``E[X] + 1``."""

    inner: RiskMeasureSpec
    offset: float = 0.0
    kind = "shifted"

    @property
    def convex(self):
        return self.inner.convex

    @property
    def depth(self):
        return self.inner.depth

    def validate(self, space):
        self.inner.validate(space)

    def _batch(self, space, X):
        return self.inner._batch(space, X) + self.offset

    def to_dict(self):
        return {"kind": self.kind, "offset": self.offset, "inner": self.inner.to_dict()}


def evaluate(spec, space, X):
    return spec.evaluate(space, X)


def acceptance_membership(spec, space, X, tol=0.0):
    """True iff ``X`` lies in the acceptance set ``{rho <= tol}``."""
    return bool(spec.evaluate(space, check_payoff(X, space.d)) <= tol)


_SIMPLE = {"var": VaR, "es": ES, "entropic": Entropic}


def spec_from_dict(data, *, max_nesting=MAX_NESTING, _depth=1):
    """Build a spec from its tagged record, e.g. ``{"kind": "var", "beta": 0.25}``."""
    if not isinstance(data, dict) or "kind" not in data:
        raise ValueError(f"risk measure record needs a 'kind': {data!r}")
    kind = data["kind"]
    keys = set(data) - {"kind"}

    def expect(*allowed):
        extra = keys - set(allowed)
        if extra:
            raise ValueError(f"unknown keys for {kind!r}: {sorted(extra)}")
        missing = [k for k in allowed if k not in data and k != "q"]
        if missing:
            raise ValueError(f"missing keys for {kind!r}: {missing}")

    if _depth > max_nesting:
        raise ValueError(f"risk measure nesting exceeds {max_nesting}")
    if kind in _SIMPLE:
        param = "theta" if kind == "entropic" else "beta"
        expect(param)
        return _SIMPLE[kind](float(data[param]))
    if kind == "esssup":
        expect()
        return EssSup()
    if kind == "expectation":
        expect("q")
        return ExpectationUnder(data.get("q"))
    if kind == "choquet":
        expect("breakpoints")
        return Choquet(Distortion(tuple(tuple(bp) for bp in data["breakpoints"])))
    sub = lambda key: spec_from_dict(data[key], max_nesting=max_nesting, _depth=_depth + 1)
    if kind == "min":
        expect("left", "right")
        return MinOf(sub("left"), sub("right"))
    if kind == "scaled":
        expect("gamma", "inner")
        return Scaled(float(data["gamma"]), sub("inner"))
    if kind == "shifted":
        expect("offset", "inner")
        return Shifted(sub("inner"), float(data["offset"]))
    raise ValueError(f"unknown risk measure kind {kind!r}")


# ---------------------------------------------------------------------------
# axiom checks


@dataclass
class AxiomReport:
    passed: bool
    samples: int
    failures: list = field(default_factory=list)

    def __bool__(self):
        return self.passed


def check_axioms(spec, space, samples=200, seed=0, *, scale=10.0, tol=1e-9):
    """Property-check monotonicity and cash additivity on seeded random payoffs.

    Failures carry the witnessing payoffs rather than raising.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    d = space.d
    X = rng.uniform(-scale, scale, size=(samples, d))
    bump = rng.uniform(0, scale, size=(samples, d)) * (rng.random((samples, d)) < 0.7)
    Y = X + bump
    c = rng.uniform(-scale, scale, size=samples)

    rx = spec.evaluate(space, X)
    ry = spec.evaluate(space, Y)
    rc = spec.evaluate(space, X + c[:, None])
    failures = []
    for i in np.flatnonzero(rx > ry + tol):
        failures.append({"axiom": "monotonicity", "X": X[i].tolist(), "Y": Y[i].tolist(),
                         "rho_X": float(rx[i]), "rho_Y": float(ry[i])})
    for i in np.flatnonzero(np.abs(rc - rx - c) > tol * (1 + np.abs(rx))):
        failures.append({"axiom": "cash_additivity", "X": X[i].tolist(), "c": float(c[i]),
                         "rho_X": float(rx[i]), "rho_X_plus_c": float(rc[i])})
    return AxiomReport(passed=not failures, samples=samples, failures=failures)


__all__ = [
    "AxiomReport",
    "Choquet",
    "Distortion",
    "ES",
    "Entropic",
    "EssSup",
    "ExpectationUnder",
    "FiniteProbSpace",
    "MinOf",
    "RiskMeasureSpec",
    "Scaled",
    "Shifted",
    "VaR",
    "acceptance_membership",
    "check_axioms",
    "evaluate",
    "spec_from_dict",
]
