"""Increasing-convex order, consistency and dilatation monotonicity on finite spaces."""
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .probspace import PartitionAlgebra, all_partitions, cond_expectation
from .validation import DimensionError, check_measure, check_payoff, check_payoffs

MAX_PARTITION_ATOMS = 6


@dataclass
class DominanceVerdict:
    dominated: bool
    failing_threshold: float = None
    excess: float = 0.0

    def __bool__(self):
        return self.dominated


def stop_loss(q, x, t):
    """``E^q (x - t)^+`` for a scalar or an array of thresholds ``t``."""
    t = np.asarray(t, dtype=float)
    return np.clip(np.asarray(x)[None, :] - t.reshape(-1, 1), 0.0, None) @ np.asarray(q)


def icx_dominates(q, X, Y, tol=1e-12):
    """Is ``X`` below ``Y`` in the increasing-convex order under ``q``?

    Stop-loss transforms are piecewise linear with kinks at data points, so
    comparing them at every value of ``X`` and ``Y`` decides the order. The
    extra threshold ``min - 1`` compares means; it is checked first, so a
    larger mean is always reported at that threshold.
    """
    q = check_measure(q)
    X = check_payoff(X, len(q))
    Y = check_payoff(Y, len(q))
    vals = np.unique(np.concatenate([X, Y]))
    ts = np.concatenate([[vals[0] - 1.0], vals])
    diff = stop_loss(q, X, ts) - stop_loss(q, Y, ts)
    bad = np.flatnonzero(diff > tol)
    if bad.size == 0:
        return DominanceVerdict(True)
    return DominanceVerdict(False, float(ts[bad[0]]), float(diff[bad[0]]))


@dataclass
class OrderingReport:
    passed: bool
    checked: int
    counterexample: dict = None
    details: dict = field(default_factory=dict)

    def __bool__(self):
        return self.passed

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def _candidates(d, samples, seed, scale, payoffs):
    rows = [] if payoffs is None else [check_payoff(x, d) for x in payoffs]
    rng = np.random.default_rng(seed)
    if samples:
        rows.extend(rng.uniform(-scale, scale, size=(samples, d)))
    if not rows:
        raise ValueError("nothing to check: no samples and no payoffs")
    return np.array(rows)


def dilatation_monotone_check(spec, space, q, samples=1000, seed=0, *, payoffs=None,
                              partitions=None, scale=10.0, tol=1e-9):
    """Check ``rho(E^q[X | G]) <= rho(X) + tol`` for every partition ``G``.

    Explicit ``payoffs`` are tried before the seeded random ones; partitions
    go coarsest first. The first failure in that order is reported.
    """
    q = check_measure(q, space.d)
    if partitions is None:
        if space.d > MAX_PARTITION_ATOMS:
            raise ValueError(f"enumerating partitions needs d <= {MAX_PARTITION_ATOMS}")
        partitions = all_partitions(space.d)
    Xs = _candidates(space.d, samples, seed, scale, payoffs)
    base = spec.evaluate(space, Xs)
    fails = np.zeros((len(Xs), len(partitions)), dtype=bool)
    lhs = np.zeros_like(fails, dtype=float)
    for j, G in enumerate(partitions):
        lhs[:, j] = spec.evaluate(space, cond_expectation(q, Xs, G, p=space.probs))
        fails[:, j] = lhs[:, j] > base + tol
    checked = fails.size
    if not fails.any():
        return OrderingReport(True, checked, details={"partitions": len(partitions)})
    i, j = np.argwhere(fails)[0]
    cex = {"X": Xs[i].tolist(), "partition": partitions[j].to_list(),
           "conditioned": cond_expectation(q, Xs[i], partitions[j], p=space.probs).tolist(),
           "risk_conditioned": float(lhs[i, j]), "risk": float(base[i])}
    return OrderingReport(False, checked, cex, {"partitions": len(partitions),
                                                 "failures": int(fails.sum())})


def _dominated_pairs(q, space, pairs, rng, scale):
    """Pairs ``(X, Y)`` with ``X`` below ``Y``: conditional contraction, then a downward mean shift."""
    parts = all_partitions(space.d) if space.d <= MAX_PARTITION_ATOMS else \
        [PartitionAlgebra.trivial(space.d), PartitionAlgebra.discrete(space.d)]
    out = []
    for _ in range(pairs):
        Y = rng.uniform(-scale, scale, size=space.d)
        G = parts[rng.integers(len(parts))]
        shift = 0.0 if rng.random() < 0.5 else rng.uniform(0.0, scale / 4)
        out.append((cond_expectation(q, Y, G, p=space.probs) - shift, Y))
    return out


def consistency_spot_check(spec, space, q, pairs=200, seed=0, *, explicit=None, scale=10.0, tol=1e-9):
    """Check ``rho(X) <= rho(Y) + tol`` on pairs with ``X`` icx-below ``Y`` under ``q``.

    ``explicit`` pairs come first, then ``pairs`` seeded ones. Pairs that
    fail the dominance test are skipped and counted.
    """
    q = check_measure(q, space.d)
    rng = np.random.default_rng(seed)
    cand = [(check_payoff(x, space.d), check_payoff(y, space.d)) for x, y in (explicit or [])]
    cand += _dominated_pairs(q, space, pairs, rng, scale)
    checked = skipped = 0
    for X, Y in cand:
        if not icx_dominates(q, X, Y, tol=1e-12):
            skipped += 1
            continue
        checked += 1
        rx, ry = spec.evaluate(space, X), spec.evaluate(space, Y)
        if rx > ry + tol:
            return OrderingReport(False, checked, {"X": X.tolist(), "Y": Y.tolist(),
                                                   "risk_X": rx, "risk_Y": ry},
                                  {"skipped": skipped})
    return OrderingReport(True, checked, details={"skipped": skipped})


__all__ = [
    "DominanceVerdict",
    "OrderingReport",
    "consistency_spot_check",
    "dilatation_monotone_check",
    "icx_dominates",
    "stop_loss",
]
