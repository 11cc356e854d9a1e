"""Finite probability spaces, partitions and conditional expectation.

Random variables are plain float vectors indexed by atom; positive entries
are losses.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .validation import PROB_TOL, DimensionError, check_measure, check_payoff, check_payoffs


@dataclass(frozen=True)
class FiniteProbSpace:
    """``d`` atoms with strictly positive probabilities ``p``."""

    p: tuple

    def __post_init__(self):
        p = tuple(float(v) for v in self.p)
        object.__setattr__(self, "p", p)
        if len(p) < 1:
            raise ValueError("a probability space needs at least one atom")
        arr = np.asarray(p)
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise ValueError("atom probabilities must be strictly positive")
        if abs(arr.sum() - 1.0) > PROB_TOL:
            raise ValueError(f"atom probabilities sum to {arr.sum()!r}, expected 1")

    @classmethod
    def uniform(cls, d):
        return cls((1.0 / d,) * d)

    @property
    def d(self):
        return len(self.p)

    @cached_property
    def probs(self):
        arr = np.asarray(self.p, dtype=float)
        arr.setflags(write=False)
        return arr

    @property
    def max_atom(self):
        return max(self.p)

    def indicator(self, atoms):
        """Indicator payoff of a set of atom indices."""
        x = np.zeros(self.d)
        x[list(atoms)] = 1.0
        return x

    def to_dict(self):
        return {"p": list(self.p)}


def expectation(q, x):
    """Expected value of payoff ``x`` under the probability vector ``q``."""
    q = np.asarray(q, dtype=float)
    x = np.asarray(x, dtype=float)
    if q.shape[-1] != x.shape[-1]:
        raise DimensionError(f"measure has {q.shape[-1]} atoms, payoff has {x.shape[-1]}")
    return x @ q if x.ndim > 1 else float(x @ q)


@dataclass(frozen=True)
class PartitionAlgebra:
    """A finite sigma-algebra given by the partition generating it."""

    blocks: tuple

    def __post_init__(self):
        blocks = tuple(tuple(sorted(int(i) for i in b)) for b in self.blocks)
        if any(len(b) == 0 for b in blocks):
            raise ValueError("partition blocks must be nonempty")
        flat = [i for b in blocks for i in b]
        if len(flat) != len(set(flat)):
            raise ValueError("partition blocks overlap")
        if sorted(flat) != list(range(len(flat))):
            raise ValueError("partition blocks must cover atoms 0..d-1")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def discrete(cls, d):
        return cls(tuple((i,) for i in range(d)))

    @classmethod
    def trivial(cls, d):
        return cls((tuple(range(d)),))

    @classmethod
    def from_labels(cls, labels):
        """Build a partition from a block label per atom."""
        groups = {}
        for atom, label in enumerate(labels):
            groups.setdefault(label, []).append(atom)
        return cls(tuple(groups.values()))

    @property
    def d(self):
        return sum(len(b) for b in self.blocks)

    @cached_property
    def labels(self):
        out = np.empty(self.d, dtype=int)
        for k, b in enumerate(self.blocks):
            out[list(b)] = k
        out.setflags(write=False)
        return out

    @cached_property
    def basis(self):
        """``d x k`` matrix whose columns are the block indicators."""
        B = np.zeros((self.d, len(self.blocks)))
        B[np.arange(self.d), self.labels] = 1.0
        B.setflags(write=False)
        return B

    def is_measurable(self, x, tol=0.0):
        """True iff ``x`` is constant on every block (up to ``tol``)."""
        x = np.asarray(x, dtype=float)
        return all(np.ptp(x[list(b)]) <= tol for b in self.blocks)

    def to_list(self):
        return [list(b) for b in self.blocks]


def partition_refines(g1, g2):
    """True iff every block of ``g1`` lies inside a block of ``g2``."""
    if g1.d != g2.d:
        raise DimensionError("partitions live on different spaces")
    coarse = g2.labels
    return all(len({coarse[i] for i in b}) == 1 for b in g1.blocks)


def all_partitions(d):
    """Every partition of ``{0, .., d-1}``, coarsest first.

    There are Bell(d) of them, so this is only meant for small ``d``.
    """
    def rec(atoms):
        if not atoms:
            yield []
            return
        first, rest = atoms[0], atoms[1:]
        for sub in rec(rest):
            for k in range(len(sub)):
                yield sub[:k] + [[first] + sub[k]] + sub[k + 1:]
            yield [[first]] + sub

    parts = [PartitionAlgebra(tuple(tuple(b) for b in p)) for p in rec(list(range(d)))]
    parts.sort(key=lambda g: (len(g.blocks), g.blocks))
    return parts


def cond_expectation(q, x, g, p=None, *, return_info=False):
    """Conditional expectation of ``x`` given the partition ``g`` under ``q``.

    Blocks carrying no ``q``-mass fall back to the plain average under ``p``
    (uniform if ``p`` is omitted); their indices are reported when
    ``return_info`` is set. ``x`` may be a single payoff or a batch of rows.
    """
    q = np.asarray(q, dtype=float)
    X, single = check_payoffs(x, q.shape[0])
    if g.d != q.shape[0]:
        raise DimensionError("partition and measure live on different spaces")
    ref = np.full(q.shape[0], 1.0 / q.shape[0]) if p is None else np.asarray(p, dtype=float)
    out = np.empty_like(X)
    fallback = []
    for k, b in enumerate(g.blocks):
        idx = list(b)
        mass = q[idx].sum()
        if mass > 0:
            w = q[idx] / mass
        else:
            w = ref[idx] / ref[idx].sum()
            fallback.append(k)
        out[:, idx] = (X[:, idx] @ w)[:, None]
    res = out[0] if single else out
    if return_info:
        return res, {"fallback_blocks": fallback}
    return res


__all__ = [
    "FiniteProbSpace",
    "PartitionAlgebra",
    "all_partitions",
    "check_measure",
    "check_payoff",
    "cond_expectation",
    "expectation",
    "partition_refines",
]
