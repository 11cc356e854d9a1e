"""Convexification under replication.

Three views of the same effect: the value function of ``n`` replicated
agents (weights ``1/n``) loses its convexity violations, its duality gap
against the biconjugate shrinks, and the ``n``-fold Minkowski average of a
non-convex acceptance set approaches its convex hull.
"""
import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .conjugate import biconj, conj_table
from .infconv import AgentPopulation, solve, solve_exact_batch
from .markers import MINUS_INF, SATURATED, Marker, is_finite
from .riskmeasures import RiskMeasureSpec
from .validation import check_payoff, check_payoffs


def default_lambda_grid(points=65):
    return np.linspace(0.0, 1.0, points)


def default_segment(space):
    """``X = 2`` on the first half of the atoms and 0 elsewhere; ``Y`` is its reversal."""
    X = np.zeros(space.d)
    X[: max(1, space.d // 2)] = 2.0
    return X, X[::-1].copy()


@dataclass(frozen=True)
class ReplicationExperiment:
    base_spec: RiskMeasureSpec
    n_list: tuple
    segment: tuple
    lambda_grid: tuple = tuple(default_lambda_grid())

    def __post_init__(self):
        n_list = tuple(int(n) for n in self.n_list)
        if not n_list or n_list[0] < 1 or any(b <= a for a, b in zip(n_list, n_list[1:])):
            raise ValueError("n_list must be strictly increasing positive integers")
        lam = tuple(float(t) for t in self.lambda_grid)
        if any(t < 0 or t > 1 for t in lam):
            raise ValueError("lambda grid must lie in [0, 1]")
        for must in (0.0, 0.5, 1.0):
            if not any(abs(t - must) < 1e-15 for t in lam):
                raise ValueError(f"lambda grid must contain {must}")
        X, Y = (tuple(float(v) for v in z) for z in self.segment)
        if len(X) != len(Y):
            raise ValueError("segment endpoints differ in length")
        object.__setattr__(self, "n_list", n_list)
        object.__setattr__(self, "lambda_grid", lam)
        object.__setattr__(self, "segment", (X, Y))

    def segment_points(self):
        """Rows ``lambda X + (1 - lambda) Y`` for every lambda on the grid."""
        X, Y = (np.asarray(z) for z in self.segment)
        lam = np.asarray(self.lambda_grid)[:, None]
        return lam * X + (1.0 - lam) * Y

    def run(self, space, table=None, **solver):
        """Per-n violations and gaps along the segment, fitted into a ``DecayReport``."""
        pts = self.segment_points()
        if table is None:
            table = conj_table(self.base_spec, space)
        floor = biconj(self.base_spec, space, pts, table)
        if not isinstance(floor, np.ndarray):
            raise ValueError("base spec has a degenerate conjugate; no convex floor to compare with")
        violations, gaps, curves = [], [], {}
        for n in self.n_list:
            vals = replicated_values(self.base_spec, space, n, pts, **solver)
            curves[n] = vals
            violations.append(convexity_violation(vals, self.lambda_grid))
            gaps.append(float(np.max(np.asarray(vals, dtype=float) - floor)))
        report = decay_fit(self.n_list, violations, gaps)
        report.curves = curves
        report.floor = floor
        return report


def replicated_value(base_spec, space, n, X, **solver):
    """Value of ``n`` copies of ``base_spec`` with weights ``1/n``; exact evaluate for ``n = 1``."""
    X = check_payoff(X, space.d)
    if n < 1:
        raise ValueError("n must be >= 1")
    if n == 1:
        return base_spec.evaluate(space, X)
    pop = AgentPopulation.replicated(base_spec, n)
    return solve(pop, space, X, dual=False, **solver).value


def replicated_values(base_spec, space, n, Xs, **solver):
    """``replicated_value`` over rows, batching the exact solver when it applies."""
    Xs, _ = check_payoffs(Xs, space.d)
    if n == 1:
        return base_spec.evaluate(space, Xs)
    pop = AgentPopulation.replicated(base_spec, n)
    if n <= 3 and space.d <= 4 and solver.get("method", "auto") in ("auto", "exact"):
        kw = {k: v for k, v in solver.items() if k in ("points", "radius", "max_escalations", "tol")}
        vals, _, _ = solve_exact_batch(pop, space, Xs, **kw)
        out = list(vals)
    else:
        out = [solve(pop, space, x, dual=False, **solver).value for x in Xs]
    if all(is_finite(v) for v in out):
        return np.asarray(out, dtype=float)
    return out


def convexity_violation(values, lambda_grid):
    """``max_lambda v(lambda) - [lambda v(1) + (1 - lambda) v(0)]``, floored at 0.

    ``values[k]`` is the value at ``lambda_grid[k]``; the grid must contain
    both endpoints.
    """
    if any(isinstance(v, Marker) for v in values):
        raise ValueError("value function is not finite along the segment")
    v = np.asarray(values, dtype=float)
    lam = np.asarray(lambda_grid, dtype=float)
    if v.shape != lam.shape:
        raise ValueError("values and lambda grid differ in length")
    i1, i0 = int(np.argmin(np.abs(lam - 1.0))), int(np.argmin(np.abs(lam)))
    if abs(lam[i1] - 1.0) > 1e-15 or abs(lam[i0]) > 1e-15:
        raise ValueError("lambda grid must contain 0 and 1")
    chord = lam * v[i1] + (1.0 - lam) * v[i0]
    return max(0.0, float(np.max(v - chord)))


@dataclass
class DecayReport:
    per_n: list
    slope: object  # float or SATURATED
    curves: dict = field(default_factory=dict, repr=False)
    floor: np.ndarray = field(default=None, repr=False)

    @property
    def saturated(self):
        return self.slope is SATURATED

    def to_dict(self):
        return {"per_n": [{"n": n, "violation": v, "gap": g} for n, v, g in self.per_n],
                "slope": str(self.slope) if self.saturated else self.slope}

    def to_csv(self, path_or_file):
        own = isinstance(path_or_file, str) or hasattr(path_or_file, "__fspath__")
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            writer = csv.writer(fh)
            writer.writerow(["n", "violation", "gap"])
            for n, v, g in self.per_n:
                writer.writerow([n, repr(float(v)), "" if g is None else repr(float(g))])
        finally:
            if own:
                fh.close()


def decay_fit(n_list, violations, gaps=None, tol=1e-9):
    """Least-squares slope of ``log(violation)`` against ``log(n)``.

    Points with violation at or below ``tol`` carry no slope information and
    are left out; with fewer than two informative points the slope is
    ``SATURATED``.
    """
    n = np.asarray(n_list, dtype=float)
    v = np.asarray(violations, dtype=float)
    if len(n) < 3 or len(v) != len(n):
        raise ValueError("need at least three (n, violation) pairs")
    if np.any(v < 0):
        raise ValueError("violations must be nonnegative")
    gaps = [None] * len(n) if gaps is None else list(gaps)
    per_n = [(int(a), float(b), None if g is None else float(g)) for a, b, g in zip(n, v, gaps)]
    keep = v > tol
    if keep.sum() < 2:
        return DecayReport(per_n, SATURATED)
    slope = np.polyfit(np.log(n[keep]), np.log(v[keep]), 1)[0]
    return DecayReport(per_n, float(slope))


# ---------------------------------------------------------------------------
# Minkowski averages


def acceptance_cloud(spec, space, box=4.0, step=1.0 / 16, tol=0.0):
    """Lattice points of ``[-box, box]^d`` with ``rho(X) <= tol``."""
    axis = np.arange(-box, box + step / 2, step)
    pts = np.stack(np.meshgrid(*[axis] * space.d, indexing="ij"), axis=-1).reshape(-1, space.d)
    return pts[spec.evaluate(space, pts) <= tol]


def pareto_front(points):
    """Maximal points under the componentwise order (duplicates removed)."""
    P = np.unique(np.asarray(points, dtype=float), axis=0)
    if P.shape[1] == 2:
        order = np.lexsort((-P[:, 1], -P[:, 0]))
        P = P[order]
        best = -np.inf
        keep = []
        for i, y in enumerate(P[:, 1]):
            if y > best:
                keep.append(i)
                best = y
        return P[keep]
    keep = np.ones(len(P), dtype=bool)
    for s in range(0, len(P), 512):
        blk = P[s:s + 512]
        ge = np.all(P[None, :, :] >= blk[:, None, :], axis=2)
        gt = np.any(P[None, :, :] > blk[:, None, :], axis=2)
        keep[s:s + 512] = ~np.any(ge & gt, axis=1)
    return P[keep]


def _prune(S, resolution, lower_closed):
    if resolution:
        cells = np.round(S / resolution).astype(np.int64)
        _, first = np.unique(cells, axis=0, return_index=True)
        S = S[np.sort(first)]
    else:
        S = np.unique(S, axis=0)
    return pareto_front(S) if lower_closed else S


def _sumset(A, B, resolution, lower_closed, chunk=1 << 20):
    parts = []
    rows = max(1, chunk // max(1, len(B)))
    for s in range(0, len(A), rows):
        parts.append(_prune((A[s:s + rows, None, :] + B[None]).reshape(-1, A.shape[1]),
                            resolution, lower_closed))
    return _prune(np.vstack(parts), resolution, lower_closed)


def minkowski_sum_power(cloud, n, resolution=None, lower_closed=False):
    """The ``n``-fold Minkowski sum ``cloud + ... + cloud`` by repeated doubling."""
    cloud = np.asarray(cloud, dtype=float)
    if cloud.ndim != 2 or len(cloud) == 0:
        raise ValueError("empty cloud")
    if n < 1:
        raise ValueError("n must be >= 1")
    power = _prune(cloud, resolution, lower_closed)
    total = None
    while n:
        if n & 1:
            total = power if total is None else _sumset(total, power, resolution, lower_closed)
        n >>= 1
        if n:
            power = _sumset(power, power, resolution, lower_closed)
    return total


def minkowski_average(cloud, n, resolution=None, lower_closed=False):
    sums = minkowski_sum_power(cloud, n, resolution=None if resolution is None else n * resolution,
                               lower_closed=lower_closed)
    return sums / n


def _staircase_distance(Z, F, chunk=4096):
    """Sup-norm distance from rows of ``Z`` to the lower closure of ``F``."""
    out = np.empty(len(Z))
    for s in range(0, len(Z), chunk):
        gap = np.clip(Z[s:s + chunk, None, :] - F[None], 0.0, None).max(axis=2)
        out[s:s + chunk] = gap.min(axis=1)
    return out


def nonconvexity(points, lower_closed=False, max_pairs=500_000, seed=0):
    """Largest sup-norm distance from a midpoint of two points to the set.

    With ``lower_closed`` the points stand for the set of everything below
    them. Beyond ``max_pairs`` pairs a seeded random subset is used.
    """
    P = np.asarray(points, dtype=float)
    m = len(P)
    if m == 0:
        raise ValueError("empty cloud")
    if m * (m - 1) // 2 <= max_pairs:
        i, j = np.triu_indices(m, k=1)
    else:
        rng = np.random.default_rng(seed)
        i, j = rng.integers(0, m, size=(2, max_pairs))
    if len(i) == 0:
        return 0.0
    mid = 0.5 * (P[i] + P[j])
    if lower_closed:
        dist = _staircase_distance(mid, P)
    else:
        dist, _ = cKDTree(P).query(mid, p=np.inf)
    return float(dist.max())


def minkowski_nonconvexity(cloud, n, resolution=None, lower_closed=False, max_pairs=500_000, seed=0):
    """Nonconvexity of the ``n``-fold Minkowski average of a point cloud.

    ``resolution`` keeps one point per grid cell of that size while summing
    (``None`` removes exact duplicates only). ``lower_closed`` treats the
    cloud as a monotone set such as an acceptance set and keeps only its
    maximal points.
    """
    avg = minkowski_average(cloud, n, resolution=resolution, lower_closed=lower_closed)
    return nonconvexity(avg, lower_closed=lower_closed, max_pairs=max_pairs, seed=seed)


__all__ = [
    "DecayReport",
    "ReplicationExperiment",
    "acceptance_cloud",
    "convexity_violation",
    "decay_fit",
    "default_lambda_grid",
    "default_segment",
    "minkowski_average",
    "minkowski_nonconvexity",
    "minkowski_sum_power",
    "nonconvexity",
    "pareto_front",
    "replicated_value",
    "replicated_values",
]
