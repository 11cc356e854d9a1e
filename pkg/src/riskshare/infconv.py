"""Weighted infimal convolution of risk measures over a finite population.

A population is a sequence of ``(w_i, rho_i)``. The value function is

    v(X) = inf { sum_i w_i rho_i(X_i) : sum_i w_i X_i = X }

(``unweighted`` mode fixes every ``w_i = 1``). Cash additivity makes the
objective invariant under constant transfers between agents, so all search
happens modulo constants: each free agent's offset from the proportional
split has its first coordinate pinned to zero, and the last agent absorbs
the residual, which keeps every candidate exactly feasible.
"""
import itertools
import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .conjugate import ConjugateTable, conj_table
from .markers import DIVERGED, MINUS_INF, Marker, is_finite
from .probspace import PartitionAlgebra, cond_expectation
from .riskmeasures import RiskMeasureSpec, Scaled, spec_from_dict
from .validation import check_measure, check_payoff, check_payoffs

log = logging.getLogger(__name__)

WEIGHTED = "weighted"
UNWEIGHTED = "unweighted"
IMPROPER_THRESHOLD = 1e6


class BudgetExceeded(RuntimeError):
    """The requested exhaustive search is larger than the solver allows."""


class GridMismatch(ValueError):
    """Conjugate tables passed together do not share one simplex grid."""


@dataclass(frozen=True)
class AgentPopulation:
    """Weighted agents ``((w_1, rho_1), ...)`` and the feasibility mode."""

    agents: tuple
    mode: str = WEIGHTED

    def __post_init__(self):
        agents = tuple((float(w), s) for w, s in self.agents)
        object.__setattr__(self, "agents", agents)
        if not agents:
            raise ValueError("population needs at least one agent")
        if self.mode not in (WEIGHTED, UNWEIGHTED):
            raise ValueError(f"mode must be {WEIGHTED!r} or {UNWEIGHTED!r}")
        for w, s in agents:
            if not w > 0:
                raise ValueError("agent weights must be strictly positive")
            if not isinstance(s, RiskMeasureSpec):
                raise TypeError(f"agent spec must be a RiskMeasureSpec, got {s!r}")
        if self.mode == UNWEIGHTED and any(w != 1.0 for w, _ in agents):
            raise ValueError("unweighted populations have unit weights")

    @classmethod
    def unweighted(cls, specs):
        return cls(tuple((1.0, s) for s in specs), UNWEIGHTED)

    @classmethod
    def replicated(cls, spec, n):
        """``n`` copies of ``spec`` with weight ``1/n`` each."""
        if n < 1:
            raise ValueError("n must be >= 1")
        return cls(tuple((1.0 / n, spec) for _ in range(n)), WEIGHTED)

    @property
    def n(self):
        return len(self.agents)

    @property
    def weights(self):
        return np.array([w for w, _ in self.agents])

    @property
    def specs(self):
        return [s for _, s in self.agents]

    def subpopulation(self, indices):
        return AgentPopulation(tuple(self.agents[i] for i in indices), self.mode)

    def with_agent(self, weight, spec):
        return AgentPopulation(self.agents + ((weight, spec),), self.mode)

    def to_dict(self):
        return {"mode": self.mode,
                "agents": [{"weight": w, "spec": s.to_dict()} for w, s in self.agents]}

    @classmethod
    def from_dict(cls, data):
        agents = tuple((float(a.get("weight", 1.0)), spec_from_dict(a["spec"]))
                       for a in data["agents"])
        return cls(agents, data.get("mode", WEIGHTED))


@dataclass
class AllocationResult:
    value: object  # float or MINUS_INF / PLUS_INF
    allocation: np.ndarray
    dual_bound: object = None
    gap: float = None
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        def enc(v):
            return str(v) if isinstance(v, Marker) else v
        return {"value": enc(self.value), "gap": self.gap, "dual_bound": enc(self.dual_bound),
                "allocation": np.asarray(self.allocation).tolist(), "meta": self.meta}


# ---------------------------------------------------------------------------
# shared pieces


def objective(pop, space, allocation):
    """``sum_i w_i rho_i(X_i)`` for allocations of shape (n, d) or (m, n, d)."""
    A = np.asarray(allocation, dtype=float)
    if A.shape[-2:] != (pop.n, space.d):
        raise ValueError(f"allocation shape {A.shape} does not match {pop.n} agents on {space.d} atoms")
    single = A.ndim == 2
    if single:
        A = A[None]
    total = np.zeros(A.shape[0])
    for i, (w, spec) in enumerate(pop.agents):
        total += w * spec._batch(space, A[:, i, :])
    return float(total[0]) if single else total


def _directions(k):
    """Search directions modulo constants in R^k, first coordinate zero, one per sign pair."""
    rows = set()
    for r in range(1, k):
        for S in itertools.combinations(range(k), r):
            v = np.zeros(k)
            v[list(S)] = 1.0
            rows.add(tuple(v - v[0]))
    for a, b in itertools.permutations(range(k), 2):
        v = np.zeros(k)
        v[a], v[b] = 1.0, -1.0
        rows.add(tuple(v - v[0]))
    out = []
    for v in sorted(rows):
        v = np.array(v)
        nz = np.flatnonzero(v)
        if nz.size == 0:
            continue
        if v[nz[0]] < 0:
            v = -v
        if not any(np.array_equal(v, u) for u in out):
            out.append(v)
    return np.array(out).reshape(-1, k)


def _basis(space, partition):
    if partition is None:
        return np.eye(space.d)
    if partition.d != space.d:
        raise ValueError("partition lives on a different space")
    return np.asarray(partition.basis)


def _polish_dirs(nf, k, w):
    """Moves for the free agents: single-agent shifts and transfers between two free agents, both signs."""
    D = _directions(k)
    moves = []
    for i in range(nf):
        for v in D:
            U = np.zeros((nf, k))
            U[i] = v
            moves.append(U)
    for i, j in itertools.combinations(range(nf), 2):
        for v in D:
            U = np.zeros((nf, k))
            U[i] = v
            U[j] = -v * w[i] / w[j]
            moves.append(U)
    moves = np.array(moves).reshape(-1, nf, k)
    return np.concatenate([moves, -moves])


class _Problem:
    """Objective in offset coordinates for a batch of aggregate payoffs."""

    def __init__(self, pop, space, B):
        self.pop, self.space, self.B = pop, space, B
        self.w = pop.weights
        self.n = pop.n
        self.nf = pop.n - 1
        self.k = B.shape[1]
        self.eye = B.shape[0] == B.shape[1] and np.array_equal(B, np.eye(B.shape[0]))

    def allocations(self, X, U):
        """X (m, d), U (m, nf, k) -> allocations (m, n, d)."""
        center = X / self.w.sum()
        free = center[:, None, :] + (U if self.eye else U @ self.B.T)
        last = (X - np.einsum("i,mid->md", self.w[:self.nf], free)) / self.w[-1]
        return np.concatenate([free, last[:, None, :]], axis=1)

    def value(self, X, U, chunk=1 << 17):
        out = np.empty(len(X))
        for s in range(0, len(X), chunk):
            out[s:s + chunk] = objective(self.pop, self.space, self.allocations(X[s:s + chunk], U[s:s + chunk]))
        return out


def _corner_offsets(X, prob):
    """Offsets for the proportional split and for "agent j holds everything" (mod constants).

    Returns shape (m, n + 1, nf, k); only payoffs in the span of the basis
    are representable, so corners are projected onto block averages.
    """
    m = len(X)
    W = prob.w.sum()
    coef = np.linalg.lstsq(prob.B, X.T, rcond=None)[0].T  # (m, k)
    out = np.zeros((m, prob.n + 1, prob.nf, prob.k))
    for j in range(prob.n):
        for i in range(prob.nf):
            # free agents start at X / W; the holder moves to X / w_j, the others to 0
            target = (1.0 / prob.w[j] - 1.0 / W) * coef if i == j else -coef / W
            out[:, j + 1, i] = target - target[:, :1]
    return out


def _lattice(nf, k, points):
    axes = np.linspace(-1.0, 1.0, points)
    free = nf * (k - 1)
    combos = np.array(list(itertools.product(axes, repeat=free))).reshape(-1, nf, k - 1)
    return np.concatenate([np.zeros(combos.shape[:2] + (1,)), combos], axis=2)


def _pattern_search(prob, X, U, f, h, h_min, bound=None, max_iter=10000, n_random=None, seed=0):
    """Batched pattern descent; returns (U, f, iterations).

    The step doubles after a successful poll (up to its initial size) and
    halves after a failed one. Candidates with an offset coordinate beyond
    ``bound`` (per row) are rejected, so each search stays in a box.

    Besides the fixed moves, every iteration also polls ``n_random`` fresh
    random unit directions (seeded) and extrapolations along the recent
    drift of each row (Hooke-Jeeves style), so the search can follow kinks
    that no fixed direction is aligned with.
    """
    U, f, h = U.copy(), f.copy(), h.copy()
    h_max = h.copy()
    drift = np.zeros_like(U)
    ratios = np.array([0.5, 1.0, 2.0])
    base = _polish_dirs(prob.nf, prob.k, prob.w)
    if len(base) == 0:
        return U, f, 0
    free = prob.nf * (prob.k - 1)
    if n_random is None:
        n_random = 0 if free == 1 else 4 * free
    rng = np.random.default_rng(seed)
    active = h >= h_min
    it = 0
    while it < max_iter:
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        it += 1
        moves = base
        if n_random:
            R = rng.normal(size=(n_random, prob.nf, prob.k - 1))
            R /= np.linalg.norm(R.reshape(n_random, -1), axis=1)[:, None, None]
            R = np.concatenate([np.zeros((n_random, prob.nf, 1)), R], axis=2)
            moves = np.concatenate([base, R])
        cand = np.concatenate([U[idx, None] + h[idx, None, None, None] * moves[None],
                               U[idx, None] + ratios[None, :, None, None] * drift[idx, None]], axis=1)
        c = cand.shape[1]
        vals = prob.value(np.repeat(X[idx], c, axis=0),
                          cand.reshape(-1, prob.nf, prob.k)).reshape(len(idx), c)
        if bound is not None:
            vals[np.abs(cand).max(axis=(2, 3)) > bound[idx, None]] = np.inf
        j = np.argmin(vals, axis=1)
        best = vals[np.arange(len(idx)), j]
        gain = best < f[idx] - 1e-15 * (1.0 + np.abs(f[idx]))
        up = idx[gain]
        drift[up] = 0.5 * drift[up] + (cand[gain, j[gain]] - U[up])
        U[up] = cand[gain, j[gain]]
        f[up] = best[gain]
        h[up] = np.minimum(2.0 * h[up], h_max[up])
        stall = idx[~gain]
        h[stall] *= 0.5
        active[stall] = h[stall] >= h_min[stall]
    return U, f, it


def solve_exact_batch(pop, space, X, *, partition=None, points=9, radius=None,
                      max_escalations=6, tol=1e-9, h_min=1e-10, budget=200_000,
                      max_agents=3, max_atoms=4):
    """Grid search plus pattern polish for many aggregate payoffs at once.

    Returns ``(values, allocations, meta)``; ``values`` is an object array
    holding floats or ``MINUS_INF``.
    """
    X, _ = check_payoffs(X, space.d)
    for spec in pop.specs:
        spec.validate(space)
    B = _basis(space, partition)
    prob = _Problem(pop, space, B)
    if pop.n > max_agents or B.shape[1] > max_atoms:
        raise BudgetExceeded(f"exact search limited to n <= {max_agents}, d <= {max_atoms}; "
                             f"got n={pop.n}, d={B.shape[1]}")
    m = len(X)
    meta = {"method": "exact", "points": points, "escalations": 0, "iterations": 0}
    if prob.nf == 0 or prob.k == 1:
        U = np.zeros((m, prob.nf, prob.k))
        vals = prob.value(X, U)
        return np.array(vals, dtype=object), prob.allocations(X, U), meta

    free = prob.nf * (prob.k - 1)
    while points > 3 and points ** free > budget:
        points -= 2
    meta["points"] = points
    lat = _lattice(prob.nf, prob.k, points)
    corners = _corner_offsets(X, prob)

    r = np.full(m, float(radius) if radius else 1.0)
    if radius is None:
        r = np.maximum(1.0, np.ptp(X, axis=1))
    # start from the best of the proportional split and the single-holder corners
    cf = prob.value(np.repeat(X, len(corners[0]), axis=0),
                    corners.reshape(-1, prob.nf, prob.k)).reshape(m, -1)
    j = np.argmin(cf, axis=1)
    best_U = corners[np.arange(m), j]
    best_f = cf[np.arange(m), j]
    history = [best_f.copy()]
    active = np.ones(m, dtype=bool)
    for esc in range(max_escalations):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        meta["escalations"] = esc + 1
        gU = np.empty((len(idx), prob.nf, prob.k))
        gf = np.empty(len(idx))
        rows = max(1, (1 << 18) // len(lat))
        for s in range(0, len(idx), rows):
            sub = idx[s:s + rows]
            L = lat[None] * r[sub, None, None, None]
            gv = prob.value(np.repeat(X[sub], len(lat), axis=0),
                            L.reshape(-1, prob.nf, prob.k)).reshape(len(sub), len(lat))
            j = np.argmin(gv, axis=1)
            gU[s:s + rows] = L[np.arange(len(sub)), j]
            gf[s:s + rows] = gv[np.arange(len(sub)), j]
        # the incumbent is already polished; only a better grid point earns a new
        # descent, or an incumbent pinned to the previous search box
        inc = best_f[idx] <= gf
        gU[inc], gf[inc] = best_U[idx][inc], best_f[idx][inc]
        pinned = inc & (np.abs(gU).max(axis=(1, 2)) >= r[idx] * (1.0 - 1e-9))
        run = (~inc | pinned) if esc > 0 else np.ones(len(idx), dtype=bool)
        pU, pf = gU.copy(), gf.copy()
        if run.any():
            step = 2.0 * r[idx[run]] / (points - 1)
            pU[run], pf[run], its = _pattern_search(prob, X[idx[run]], gU[run], gf[run], step,
                                                    h_min * np.maximum(1.0, r[idx[run]]),
                                                    bound=2.0 * r[idx[run]])
            meta["iterations"] += its
        improve = best_f[idx] - pf
        better = pf < best_f[idx]
        best_U[idx[better]] = pU[better]
        best_f[idx[better]] = pf[better]
        snapshot = history[-1].copy()
        snapshot[idx] = best_f[idx]
        history.append(snapshot)
        if esc > 0:
            done = improve <= tol * (1.0 + np.abs(best_f[idx]))
            active[idx[done]] = False
        r[idx] *= 2.0
    values = np.array(best_f, dtype=object)
    meta["unbounded_rows"] = []
    H = np.array(history)
    for i in np.flatnonzero(active):
        # an unbounded objective keeps dropping by amounts that grow with the radius
        drops = -np.diff(H[:, i])[-3:]
        floor = 1e-3 * (1.0 + np.abs(X[i]).max())
        if len(drops) == 3 and np.all(drops > floor) and np.all(drops[1:] >= 1.5 * drops[:-1]):
            values[i] = MINUS_INF
            meta["unbounded_rows"].append(int(i))
    meta["saturated_rows"] = np.flatnonzero(active).tolist()
    return values, prob.allocations(X, best_U), meta


# ---------------------------------------------------------------------------
# conjugate tables and dual bounds


@lru_cache(maxsize=256)
def _cached_table(spec, space, step, M, payoff_step):
    return conj_table(spec, space, step=step, M=M, payoff_step=payoff_step)


def population_tables(pop, space, step=None, M=10.0, payoff_step=0.1):
    """One conjugate table per agent on a shared simplex grid (cached per spec)."""
    return [_cached_table(s, space, step, M, payoff_step) for s in pop.specs]


def dual_lower_bound(pop, space, X, tables):
    """``max_q E^q[X] - sum_i w_i rho_i*(q)`` over grid points where every conjugate is finite."""
    X = check_payoff(X, space.d)
    if len(tables) != pop.n:
        raise ValueError("need one conjugate table per agent")
    grid = tables[0].grid
    for t in tables[1:]:
        if t.grid.shape != grid.shape or not np.allclose(t.grid, grid, atol=1e-12):
            raise GridMismatch("conjugate tables are on different grids")
    ok = np.ones(len(grid), dtype=bool)
    total = np.zeros(len(grid))
    for (w, _), t in zip(pop.agents, tables):
        mask = t.finite_mask
        ok &= mask
        total[mask] += w * t.finite_values()[1]
    if not np.any(ok):
        return MINUS_INF
    return float(np.max(grid[ok] @ X - total[ok]))


def _attach_dual(result, pop, space, X, tables, dual_kw):
    if tables is None:
        tables = population_tables(pop, space, **(dual_kw or {}))
    bound = dual_lower_bound(pop, space, X, tables)
    result.dual_bound = bound
    if is_finite(result.value) and is_finite(bound):
        result.gap = float(result.value - bound)
    return result


def solve_exact(pop, space, X, *, partition=None, dual=True, tables=None, dual_kw=None, **grid):
    """Exhaustive grid over the first ``n-1`` agents (last takes the residual), then polish.

    ``grid`` accepts ``points`` (lattice points per coordinate), ``radius``,
    ``max_escalations`` and ``tol``; the radius doubles until the incumbent
    stops improving by more than ``tol``.
    """
    X = check_payoff(X, space.d)
    if partition is not None and not partition.is_measurable(X, 1e-12):
        raise ValueError("X is not measurable with respect to the partition")
    values, allocs, meta = solve_exact_batch(pop, space, X[None], partition=partition, **grid)
    value = values[0]
    res = AllocationResult(value if not is_finite(value) else float(value), allocs[0], meta=meta)
    if dual and partition is None:
        _attach_dual(res, pop, space, X, tables, dual_kw)
    return res


# ---------------------------------------------------------------------------
# heuristic for larger populations


def solve_heuristic(pop, space, X, restarts=3, seed=0, *, partition=None, max_sweeps=200,
                    levels=40, tol=1e-12, dual=True, tables=None, dual_kw=None):
    """Pairwise block descent with multi-restart.

    Each step picks two agents and re-optimises the transfer between them over
    a geometric ladder of step sizes along every search direction, plus three
    closed-form moves: either agent absorbs the other's risky part, or both
    move to their common average. Absorbing moves between two non-constant
    agents are accepted on ties, which lets concentration proceed across
    flat regions without cycling.
    """
    X = check_payoff(X, space.d)
    if partition is not None and not partition.is_measurable(X, 1e-12):
        raise ValueError("X is not measurable with respect to the partition")
    B = _basis(space, partition)
    n, w, p = pop.n, pop.weights, space.probs
    dirs = _directions(B.shape[1]) @ B.T
    scale0 = max(1.0, float(np.ptp(X)))
    seeds = [int(seed) + r for r in range(restarts)]
    best = None
    sweeps_total = 0
    for r, s in enumerate(seeds):
        A = np.tile(X / w.sum(), (n, 1))
        if r > 0 and n > 1 and len(dirs):
            rng = np.random.default_rng(s)
            Z = rng.normal(scale=scale0, size=(n, B.shape[1])) @ B.T
            Z -= (w @ Z) / w.sum()
            A = A + Z
        vals = np.array([w[i] * pop.agents[i][1].evaluate(space, A[i]) for i in range(n)])
        for sweep in range(max_sweeps):
            sweeps_total += 1
            changed = False
            scale = max(scale0, float(np.ptp(A, axis=1).max()))
            ladder = scale * 2.0 ** -np.arange(levels)
            steps = np.concatenate([ladder, -ladder])
            for i, j in itertools.combinations(range(n), 2):
                wi, wj = w[i], w[j]
                cand_i, cand_j, merge = [], [], []
                if len(dirs):
                    T = (steps[:, None, None] * dirs[None]).reshape(-1, space.d)
                    cand_i.append(A[i] + T / wi)
                    cand_j.append(A[j] - T / wj)
                    merge.extend([False] * len(T))
                ci, cj = A[i] @ p, A[j] @ p
                # j absorbed into i, i absorbed into j, common average
                cand_i += [(A[i] + (wj / wi) * (A[j] - cj))[None], np.full((1, space.d), ci),
                           ((wi * A[i] + wj * A[j]) / (wi + wj))[None]]
                cand_j += [np.full((1, space.d), cj), (A[j] + (wi / wj) * (A[i] - ci))[None],
                           ((wi * A[i] + wj * A[j]) / (wi + wj))[None]]
                # ties only count when two risky agents become one
                both = np.ptp(A[i]) > 1e-12 and np.ptp(A[j]) > 1e-12
                merge += [both, both, False]
                Ci, Cj = np.vstack(cand_i), np.vstack(cand_j)
                si, sj = pop.agents[i][1], pop.agents[j][1]
                tot = wi * si.evaluate(space, Ci) + wj * sj.evaluate(space, Cj)
                old = vals[i] + vals[j]
                k = int(np.argmin(tot))
                merge = np.array(merge)
                if tot[k] < old - tol * (1.0 + abs(old)):
                    pick = k
                else:
                    ties = np.flatnonzero(merge & (tot <= old + tol * (1.0 + abs(old))))
                    if ties.size == 0:
                        continue
                    pick = int(ties[0])
                A[i], A[j] = Ci[pick], Cj[pick]
                vals[i] = wi * si.evaluate(space, A[i])
                vals[j] = wj * sj.evaluate(space, A[j])
                changed = True
            if not changed:
                break
        total = float(vals.sum())
        if best is None or total < best[0] - 1e-15:
            best = (total, A.copy(), r)
    meta = {"method": "heuristic", "restarts": restarts, "seeds": seeds,
            "best_restart": best[2], "sweeps": sweeps_total}
    res = AllocationResult(best[0], best[1], meta=meta)
    if dual and partition is None:
        _attach_dual(res, pop, space, X, tables, dual_kw)
    return res


def solve(pop, space, X, *, method="auto", **kwargs):
    """Dispatch to the exact solver when it fits its budget, otherwise the heuristic."""
    if method == "auto":
        k = space.d if kwargs.get("partition") is None else len(kwargs["partition"].blocks)
        method = "exact" if pop.n <= 3 and k <= 4 else "heuristic"
    if method == "exact":
        kw = {k: v for k, v in kwargs.items() if k not in ("restarts", "seed", "max_sweeps", "levels")}
        return solve_exact(pop, space, X, **kw)
    if method == "heuristic":
        kw = {k: v for k, v in kwargs.items()
              if k not in ("points", "radius", "max_escalations", "budget", "h_min")}
        return solve_heuristic(pop, space, X, **kw)
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# value functions as risk measures


class ValueFunction(RiskMeasureSpec):
    """The population's value function, usable wherever a spec is expected.

    Evaluation runs the batched exact solver (small populations) or the
    heuristic row by row; solver options are passed through.
    """

    kind = "value_function"

    def __init__(self, pop, **solver):
        self.pop = pop
        self.solver = solver

    def __repr__(self):
        return f"ValueFunction({self.pop!r})"

    def _batch(self, space, X):
        if self.pop.n == 1:
            w, spec = self.pop.agents[0]
            return w * spec._batch(space, X / w)
        if self.pop.n <= 3 and space.d <= 4:
            kw = {k: v for k, v in self.solver.items()
                  if k in ("points", "radius", "max_escalations", "tol", "h_min", "budget")}
            vals, _, _ = solve_exact_batch(self.pop, space, X, **kw)
        else:
            kw = {k: v for k, v in self.solver.items() if k in ("restarts", "seed", "max_sweeps", "levels")}
            vals = [solve_heuristic(self.pop, space, x, dual=False, **kw).value for x in X]
        if any(not is_finite(v) for v in vals):
            raise ValueError("value function is not finite on the requested payoffs")
        return np.asarray(vals, dtype=float)

    def to_dict(self):
        return {"kind": self.kind, "population": self.pop.to_dict()}


def group_value(pop, group):
    """Value function of the agents in ``group`` (a closed form for singletons)."""
    sub = pop.subpopulation(group)
    if sub.n == 1:
        w, spec = sub.agents[0]
        return spec if w == 1.0 else Scaled(w, spec)
    return ValueFunction(sub)


def group_convolve(pop, groups, space, X, **solver):
    """Convolve group value functions: ``inf sum_B rho_B(Y_B)`` over ``sum_B Y_B = X``.

    Each ``rho_B`` is the value function of the agents in block ``B`` of the
    agent partition ``groups``. The returned allocation is per original
    agent, recovered by re-solving each group at its share ``Y_B``.
    """
    X = check_payoff(X, space.d)
    groups = [list(g) for g in groups]
    if any(len(g) == 0 for g in groups):
        raise ValueError("empty agent group")
    flat = sorted(i for g in groups for i in g)
    if flat != list(range(pop.n)):
        raise ValueError("groups must partition the agents")
    outer = AgentPopulation.unweighted([group_value(pop, g) for g in groups])
    res = solve(outer, space, X, dual=False, **solver)
    alloc = np.zeros((pop.n, space.d))
    for g, share in zip(groups, res.allocation):
        sub = pop.subpopulation(g)
        if sub.n == 1:
            alloc[g[0]] = share / sub.agents[0][0]
        else:
            alloc[g] = solve(sub, space, share, dual=False).allocation
    res.allocation = alloc
    res.meta = {"method": "group", "groups": groups, "outer": res.meta}
    return res


# ---------------------------------------------------------------------------
# improperness


@dataclass
class ImpropernessVerdict:
    improper: bool
    objectives: list = field(default_factory=list)
    scales: list = field(default_factory=list)
    witness: list = field(default_factory=list)
    direction: dict = None

    @property
    def label(self):
        return "MINUS_INF" if self.improper else "FINITE_SO_FAR"


def _transfer_dictionary(d, max_atoms=6):
    """Differences ``1_A - 1_B`` of indicators of disjoint atom sets, single atoms first.

    Beyond ``max_atoms`` only the single-atom differences are used.
    """
    out = []
    for k, l in itertools.permutations(range(d), 2):
        D = np.zeros(d)
        D[k], D[l] = 1.0, -1.0
        out.append((((k,), (l,)), D))
    if d > max_atoms:
        return out
    for labels in itertools.product((0, 1, -1), repeat=d):
        D = np.array(labels, dtype=float)
        A, B = tuple(np.flatnonzero(D > 0)), tuple(np.flatnonzero(D < 0))
        if not A or not B or (len(A) == 1 and len(B) == 1):
            continue
        out.append(((A, B), D))
    return out


def improperness_probe(pop, space, steps=7, X=None, threshold=IMPROPER_THRESHOLD, max_atoms=6):
    """Probe for a value of ``-inf`` along zero-sum transfers of growing size.

    For each pair of agents and each pair of disjoint atom sets ``(A, B)``,
    agent ``i`` receives ``K (1_A - 1_B) / w_i`` and agent ``j`` the opposite, for
    ``K = 1, 10, ..., 10^(steps-1)``. The value is declared ``-inf`` when
    the objective drops below ``-threshold`` and decreases at every scale.
    ``FINITE_SO_FAR`` is not a proof of finiteness.
    """
    if pop.n < 2:
        raise ValueError("improperness probe needs at least two agents")
    d = space.d
    X = np.zeros(d) if X is None else check_payoff(X, d)
    w = pop.weights
    base = np.tile(X / w.sum(), (pop.n, 1))
    Ks = 10.0 ** np.arange(steps)
    best = None
    for i, j in itertools.combinations(range(pop.n), 2):
        for (k, l), D in _transfer_dictionary(d, max_atoms=max_atoms):
            allocs = np.repeat(base[None], len(Ks), axis=0)
            allocs[:, i] += Ks[:, None] * D / w[i]
            allocs[:, j] -= Ks[:, None] * D / w[j]
            obj = objective(pop, space, allocs)
            if best is None or obj[-1] < best[0][-1]:
                best = (obj, allocs, {"agents": [i, j], "plus": [int(a) for a in k],
                                       "minus": [int(b) for b in l]})
    obj, allocs, direction = best
    improper = bool(obj[-1] < -threshold and np.all(np.diff(obj) < 0))
    return ImpropernessVerdict(improper=improper, objectives=obj.tolist(), scales=Ks.tolist(),
                               witness=[a.tolist() for a in allocs], direction=direction)


# ---------------------------------------------------------------------------
# conditioning


@dataclass
class ConditionalReduction:
    value_all: object
    value_g: object
    all_result: AllocationResult
    g_result: AllocationResult
    conditioned_value: float


def conditional_reduction(pop, space, partition, q, X, **solver):
    """Compare the value over all allocations with the value over ``G``-measurable ones.

    The restricted value is the better of a direct restricted solve and the
    allocation obtained by conditioning the unrestricted optimum on ``G``
    under ``q`` (which is feasible because ``X`` is ``G``-measurable). The
    unrestricted value is never reported above the restricted one, since
    every restricted allocation is also admissible there.
    """
    X = check_payoff(X, space.d)
    q = check_measure(q, space.d)
    if not partition.is_measurable(X, 1e-12):
        raise ValueError("X is not measurable with respect to the partition")
    full = solve(pop, space, X, dual=False, **solver)
    restricted = solve(pop, space, X, partition=partition, dual=False, **solver)
    conditioned = cond_expectation(q, full.allocation, partition, p=space.probs)
    cval = objective(pop, space, conditioned)
    if is_finite(restricted.value) and cval < restricted.value:
        restricted.value, restricted.allocation = cval, conditioned
        restricted.meta["from_conditioning"] = True
    # a G-measurable allocation is feasible for the unrestricted problem too
    if is_finite(full.value) and is_finite(restricted.value) and restricted.value < full.value:
        full.value, full.allocation = restricted.value, restricted.allocation.copy()
        full.meta["from_restricted"] = True
    return ConditionalReduction(full.value, restricted.value, full, restricted, float(cval))


__all__ = [
    "AgentPopulation",
    "AllocationResult",
    "BudgetExceeded",
    "ConditionalReduction",
    "GridMismatch",
    "ImpropernessVerdict",
    "UNWEIGHTED",
    "ValueFunction",
    "WEIGHTED",
    "conditional_reduction",
    "dual_lower_bound",
    "group_convolve",
    "group_value",
    "improperness_probe",
    "objective",
    "population_tables",
    "solve",
    "solve_exact",
    "solve_exact_batch",
    "solve_heuristic",
]
