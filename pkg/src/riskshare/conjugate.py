"""Numerical Fenchel conjugates of risk measures over the probability simplex.

For a probability vector ``q`` and a cash-additive ``rho`` the objective
``E^q[X] - rho(X)`` is invariant under adding constants to ``X``, so the
supremum is taken over payoffs in ``[0, M]^d`` with minimum coordinate 0.
Each box size ``M`` in the escalation schedule is scanned on a lattice,
the best lattice point is polished by pattern ascent, and the sequence of
running suprema decides between a finite value and divergence along a ray.
"""
import csv
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .markers import DIVERGED, MINUS_INF, Marker, is_finite
from .validation import check_measure, check_payoffs

DEFAULT_M = 10.0
DEFAULT_LEVELS = 3
DEFAULT_FACTOR = 10.0
DIVERGENCE_THRESHOLD = 1e6
# A supremum only counts as doubled once it exceeds this floor.
DOUBLING_FLOOR = 1e-6
STABLE_TOL = 1e-6


class CertificateInvalid(ValueError):
    """A finiteness certificate failed: some conjugate exceeds its bound."""


def default_simplex_divisions(d):
    return 20 if d <= 3 else 10


def simplex_grid(d, divisions, extra=()):
    """Lattice ``{k / divisions}`` on the simplex, plus any ``extra`` points not on it."""
    pts = [c for c in itertools.product(range(divisions + 1), repeat=d) if sum(c) == divisions]
    grid = np.array(pts, dtype=float) / divisions
    for e in extra:
        e = np.asarray(e, dtype=float)
        if not np.any(np.all(np.abs(grid - e) <= 1e-12, axis=1)):
            grid = np.vstack([grid, e])
    return grid


def _unit_payoff_grid(d, step):
    n = int(round(1.0 / step))
    if n < 1 or abs(n * step - 1.0) > 1e-9:
        raise ValueError(f"payoff step must divide 1, got {step}")
    axes = np.linspace(0.0, 1.0, n + 1)
    pts = np.array(list(itertools.product(axes, repeat=d)))
    return pts[pts.min(axis=1) == 0.0]


def _directions(d):
    """Ascent directions modulo constants: +-indicators of nonempty proper subsets."""
    if d == 1:
        return np.zeros((0, 1))
    rows = []
    if d <= 5:
        for r in range(1, d):
            for S in itertools.combinations(range(d), r):
                v = np.zeros(d)
                v[list(S)] = 1.0
                rows.append(v)
    else:
        for k in range(d):
            v = np.zeros(d)
            v[k] = 1.0
            rows.extend([v, -v])
    return np.array(rows)


@dataclass
class ConjugateValue:
    """Conjugate at one measure, with the evidence behind the verdict."""

    q: np.ndarray
    value: object  # float or DIVERGED
    status: str  # "finite" | "diverged" | "inconclusive"
    witness: np.ndarray
    witness_objective: float
    sups: list = field(default_factory=list)
    box_sizes: list = field(default_factory=list)

    @property
    def diverged(self):
        return self.value is DIVERGED


def _classify(sups, threshold):
    if sups[-1] > threshold:
        return "diverged"
    if len(sups) >= 2 and all(b >= 2.0 * a and b > DOUBLING_FLOOR
                              for a, b in zip(sups, sups[1:])):
        return "diverged"
    if len(sups) < 2 or sups[-1] - sups[-2] <= STABLE_TOL * max(1.0, abs(sups[-1])):
        return "finite"
    return "inconclusive"


class _Scanner:
    """Shared machinery for conjugates at many measures of one spec."""

    def __init__(self, spec, space, M=DEFAULT_M, step=0.1, levels=DEFAULT_LEVELS,
                 factor=DEFAULT_FACTOR, threshold=DIVERGENCE_THRESHOLD, polish=True,
                 polish_tol=1e-9, max_iter=5000):
        if not M > 0 or not step > 0:
            raise ValueError("box size M and payoff step must be positive")
        if levels < 1:
            raise ValueError("need at least one escalation level")
        spec.validate(space)
        self.spec = spec
        self.space = space
        self.boxes = [M * factor ** k for k in range(levels)]
        self.step = step
        self.threshold = threshold
        self.polish = polish
        self.polish_tol = polish_tol
        self.max_iter = max_iter
        self.unit = _unit_payoff_grid(space.d, step)
        self.dirs = _directions(space.d)
        self._rho = {}

    def _grid_values(self, M):
        if M not in self._rho:
            pts = M * self.unit
            self._rho[M] = (pts, self.spec._batch(self.space, pts))
        return self._rho[M]

    def _objective(self, Q, X):
        """``E^q X - rho(X)`` for row-aligned ``Q`` and ``X`` of shape (m, d)."""
        return np.einsum("ij,ij->i", X, Q) - self.spec._batch(self.space, X)

    def _polish(self, Q, X, f, M):
        X, f = X.copy(), f.copy()
        h = np.full(len(f), M * self.step)
        active = np.ones(len(f), dtype=bool)
        D = self.dirs
        if len(D) == 0:
            return X, f
        for _ in range(self.max_iter):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            cand = X[idx, None, :] + h[idx, None, None] * D[None, :, :]
            cand -= cand.min(axis=2, keepdims=True)
            ok = cand.max(axis=2) <= M * (1 + 1e-12)
            flat = cand.reshape(-1, X.shape[1])
            vals = self._objective(np.repeat(Q[idx], len(D), axis=0), flat).reshape(len(idx), len(D))
            vals[~ok] = -np.inf
            j = np.argmax(vals, axis=1)
            best = vals[np.arange(len(idx)), j]
            gain = best > f[idx] + 1e-15 * (1.0 + np.abs(f[idx]))
            up = idx[gain]
            X[up] = cand[gain, j[gain]]
            f[up] = best[gain]
            h[up] = np.minimum(2.0 * h[up], M * self.step)
            stall = idx[~gain]
            h[stall] *= 0.5
            active[stall] = h[stall] >= self.polish_tol
        return X, f

    def run(self, Qs):
        Qs = np.atleast_2d(np.asarray(Qs, dtype=float))
        m = len(Qs)
        sups = np.full(m, -np.inf)
        wit = np.zeros_like(Qs)
        history = [[] for _ in range(m)]
        prev_box = None
        for M in self.boxes:
            pts, rho = self._grid_values(M)
            obj = Qs @ pts.T - rho[None, :]
            j = np.argmax(obj, axis=1)
            gx, gf = pts[j], obj[np.arange(m), j]
            if self.polish:
                # Polish where the lattice found new ground, or where the incumbent
                # was pinned to the previous box and may move further out.
                need = gf > sups
                if prev_box is not None:
                    pinned = ~need & (wit.max(axis=1) >= prev_box * (1 - 1e-9))
                    gx[pinned], gf[pinned] = wit[pinned], sups[pinned]
                    need |= pinned
                if np.any(need):
                    px, pf = self._polish(Qs[need], gx[need], gf[need], M)
                    gx[need], gf[need] = px, pf
            prev_box = M
            better = gf > sups
            sups[better] = gf[better]
            wit[better] = gx[better]
            for i in range(m):
                history[i].append(float(sups[i]))
        out = []
        for i in range(m):
            status = _classify(history[i], self.threshold)
            w, wf = wit[i], float(sups[i])
            if status == "diverged":
                w, wf = self._escape(Qs[i], w, wf)
                value = DIVERGED
            else:
                value = float(sups[i])
            out.append(ConjugateValue(q=Qs[i], value=value, status=status, witness=w,
                                      witness_objective=wf, sups=history[i],
                                      box_sizes=list(self.boxes)))
        return out

    def _escape(self, q, x, fx):
        """Push a divergent witness along its ray until it beats the threshold."""
        best, bf, t = x, fx, 1.0
        while bf <= self.threshold and t < 1e30:
            t *= 10.0
            val = float(self._objective(q[None, :], (t * x)[None, :])[0])
            if val <= bf:
                break
            best, bf = t * x, val
        return best, bf


def conj_details(spec, space, q, M=DEFAULT_M, step=0.1, **kwargs):
    q = check_measure(q, space.d)
    return _Scanner(spec, space, M=M, step=step, **kwargs).run(q[None, :])[0]


def conj(spec, space, q, M=DEFAULT_M, step=0.1, **kwargs):
    """Fenchel conjugate ``sup_X E^q[X] - rho(X)``, or ``DIVERGED``."""
    return conj_details(spec, space, q, M=M, step=step, **kwargs).value


@dataclass
class ConjugateTable:
    """Conjugate sampled on a simplex grid, aligned row by row."""

    grid: np.ndarray
    values: list
    status: list
    witnesses: np.ndarray
    box_bound: float
    grid_step: float
    payoff_step: float

    def __len__(self):
        return len(self.values)

    @property
    def finite_mask(self):
        """Entries classified finite; inconclusive ones are kept out of dual bounds."""
        return np.array([s == "finite" for s in self.status])

    def finite_values(self):
        mask = self.finite_mask
        return self.grid[mask], np.array([v for v, ok in zip(self.values, mask) if ok], dtype=float)

    def lookup(self, q, tol=1e-9):
        hit = np.flatnonzero(np.all(np.abs(self.grid - np.asarray(q)) <= tol, axis=1))
        if hit.size == 0:
            raise KeyError(f"measure {q!r} not on the table grid")
        return self.values[hit[0]]

    def to_csv(self, path_or_file):
        d = self.grid.shape[1]
        header = [f"q_{k}" for k in range(d)] + ["value", "diverged", "status"] + \
                 [f"witness_{k}" for k in range(d)]
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            writer = csv.writer(fh)
            writer.writerow(header)
            for q, v, s, w in zip(self.grid, self.values, self.status, self.witnesses):
                writer.writerow([repr(float(a)) for a in q]
                                + ["" if v is DIVERGED else repr(float(v)), int(v is DIVERGED), s]
                                + [repr(float(a)) for a in w])
        finally:
            if own:
                fh.close()


def conj_table(spec, space, step=None, M=DEFAULT_M, payoff_step=0.1, threads=1, **kwargs):
    """Conjugate over the simplex lattice of spacing ``step`` (plus P and vertices).

    ``threads > 1`` splits the grid into chunks evaluated concurrently; rows
    are reassembled by grid index, so the table does not depend on scheduling.
    """
    d = space.d
    divisions = default_simplex_divisions(d) if step is None else int(round(1.0 / step))
    grid = simplex_grid(d, divisions, extra=[space.probs])
    scanner = _Scanner(spec, space, M=M, step=payoff_step, **kwargs)
    if threads > 1 and len(grid) > threads:
        for box in scanner.boxes:
            scanner._grid_values(box)
        chunks = np.array_split(np.arange(len(grid)), threads)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda ix: scanner.run(grid[ix]), chunks))
        results = [r for part in parts for r in part]
    else:
        results = scanner.run(grid)
    return ConjugateTable(
        grid=grid,
        values=[r.value for r in results],
        status=[r.status for r in results],
        witnesses=np.array([r.witness for r in results]),
        box_bound=scanner.boxes[-1],
        grid_step=1.0 / divisions,
        payoff_step=payoff_step,
    )


def biconj(spec, space, X, table):
    """``max_q E^q[X] - rho*(q)`` over the finite table entries.

    Returns ``MINUS_INF`` when every entry diverged. ``spec`` is only used to
    check dimensions; the table carries all information.
    """
    arr, single = check_payoffs(X, space.d)
    if len(table) == 0:
        raise ValueError("empty conjugate table")
    Q, v = table.finite_values()
    if len(v) == 0:
        return MINUS_INF if single else [MINUS_INF] * len(arr)
    vals = (arr @ Q.T - v[None, :]).max(axis=1)
    return float(vals[0]) if single else vals


@dataclass
class DegeneracyVerdict:
    degenerate: bool
    witness_q: np.ndarray = None
    witness_value: float = None
    escape_direction: np.ndarray = None
    inconclusive: bool = False
    table: ConjugateTable = None


def detect_degeneracy(spec, space, escalation=(10.0, 100.0, 1000.0), step=None,
                      payoff_step=0.1, **kwargs):
    """Decide whether ``rho*`` is identically ``+inf`` on the simplex grid.

    ``escalation`` is a geometric schedule of box sizes. Non-degenerate
    verdicts carry a measure with finite conjugate (the reference measure when
    possible); degenerate ones carry a payoff direction along which the
    conjugate objective at the reference measure blows up.
    """
    esc = [float(m) for m in escalation]
    if len(esc) < 1 or any(b <= a for a, b in zip(esc, esc[1:])) or esc[0] <= 0:
        raise ValueError("escalation must be an increasing sequence of positive box sizes")
    factor = esc[1] / esc[0] if len(esc) > 1 else DEFAULT_FACTOR
    if any(abs(b / a - factor) > 1e-9 * factor for a, b in zip(esc, esc[1:])):
        raise ValueError("escalation must be geometric")
    table = conj_table(spec, space, step=step, M=esc[0], payoff_step=payoff_step,
                       levels=len(esc), factor=factor, **kwargs)
    finite = [i for i, s in enumerate(table.status) if s == "finite"]
    if finite:
        ref = [i for i in finite if np.allclose(table.grid[i], space.probs, atol=1e-12)]
        i = ref[0] if ref else finite[0]
        return DegeneracyVerdict(False, witness_q=table.grid[i],
                                 witness_value=float(table.values[i]), table=table)
    if any(s == "inconclusive" for s in table.status):
        return DegeneracyVerdict(False, inconclusive=True, table=table)
    ref = [i for i in range(len(table)) if np.allclose(table.grid[i], space.probs, atol=1e-12)]
    return DegeneracyVerdict(True, escape_direction=table.witnesses[ref[0]], table=table)


@dataclass(frozen=True)
class AffineMinorant:
    """``X -> E^q[X] - intercept``, a lower bound on a value function."""

    q: tuple
    intercept: float

    def __call__(self, X):
        return np.asarray(X, dtype=float) @ np.asarray(self.q) - self.intercept


def finiteness_certificate(pop, space, q, xi, M=DEFAULT_M, step=0.1, tol=1e-9, **kwargs):
    """Affine minorant ``E^q[X] - sum_i w_i xi_i`` of the value function.

    Valid only if ``rho_i*(q) <= xi_i`` for every agent; this is checked
    numerically and ``CertificateInvalid`` is raised otherwise.
    """
    q = check_measure(q, space.d)
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (len(pop.agents),):
        raise ValueError("need one bound xi_i per agent")
    for i, (w, spec) in enumerate(pop.agents):
        v = conj(spec, space, q, M=M, step=step, **kwargs)
        if not is_finite(v) or v > xi[i] + tol:
            raise CertificateInvalid(f"agent {i}: conjugate {v} exceeds bound {xi[i]}")
    weights = np.array([w for w, _ in pop.agents])
    return AffineMinorant(tuple(q.tolist()), float(weights @ xi))


__all__ = [
    "AffineMinorant",
    "CertificateInvalid",
    "ConjugateTable",
    "ConjugateValue",
    "DegeneracyVerdict",
    "Marker",
    "biconj",
    "conj",
    "conj_details",
    "conj_table",
    "detect_degeneracy",
    "finiteness_certificate",
    "simplex_grid",
]
