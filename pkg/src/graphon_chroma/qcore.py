"""Optimization core over symmetric nonnegative weight matrices.

Everything in this module works with a k x k symmetric matrix Q with
nonnegative entries and vectors x in R_+^k.  The two central quantities are

    w(x)  = max over 0 <= y <= x (componentwise) of  y^T Q y / |y|_1,

which is always attained at a "corner" (every coordinate of y is either 0
or x_i) and is therefore computed by exact enumeration, and

    w_star(x) = cheapest way to split x into finitely many nonnegative
                parts summing to x, paying w(part) for each part.

A system of at most k parts always suffices for the infimum.  `w_star`
combines an exact support-pattern enumeration (for up to 3 active
coordinates) with multi-start Nelder-Mead local search over a
sum-preserving softmax parametrization.

Block indices are 0-based throughout.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations

import numpy as np
import scipy.linalg
import scipy.optimize

__all__ = [
    "QMatrix",
    "CornerWitness",
    "VectorSystem",
    "OptimizerConfig",
    "rayleigh_ratio",
    "w_corner",
    "minimal_corner",
    "w_grid_oracle",
    "pseudodefinite_check",
    "balanced_optimality_check",
    "w_star",
    "w_star_bounds",
]

# Eigenvalues above -PSD_TOL count as nonnegative (floating-point projection
# of exact-zero eigenvalues).
PSD_TOL = 1e-10

_CORNER_LIMIT = 25     # corner enumeration is 2^(active coordinates)
_GRID_LIMIT = 4        # grid oracle cost is resolution^k
_WSTAR_LIMIT = 12      # each inner w evaluation enumerates 2^k corners
_CHUNK = 1 << 16
_DUST_SHARE = 1e-8     # coordinate shares below this are optimizer dust


class QMatrix:
    """Symmetric k x k matrix of nonnegative finite weights.

    Attributes:
        entries: read-only (k, k) float array.
        k: number of rows/columns.
    """

    __slots__ = ("entries", "k")

    def __init__(self, entries):
        arr = np.asarray(entries, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"weight matrix must be square, got shape {arr.shape}")
        if arr.shape[0] < 1:
            raise ValueError("weight matrix must have at least one row")
        if not np.all(np.isfinite(arr)):
            raise ValueError("weight matrix entries must be finite")
        scale = max(1.0, float(np.abs(arr).max()))
        if np.abs(arr - arr.T).max() > 1e-12 * scale:
            raise ValueError("weight matrix must be symmetric")
        if arr.min() < 0:
            raise ValueError("weight matrix entries must be nonnegative")
        arr = 0.5 * (arr + arr.T)
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)
        object.__setattr__(self, "k", arr.shape[0])

    def __setattr__(self, name, value):
        raise AttributeError("QMatrix is immutable")

    def __repr__(self):
        return f"QMatrix(k={self.k})"

    @property
    def q_star(self) -> float:
        """Largest diagonal entry."""
        return float(np.max(np.diag(self.entries)))

    def q_hat(self, x) -> float:
        """Diagonal weights averaged against x; equals q_star for x = 0."""
        x = _check_vector(x, self.k)
        nrm = float(x.sum())
        if nrm == 0.0:
            return self.q_star
        return float(np.dot(x, np.diag(self.entries)) / nrm)


@dataclass(frozen=True)
class CornerWitness:
    """A corner 0/x_i vector together with its attained ratio.

    `support` lists the coordinates where the vector equals x_i (0-based,
    sorted).  `value` is the ratio vector^T Q vector / |vector|_1.
    """

    support: tuple
    vector: np.ndarray
    value: float


@dataclass(frozen=True)
class VectorSystem:
    """A finite system of nonnegative vectors summing to `target`.

    `total_cost` is the sum of w over the vectors.  The system never has
    more vectors than coordinates.
    """

    vectors: tuple
    target: np.ndarray
    total_cost: float

    def __post_init__(self):
        k = len(self.target)
        if len(self.vectors) > k:
            raise ValueError("system has more vectors than coordinates")
        tot = np.zeros(k)
        for v in self.vectors:
            if len(v) != k:
                raise ValueError("system vector has wrong length")
            if np.min(v, initial=0.0) < 0:
                raise ValueError("system vectors must be nonnegative")
            tot += v
        if np.abs(tot - self.target).max() > 1e-9:
            raise ValueError("system vectors do not sum to the target")

    def norms(self):
        return [float(v.sum()) for v in self.vectors]


@dataclass(frozen=True)
class OptimizerConfig:
    """Search-budget knobs for `w_star`.

    multistarts: total number of Nelder-Mead starts (0 disables the local
        search; the exact small-support enumeration still runs).
    max_iterations: Nelder-Mead iteration cap per start.
    seed: master seed; start s derives its randomness from (seed, s) so
        results do not depend on scheduling.
    improvement_tol / patience: stop early once the best value has not
        improved by more than improvement_tol over `patience` consecutive
        starts.
    threads: worker threads for the starts; None reads
        GRAPHON_CHROMA_THREADS (default 1).
    """

    multistarts: int = 64
    max_iterations: int = 1500
    seed: int = 0
    improvement_tol: float = 1e-10
    patience: int = 200
    threads: int | None = None


def _check_vector(y, k):
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.shape[0] != k:
        raise ValueError(f"expected a length-{k} vector, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("vector entries must be finite")
    return y


def _resolve_threads(cfg: OptimizerConfig) -> int:
    if cfg.threads is not None:
        return max(1, int(cfg.threads))
    raw = os.environ.get("GRAPHON_CHROMA_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def rayleigh_ratio(y, Q: QMatrix) -> float:
    """Ratio y^T Q y / |y|_1, with the zero vector mapped to 0.

    Raises ValueError on a dimension mismatch or negative coordinates.
    """
    y = _check_vector(y, Q.k)
    if y.min(initial=0.0) < 0:
        raise ValueError("vector coordinates must be nonnegative")
    nrm = float(y.sum())
    if nrm == 0.0:
        return 0.0
    return float(y @ Q.entries @ y / nrm)


def _subset_masks(m: int) -> np.ndarray:
    return ((np.arange(1 << m)[:, None] >> np.arange(m)[None, :]) & 1).astype(float)


def _corner_scan(xa, Qa):
    """Values and norms of all 2^len(xa) corners (chunked for large supports)."""
    ka = xa.size
    total = 1 << ka
    vals = np.empty(total)
    dens = np.empty(total)
    shifts = np.arange(ka)
    for start in range(0, total, _CHUNK):
        stop = min(start + _CHUNK, total)
        masks = ((np.arange(start, stop)[:, None] >> shifts[None, :]) & 1).astype(float)
        corners = masks * xa[None, :]
        t = corners @ Qa
        vals[start:stop] = np.einsum("si,si->s", t, corners)
        dens[start:stop] = corners.sum(axis=1)
    np.divide(vals, dens, out=vals, where=dens > 0)
    vals[dens == 0] = 0.0
    return vals, dens


def w_corner(x, Q: QMatrix) -> CornerWitness:
    """Maximizing corner of y -> y^T Q y / |y|_1 over 0 <= y <= x.

    Enumerates the 2^m corners over the m nonzero coordinates of x.  Ties
    (values equal up to 1e-12 relative) are broken by smallest 1-norm
    first, then by lexicographically smallest support, which makes the
    result the canonical minimal maximizer.
    """
    x = _check_vector(x, Q.k)
    if x.min(initial=0.0) < 0:
        raise ValueError("vector coordinates must be nonnegative")
    active = np.flatnonzero(x > 0)
    if active.size > _CORNER_LIMIT:
        raise ValueError(
            f"corner enumeration limited to {_CORNER_LIMIT} nonzero coordinates, got {active.size}"
        )
    if active.size == 0:
        return CornerWitness(support=(), vector=np.zeros(Q.k), value=0.0)
    xa = x[active]
    Qa = Q.entries[np.ix_(active, active)]
    vals, dens = _corner_scan(xa, Qa)
    vmax = float(vals.max())
    thresh = vmax - 1e-12 * max(1.0, abs(vmax))
    cand = np.flatnonzero(vals >= thresh)
    min_norm = dens[cand].min()
    norm_tol = 1e-9 * max(1.0, float(x.sum()))
    best = None
    best_support = None
    for s in cand:
        if dens[s] > min_norm + norm_tol:
            continue
        support = tuple(int(active[i]) for i in range(active.size) if (s >> i) & 1)
        if best_support is None or support < best_support:
            best, best_support = int(s), support
    vector = np.zeros(Q.k)
    vector[list(best_support)] = x[list(best_support)]
    return CornerWitness(support=best_support, vector=vector, value=float(vals[best]))


def minimal_corner(x, Q: QMatrix) -> CornerWitness:
    """Among all maximizing corners, the one of minimal 1-norm.

    `w_corner` already applies the smallest-norm-then-lexicographic tie
    break, so this is the same computation under its defining name.
    """
    return w_corner(x, Q)


def w_grid_oracle(x, Q: QMatrix, resolution: int) -> float:
    """Brute-force grid maximum of the ratio over the box [0, x].

    Scans y with y_i = (j / resolution) * x_i for all j in 0..resolution.
    The grid contains every corner, so the result can never exceed the
    corner maximum by more than floating-point noise, and interior grid
    points directly probe the corner-attainment claim.  Cost grows as
    resolution^k; only k <= 4 is allowed.
    """
    x = _check_vector(x, Q.k)
    if x.min(initial=0.0) < 0:
        raise ValueError("vector coordinates must be nonnegative")
    if Q.k > _GRID_LIMIT:
        raise ValueError(f"grid oracle limited to k <= {_GRID_LIMIT}, got k = {Q.k}")
    resolution = int(resolution)
    if resolution < 1:
        raise ValueError("resolution must be a positive integer")

    k = Q.k
    ha = k - k // 2
    idx_a = list(range(ha))
    idx_b = list(range(ha, k))

    def axis_points(indices):
        if not indices:
            return np.zeros((1, 0))
        axes = [np.linspace(0.0, x[i], resolution + 1) for i in indices]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    ya = axis_points(idx_a)
    yb = axis_points(idx_b)
    Qaa = Q.entries[np.ix_(idx_a, idx_a)]
    Qbb = Q.entries[np.ix_(idx_b, idx_b)]
    Qab = Q.entries[np.ix_(idx_a, idx_b)]
    qa = np.einsum("si,ij,sj->s", ya, Qaa, ya) if idx_a else np.zeros(1)
    qb = np.einsum("si,ij,sj->s", yb, Qbb, yb) if idx_b else np.zeros(1)
    na = ya.sum(axis=1)
    nb = yb.sum(axis=1)
    if not idx_b:
        vals = np.divide(qa, na, out=np.zeros_like(qa), where=na > 0)
        return float(vals.max())
    ra = ya @ Qab

    best = 0.0
    rows = max(1, (1 << 22) // max(1, yb.shape[0]))
    for start in range(0, ya.shape[0], rows):
        stop = min(start + rows, ya.shape[0])
        num = qa[start:stop, None] + qb[None, :] + 2.0 * (ra[start:stop] @ yb.T)
        den = na[start:stop, None] + nb[None, :]
        vals = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
        best = max(best, float(vals.max()))
    return best


def pseudodefinite_check(Q: QMatrix, support) -> bool:
    """Whether Q restricted to `support` is PSD on the zero-sum hyperplane.

    Builds an orthonormal basis of {y : sum of y_i = 0} over the support
    coordinates and tests the projected matrix's minimum eigenvalue against
    -PSD_TOL.  A singleton support is trivially pseudodefinite.
    """
    support = sorted({int(i) for i in support})
    if not support:
        raise ValueError("support must be nonempty")
    if support[0] < 0 or support[-1] >= Q.k:
        raise ValueError("support indices out of range")
    m = len(support)
    if m == 1:
        return True
    basis = scipy.linalg.null_space(np.ones((1, m)))
    sub = Q.entries[np.ix_(support, support)]
    proj = basis.T @ sub @ basis
    proj = 0.5 * (proj + proj.T)
    return bool(np.linalg.eigvalsh(proj)[0] >= -PSD_TOL)


def balanced_optimality_check(x, Q: QMatrix) -> bool:
    """True when splitting x cannot beat the single-vector cost w(x).

    Holds exactly when Q restricted to the support of the minimal
    maximizing corner is PSD on the zero-sum hyperplane.
    """
    witness = minimal_corner(x, Q)
    if not witness.support:
        return True
    return pseudodefinite_check(Q, witness.support)


def w_star_bounds(x, Q: QMatrix):
    """A-priori bracket (lower, upper) for the optimal system cost of x.

    upper = q_hat(x) * |x|_1 (achieved by splitting x along the axes);
    lower = q_hat(x)^2 * |x|_1 / trace(Q) when the largest diagonal entry
    is positive, else 0.
    """
    x = _check_vector(x, Q.k)
    nrm = float(x.sum())
    qh = Q.q_hat(x)
    upper = qh * nrm
    diag_sum = float(np.trace(Q.entries))
    lower = (qh * qh * nrm / diag_sum) if Q.q_star > 0 else 0.0
    return lower, upper


# ---------------------------------------------------------------------------
# w_star machinery


class _WorkSpace:
    """Shared state for one w_star solve, restricted to active coordinates."""

    def __init__(self, xa, Qa, n_vectors):
        self.xa = xa
        self.Qa = Qa
        self.ka = xa.size
        self.T = n_vectors
        self.masks = _subset_masks(self.ka)

    def row_values(self, mat):
        """Corner maximum of the ratio for each row of mat (rows <= xa not required)."""
        C = mat[:, None, :] * self.masks[None, :, :]
        t = C @ self.Qa
        nums = np.einsum("rsi,rsi->rs", t, C)
        dens = C.sum(axis=2)
        vals = np.divide(nums, dens, out=np.zeros_like(nums), where=dens > 0)
        return vals.max(axis=1)

    def system_value(self, mat) -> float:
        return float(self.row_values(mat).sum())

    def unpack(self, params):
        theta = np.zeros((self.T, self.ka))
        theta[1:] = params.reshape(self.T - 1, self.ka)
        theta -= theta.max(axis=0, keepdims=True)
        A = np.exp(theta)
        A /= A.sum(axis=0, keepdims=True)
        return A * self.xa[None, :]

    def pack(self, mat):
        """Parameters whose softmax reproduces the column shares of mat."""
        A = np.zeros((self.T, self.ka))
        rows = min(mat.shape[0], self.T)
        A[:rows] = mat[:rows] / self.xa[None, :]
        A = np.clip(A, 1e-12, None)
        A /= A.sum(axis=0, keepdims=True)
        theta = np.log(A)
        theta -= theta[0]
        return theta[1:].ravel()


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def _golden(f, lo, hi, iters=60):
    """Golden-section minimization on [lo, hi] with a fixed iteration count.

    Fixed count keeps the search deterministic and scale-equivariant.
    Returns the best evaluated (point, value).
    """
    best_x, best_f = lo, f(lo)
    for x in (hi, 0.5 * (lo + hi)):
        fx = f(x)
        if fx < best_f:
            best_x, best_f = x, fx
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
            if fc < best_f:
                best_x, best_f = c, fc
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
            if fd < best_f:
                best_x, best_f = d, fd
    return best_x, best_f


def _enumerate_support_families(ws: _WorkSpace):
    """Exact search over support-pattern families with at most 2 free splits.

    Every family assigns each vector a support; coordinates shared by
    several supports contribute free split fractions.  Families with more
    than two free dimensions are left to the multi-start local search.
    Yields (value, system matrix) candidates; exact up to the golden-section
    refinement for the families it covers.
    """
    ka, T = ws.ka, ws.T
    supports = []
    for size in range(1, ka + 1):
        supports.extend(combinations(range(ka), size))
    out = []
    for fam_size in range(1, T + 1):
        for family in combinations(supports, fam_size):
            owners = [[t for t, sup in enumerate(family) if i in sup] for i in range(ka)]
            if any(not o for o in owners):
                continue
            dims = sum(len(o) - 1 for o in owners)
            if dims > 2:
                continue
            out.append(_refine_family(ws, family, owners, dims))
    return out

def _family_matrix(ws, family, owners, params):
    mat = np.zeros((len(family), ws.ka))
    pos = 0
    for i, own in enumerate(owners):
        if len(own) == 1:
            fracs = (1.0,)
        elif len(own) == 2:
            u = params[pos]
            pos += 1
            fracs = (u, 1.0 - u)
        else:  # three owners: map the unit square onto the simplex
            u, v = params[pos], params[pos + 1] * (1.0 - params[pos])
            pos += 2
            fracs = (u, v, 1.0 - u - v)
        for frac, t in zip(fracs, own):
            mat[t, i] = ws.xa[i] * frac
    return mat


def _refine_family(ws, family, owners, dims):
    def value_at(params):
        return ws.system_value(_family_matrix(ws, family, owners, params))

    if dims == 0:
        params = np.zeros(0)
        return value_at(params), _family_matrix(ws, family, owners, params)
    if dims == 1:
        grid = np.linspace(0.0, 1.0, 65)
        vals = [value_at(np.array([u])) for u in grid]
        j = int(np.argmin(vals))
        lo = grid[max(0, j - 1)]
        hi = grid[min(len(grid) - 1, j + 1)]
        u, _ = _golden(lambda t: value_at(np.array([t])), lo, hi)
        params = np.array([u])
        return value_at(params), _family_matrix(ws, family, owners, params)
    # dims == 2: coarse scan, then coordinate-wise golden refinement
    grid = np.linspace(0.0, 1.0, 21)
    best = None
    for u in grid:
        for v in grid:
            val = value_at(np.array([u, v]))
            if best is None or val < best[0]:
                best = (val, u, v)
    _, u, v = best
    h = grid[1] - grid[0]
    for _ in range(3):
        u, _ = _golden(lambda t: value_at(np.array([t, v])), max(0.0, u - 1.5 * h), min(1.0, u + 1.5 * h), iters=40)
        v, _ = _golden(lambda t: value_at(np.array([u, t])), max(0.0, v - 1.5 * h), min(1.0, v + 1.5 * h), iters=40)
    params = np.array([u, v])
    return value_at(params), _family_matrix(ws, family, owners, params)


def _nelder_mead(ws: _WorkSpace, params0, cfg: OptimizerConfig):
    def objective(p):
        return ws.system_value(ws.unpack(p))

    f0 = objective(params0)
    res = scipy.optimize.minimize(
        objective,
        params0,
        method="Nelder-Mead",
        options={
            "maxiter": cfg.max_iterations,
            "maxfev": 4 * cfg.max_iterations,
            "xatol": 1e-8,
            # relative fatol keeps the search path invariant under scaling of x
            "fatol": 1e-11 * (1.0 + abs(f0)),
            "adaptive": True,
        },
    )
    mat = ws.unpack(res.x)
    return ws.system_value(mat), mat


def _lp_reduce(ws: _WorkSpace, mat, limit):
    """Re-select system norms by linear programming, cutting the size.

    Minimizing sum(lambda_t * w(u_t)) over lambda >= 0 with
    sum(lambda_t * u_t) = x never increases the value (the current norms
    are feasible), and a basic optimum has at most ka nonzero entries.
    """
    norms = mat.sum(axis=1)
    keep = norms > 1e-15 * max(1.0, ws.xa.sum())
    mat = mat[keep]
    norms = norms[keep]
    if mat.shape[0] <= limit:
        return mat
    units = mat / norms[:, None]
    costs = ws.row_values(units)
    res = scipy.optimize.linprog(
        costs,
        A_eq=units.T,
        b_eq=ws.xa,
        bounds=(0, None),
        method="highs-ds",
    )
    if res.status == 0:
        lam = res.x
        sel = lam > 1e-12 * max(1.0, ws.xa.sum())
        reduced = units[sel] * lam[sel, None]
        # repair the (solver-tolerance sized) residual coordinate by coordinate
        resid = ws.xa - reduced.sum(axis=0)
        for i in np.flatnonzero(np.abs(resid) > 0):
            t = int(np.argmax(reduced[:, i]))
            reduced[t, i] = max(0.0, reduced[t, i] + resid[i])
        mat = reduced
    while mat.shape[0] > limit:
        mat = _merge_cheapest_pair(ws, mat)
    return mat


def _merge_cheapest_pair(ws, mat):
    m = mat.shape[0]
    vals = ws.row_values(mat)
    best = None
    for i in range(m):
        for j in range(i + 1, m):
            delta = ws.system_value((mat[i] + mat[j])[None, :]) - vals[i] - vals[j]
            if best is None or delta < best[0]:
                best = (delta, i, j)
    _, i, j = best
    merged = [mat[t] for t in range(m) if t not in (i, j)]
    merged.append(mat[i] + mat[j])
    return np.array(merged)


def _canonicalize(ws: _WorkSpace, mat, limit):
    """Clean a raw system: strip dust, merge equal supports, cap the size."""
    scale = ws.xa.sum()
    mat = mat[mat.sum(axis=1) > 1e-15 * max(1.0, scale)].copy()
    if mat.shape[0] == 0:
        return mat
    # move optimizer dust onto the dominant holder of each coordinate
    for i in range(ws.ka):
        col = mat[:, i]
        total = col.sum()
        if total <= 0:
            continue
        shares = col / total
        dusty = (shares > 0) & (shares < _DUST_SHARE)
        if dusty.any():
            top = int(np.argmax(col))
            mat[top, i] += col[dusty].sum()
            mat[dusty, i] = 0.0
    mat = mat[mat.sum(axis=1) > 1e-15 * max(1.0, scale)]
    # merge vectors with identical supports when it does not raise the cost
    merged = []
    by_support = {}
    for row in mat:
        sup = tuple(np.flatnonzero(row > 0))
        by_support.setdefault(sup, []).append(row)
    for sup, rows in by_support.items():
        while len(rows) > 1:
            a, b = rows[0], rows[1]
            before = ws.system_value(np.array([a, b]))
            after = ws.system_value((a + b)[None, :])
            if after <= before + 1e-12 * max(1.0, before):
                rows = [a + b] + rows[2:]
            else:
                break
        merged.extend(rows)
    mat = np.array(merged)
    if mat.shape[0] > limit:
        mat = _lp_reduce(ws, mat, limit)
    order = sorted(
        range(mat.shape[0]),
        key=lambda t: (tuple(np.flatnonzero(mat[t] > 0)), -mat[t].sum()),
    )
    return mat[order]


def w_star(x, Q: QMatrix, cfg: OptimizerConfig | None = None,
           max_vectors: int | None = None, seed_systems=None) -> VectorSystem:
    """Best found splitting of x into at most k vectors minimizing total w.

    The search always evaluates the single-vector system and the
    axis-aligned split, runs the exact support enumeration when at most 3
    coordinates of x are nonzero, and refines with `cfg.multistarts`
    Nelder-Mead starts over the softmax share parametrization (starts are
    seeded from (cfg.seed, start index), so the result is reproducible).

    `seed_systems` supplies extra candidate systems (each a sequence of
    vectors summing to x); they are evaluated as-is and after a
    size-reduction, which makes cost subadditivity hold by construction
    when seeding with the union of two witnesses.

    `max_vectors` caps the system size below k (useful for restricted-type
    splits); the a-priori upper bracket is only enforced for the
    unrestricted case.

    Raises ValueError for more than 12 nonzero coordinates and
    RuntimeError when the result violates its a-priori bracket (which
    would signal a bug, not a convergence warning).
    """
    if cfg is None:
        cfg = OptimizerConfig()
    x = _check_vector(x, Q.k)
    if x.min(initial=0.0) < 0:
        raise ValueError("vector coordinates must be nonnegative")
    k = Q.k
    cap = k if max_vectors is None else int(max_vectors)
    if cap < 1 or cap > k:
        raise ValueError("max_vectors must be between 1 and k")
    active = np.flatnonzero(x > 0)
    ka = active.size
    if ka == 0:
        return VectorSystem(vectors=(), target=x.copy(), total_cost=0.0)
    if ka > _WSTAR_LIMIT:
        raise ValueError(
            f"system optimization limited to {_WSTAR_LIMIT} nonzero coordinates, got {ka}"
        )
    T = min(cap, ka)
    xa = x[active].copy()
    Qa = Q.entries[np.ix_(active, active)]
    ws = _WorkSpace(xa, Qa, T)

    candidates = []  # (value, matrix) in insertion order; first minimum wins

    def add(mat):
        val = ws.system_value(mat)
        candidates.append((val, mat))
        return val

    add(xa[None, :])
    if T >= ka:
        add(np.diag(xa))

    nm_starts = [ws.pack(xa[None, :])]
    if ka <= 3:
        enum = _enumerate_support_families(ws)
        best_enum = None
        for val, mat in enum:
            candidates.append((val, mat))
            if best_enum is None or val < best_enum[0]:
                best_enum = (val, mat)
        if best_enum is not None:
            nm_starts.append(ws.pack(best_enum[1]))

    if seed_systems:
        for system in seed_systems:
            mat_full = np.array([_check_vector(v, k) for v in system], dtype=float)
            if mat_full.size and np.abs(mat_full.sum(axis=0) - x).max() > 1e-6 * max(1.0, x.sum()):
                raise ValueError("seed system does not sum to x")
            off = np.delete(mat_full, active, axis=1) if mat_full.size else np.zeros((0, 0))
            if off.size and off.max(initial=0.0) > 1e-12:
                raise ValueError("seed system uses coordinates where x is zero")
            mat = mat_full[:, active]
            add(mat)
            reduced = _lp_reduce(ws, mat, T) if mat.shape[0] > T else mat
            if reduced.shape[0]:
                add(reduced)
                nm_starts.append(ws.pack(reduced))

    if T > 1 and cfg.multistarts > 0:
        n_random = max(0, cfg.multistarts - len(nm_starts))
        for s in range(n_random):
            rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, s)))
            A = rng.dirichlet(np.ones(T), size=ka).T
            nm_starts.append(ws.pack(A * xa[None, :]))
        nm_starts = nm_starts[: max(cfg.multistarts, 1)]

        threads = min(_resolve_threads(cfg), len(nm_starts))
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(lambda p: _nelder_mead(ws, p, cfg), nm_starts))
            candidates.extend(results)
        else:
            best_so_far = min(v for v, _ in candidates)
            stall = 0
            for params0 in nm_starts:
                val, mat = _nelder_mead(ws, params0, cfg)
                candidates.append((val, mat))
                if val < best_so_far - cfg.improvement_tol:
                    best_so_far = val
                    stall = 0
                else:
                    stall += 1
                    if stall >= cfg.patience:
                        break

    best_val, best_mat = candidates[0]
    for val, mat in candidates[1:]:
        if val < best_val:
            best_val, best_mat = val, mat

    final = _canonicalize(ws, best_mat, T)
    vectors = []
    total = 0.0
    for row in final:
        full = np.zeros(k)
        full[active] = row
        vectors.append(full)
        total += ws.system_value(row[None, :])

    lower, upper = w_star_bounds(x, Q)
    wx = ws.system_value(xa[None, :])
    tol = 1e-7 * max(1.0, upper)
    ok = total >= lower - tol and total <= wx + tol
    if T >= ka:
        ok = ok and total <= upper + tol
    if not ok:
        raise RuntimeError(
            f"optimizer result {total} violates its bracket "
            f"[{lower}, min({upper}, {wx})]; this signals a bug"
        )
    return VectorSystem(vectors=tuple(vectors), target=x.copy(), total_cost=total)
