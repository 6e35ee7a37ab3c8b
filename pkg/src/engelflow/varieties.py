"""Critical surface, degeneracy curve, and finite exceptional sets in a box.

Everything here is box-local numerical geometry for a fixed polynomial f:

* the critical surface, cut out by X1 f = X2 f = 0, sampled by damped
  Gauss-Newton from a grid;
* point-to-surface distance, refined to first-order optimality by a
  projected Newton iteration;
* the degeneracy curve, cut out by X1 f = X2 f = Gf = 0, traced by
  pseudo-arclength continuation with rank certificates at every point;
* the four square systems whose roots are the exceptional points, solved
  by deduplicated multistart Newton with a homotopy probe that flags
  curve-shaped solution sets instead of silently listing samples of them.

Rank tests use the frame Jacobian convention: the entry in row i, column j
is the j-th frame field applied to the i-th equation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .poly import Poly4, EvalTable
from . import engel

__all__ = [
    "Box",
    "VfSample",
    "GammaComponent",
    "RootSet",
    "TraceOptions",
    "EmptyVariety",
    "RankDeficiency",
    "ComponentBoundExceeded",
    "REFINE_TOL",
    "RANK_TOL",
    "FIBER_TOL",
    "TANGENCY_FLOOR",
    "component_bound",
    "sample_Vf",
    "distance_to_Vf",
    "trace_gamma",
    "classify_component",
    "solve_finite_system",
    "omega_set",
    "tangency_score",
    "fiber_slab_local_rank",
]

REFINE_TOL = 1e-9
RANK_TOL = 1e-6  # relative to the largest singular value
FIBER_TOL = 1e-7
TANGENCY_FLOOR = 1e-4
HORIZONTAL_ANGLE_TOL = 1e-3


class EmptyVariety(RuntimeError):
    """The critical surface has no sampled points where one is required."""


class RankDeficiency(RuntimeError):
    """A Jacobian lost required rank; carries the offending point."""

    def __init__(self, message: str, point):
        super().__init__(message)
        self.point = tuple(float(v) for v in point)


class ComponentBoundExceeded(RuntimeError):
    """Curve tracing found more components than the degree bound allows."""

    def __init__(self, count: int, bound: int, components):
        super().__init__(
            f"traced {count} components, exceeding the degree bound {bound}"
        )
        self.count = count
        self.bound = bound
        self.components = components


def component_bound(degree: int) -> int:
    """Upper bound on degeneracy-curve components for total degree d.

    Evaluates 2(d-1)(4(d-1)-1)^3, clamped to zero for degree <= 1.
    """
    d = max(int(degree), 1)
    return 2 * (d - 1) * (4 * (d - 1) - 1) ** 3


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in R^4."""

    lower: tuple[float, float, float, float]
    upper: tuple[float, float, float, float]

    def __post_init__(self):
        if len(self.lower) != 4 or len(self.upper) != 4:
            raise ValueError("box needs 4 lower and 4 upper bounds")
        for lo, hi in zip(self.lower, self.upper):
            if not (lo < hi):
                raise ValueError(f"empty box side [{lo}, {hi}]")

    @staticmethod
    def cube(half_width: float) -> "Box":
        w = float(half_width)
        return Box((-w,) * 4, (w,) * 4)

    def widths(self) -> np.ndarray:
        return np.array(self.upper) - np.array(self.lower)

    def diagonal(self) -> float:
        return float(np.linalg.norm(self.widths()))

    def contains(self, x, slack: float = 0.0) -> bool:
        return all(
            lo - slack <= float(v) <= hi + slack
            for v, lo, hi in zip(x, self.lower, self.upper)
        )

    def contains_many(self, pts: np.ndarray, slack: float = 0.0) -> np.ndarray:
        lo = np.array(self.lower) - slack
        hi = np.array(self.upper) + slack
        return np.all((pts >= lo) & (pts <= hi), axis=1)

    def grid(self, res: int) -> np.ndarray:
        if res < 2:
            raise ValueError("grid resolution must be >= 2")
        axes = [np.linspace(lo, hi, res) for lo, hi in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def mesh_width(self, res: int) -> float:
        return float(self.widths().max() / max(res - 1, 1))

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, float), self.lower, self.upper)


@dataclass
class VfSample:
    """Grid-refined point cloud on the critical surface."""

    points: np.ndarray  # (n, 4)
    residuals: np.ndarray  # (n,) max abs residual of the two equations
    jacobian_sigma2: np.ndarray  # (n,) second singular value, frame Jacobian
    jacobian_sigma1: np.ndarray  # (n,) largest singular value
    mesh: float  # grid spacing the sample was built from

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class GammaComponent:
    """One traced connected piece of the degeneracy curve inside the box."""

    polyline: np.ndarray  # (n, 4) ordered points
    closed: bool
    exits_box: bool
    f_range: tuple[float, float]
    tangency_scores: np.ndarray  # (n,) directional score normalized by 1 + |xi|
    classification: str = "Undetermined"  # FiberContained | Transverse | Undetermined
    horizontal_flag: bool | None = None
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sigma3: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sigma1: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tangent_frames: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    xi_frames: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __len__(self) -> int:
        return len(self.polyline)

    def arc_length(self) -> float:
        if len(self.polyline) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(self.polyline, axis=0), axis=1).sum())


@dataclass
class RootSet:
    """Deduplicated in-box roots of one of the square exceptional systems."""

    system_id: str  # S1 | S2 | S3 | Cr | Omega
    roots: np.ndarray  # (k, 4)
    residuals: np.ndarray  # (k,)
    finiteness_flag: str  # Finite | CurveDetected | Unknown

    def __len__(self) -> int:
        return len(self.roots)


# ---------------------------------------------------------------------------
# batched Newton machinery


def _batch_values(table: EvalTable, pts: np.ndarray) -> np.ndarray:
    return table(pts)


def _gauss_newton_batch(
    f_table: EvalTable,
    j_table: EvalTable,
    seeds: np.ndarray,
    n_eqs: int,
    tol: float,
    max_iter: int = 60,
):
    """Damped minimal-norm Gauss-Newton on an underdetermined system.

    Runs all seeds in lockstep; the step solves (J J^T + mu*tr*I) y = F and
    moves by -J^T y, so rank-deficient Jacobians only slow things down
    instead of blowing up.  Returns refined points and final residuals.
    """
    X = np.array(seeds, dtype=float)
    n = len(X)
    mu = np.full(n, 1e-4)
    eye = np.eye(n_eqs)
    F = _batch_values(f_table, X)
    res = np.abs(F).max(axis=1)
    for _ in range(max_iter):
        active = res > tol
        if not active.any():
            break
        Xa = X[active]
        Fa = F[active]
        J = _batch_values(j_table, Xa).reshape(len(Xa), n_eqs, 4)
        JJt = J @ np.transpose(J, (0, 2, 1))
        tr = np.trace(JJt, axis1=1, axis2=2) / n_eqs
        tr = np.where(tr > 0, tr, 1.0)
        A = JJt + (mu[active] * tr)[:, None, None] * eye
        try:
            y = np.linalg.solve(A, Fa[:, :, None])
        except np.linalg.LinAlgError:
            break
        step = -(np.transpose(J, (0, 2, 1)) @ y)[:, :, 0]
        Xtry = Xa + step
        Ftry = _batch_values(f_table, Xtry)
        rtry = np.abs(Ftry).max(axis=1)
        better = rtry < res[active]
        idx = np.flatnonzero(active)
        good = idx[better]
        bad = idx[~better]
        X[good] = Xtry[better]
        F[good] = Ftry[better]
        res[good] = rtry[better]
        mu[good] = np.maximum(mu[good] / 4.0, 1e-14)
        mu[bad] = np.minimum(mu[bad] * 10.0, 1e12)
        if not better.any() and (mu[idx] >= 1e12).all():
            break
    # polish converged points with near-undamped steps; the damped loop
    # stops with residuals just under tol, which is enough to pollute
    # downstream distances by that amount
    for _ in range(2):
        done = res <= tol
        if not done.any():
            break
        Xd = X[done]
        Fd = _batch_values(f_table, Xd)
        J = _batch_values(j_table, Xd).reshape(len(Xd), n_eqs, 4)
        JJt = J @ np.transpose(J, (0, 2, 1))
        tr = np.trace(JJt, axis1=1, axis2=2) / n_eqs
        tr = np.where(tr > 0, tr, 1.0)
        A = JJt + (1e-14 * tr)[:, None, None] * eye
        try:
            y = np.linalg.solve(A, Fd[:, :, None])
        except np.linalg.LinAlgError:
            break
        Xtry = Xd + -(np.transpose(J, (0, 2, 1)) @ y)[:, :, 0]
        Ftry = _batch_values(f_table, Xtry)
        rtry = np.abs(Ftry).max(axis=1)
        keep = rtry <= res[done]
        idx = np.flatnonzero(done)[keep]
        X[idx] = Xtry[keep]
        res[idx] = rtry[keep]
    return X, res


def _newton_square_batch(
    f_table: EvalTable,
    j_table: EvalTable,
    seeds: np.ndarray,
    tol: float,
    max_iter: int = 80,
):
    """Damped Levenberg-Marquardt on a 4x4 square system, batched over seeds."""
    X = np.array(seeds, dtype=float)
    n = len(X)
    mu = np.full(n, 1e-6)
    eye = np.eye(4)
    F = _batch_values(f_table, X)
    res = np.abs(F).max(axis=1)
    for _ in range(max_iter):
        active = res > tol
        if not active.any():
            break
        Xa = X[active]
        Fa = F[active]
        J = _batch_values(j_table, Xa).reshape(len(Xa), 4, 4)
        Jt = np.transpose(J, (0, 2, 1))
        JtJ = Jt @ J
        tr = np.trace(JtJ, axis1=1, axis2=2) / 4.0
        tr = np.where(tr > 0, tr, 1.0)
        A = JtJ + (mu[active] * tr)[:, None, None] * eye
        rhs = (Jt @ Fa[:, :, None])
        try:
            y = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError:
            break
        step = -y[:, :, 0]
        Xtry = Xa + step
        Ftry = _batch_values(f_table, Xtry)
        rtry = np.abs(Ftry).max(axis=1)
        better = rtry < res[active]
        idx = np.flatnonzero(active)
        good = idx[better]
        bad = idx[~better]
        X[good] = Xtry[better]
        F[good] = Ftry[better]
        res[good] = rtry[better]
        mu[good] = np.maximum(mu[good] / 4.0, 1e-15)
        mu[bad] = np.minimum(mu[bad] * 10.0, 1e10)
        if not better.any() and (mu[idx] >= 1e10).all():
            break
    for _ in range(2):
        done = res <= tol
        if not done.any():
            break
        Xd = X[done]
        Fd = _batch_values(f_table, Xd)
        J = _batch_values(j_table, Xd).reshape(len(Xd), 4, 4)
        Jt = np.transpose(J, (0, 2, 1))
        JtJ = Jt @ J
        tr = np.trace(JtJ, axis1=1, axis2=2) / 4.0
        tr = np.where(tr > 0, tr, 1.0)
        A = JtJ + (1e-14 * tr)[:, None, None] * eye
        try:
            y = np.linalg.solve(A, Jt @ Fd[:, :, None])
        except np.linalg.LinAlgError:
            break
        Xtry = Xd - y[:, :, 0]
        Ftry = _batch_values(f_table, Xtry)
        rtry = np.abs(Ftry).max(axis=1)
        keep = rtry <= res[done]
        idx = np.flatnonzero(done)[keep]
        X[idx] = Xtry[keep]
        res[idx] = rtry[keep]
    return X, res


def _dedupe(points: np.ndarray, radius: float, extras: list[np.ndarray] | None = None):
    """Keep one representative per cluster of the given radius.

    Points are processed in lexicographic order so the result is
    deterministic; extras are parallel arrays filtered the same way.
    """
    if len(points) == 0:
        return (points, *(extras or []))
    order = np.lexsort(points.T[::-1])
    pts = points[order]
    keep_idx: list[int] = []
    kept: list[np.ndarray] = []
    for i, p in enumerate(pts):
        if kept:
            d = np.linalg.norm(np.array(kept) - p, axis=1).min()
            if d < radius:
                continue
        kept.append(p)
        keep_idx.append(i)
    sel = order[np.array(keep_idx, dtype=int)]
    out = [points[sel]]
    for ex in extras or []:
        out.append(ex[sel])
    return tuple(out)


# ---------------------------------------------------------------------------
# critical surface


class _VfSystem:
    """Precompiled evaluators for the two critical equations of f."""

    def __init__(self, f: Poly4):
        self.f = f
        self.p1 = engel.apply_X(1, f)
        self.p2 = engel.apply_X(2, f)
        self.c1 = self.p1.compiled()
        self.c2 = self.p2.compiled()
        amb = engel.ambient_jacobian_polys([self.p1, self.p2])
        self.cj = [[p.compiled() for p in row] for row in amb]
        self.f_table = EvalTable([self.p1, self.p2])
        self.j_table = EvalTable([p for row in amb for p in row])
        frame = engel.horizontal_frame_jacobian_polys(f)
        self.frame_table = EvalTable([p for row in frame for p in row])

    def values(self, x) -> tuple[float, float]:
        return (self.c1(*x), self.c2(*x))

    def jac_rows(self, x):
        r1 = tuple(c(*x) for c in self.cj[0])
        r2 = tuple(c(*x) for c in self.cj[1])
        return r1, r2


def sample_Vf(
    f: Poly4,
    box: Box,
    grid_res: int = 6,
    refine_tol: float = REFINE_TOL,
    dedupe_radius: float | None = None,
) -> VfSample:
    """Refine a grid onto the critical surface inside the box.

    Every returned point satisfies both defining equations within
    refine_tol; the sample may be empty when the surface misses the box.
    """
    sys = _VfSystem(f)
    seeds = box.grid(grid_res)
    pts, res = _gauss_newton_batch(sys.f_table, sys.j_table, seeds, 2, refine_tol)
    ok = (res <= refine_tol) & box.contains_many(pts, slack=1e-12)
    pts, res = pts[ok], res[ok]
    radius = 10.0 * refine_tol if dedupe_radius is None else dedupe_radius
    pts, res = _dedupe(pts, radius, [res])
    if len(pts):
        frame = sys.frame_table(pts).reshape(len(pts), 2, 4)
        sing = np.linalg.svd(frame, compute_uv=False)
        s1, s2 = sing[:, 0], sing[:, 1]
    else:
        s1 = np.zeros(0)
        s2 = np.zeros(0)
    return VfSample(pts, res, s2, s1, box.mesh_width(grid_res))


def _kkt_nearest(sys: _VfSystem, x, q0, max_iter: int = 16):
    """Projected Newton for the closest critical point to x, from q0.

    Solves the first-order optimality system with the constraint Jacobian
    only; the 2x2 Schur complement is inverted in closed form, which keeps
    the whole iteration exactly homogeneous under scaling of f.
    """
    x = tuple(float(v) for v in x)
    q = tuple(float(v) for v in q0)
    for _ in range(max_iter):
        f1 = sys.c1(*q)
        f2 = sys.c2(*q)
        j1, j2 = sys.jac_rows(q)
        a11 = j1[0] * j1[0] + j1[1] * j1[1] + j1[2] * j1[2] + j1[3] * j1[3]
        a12 = j1[0] * j2[0] + j1[1] * j2[1] + j1[2] * j2[2] + j1[3] * j2[3]
        a22 = j2[0] * j2[0] + j2[1] * j2[1] + j2[2] * j2[2] + j2[3] * j2[3]
        r = (x[0] - q[0], x[1] - q[1], x[2] - q[2], x[3] - q[3])
        b1 = f1 + j1[0] * r[0] + j1[1] * r[1] + j1[2] * r[2] + j1[3] * r[3]
        b2 = f2 + j2[0] * r[0] + j2[1] * r[1] + j2[2] * r[2] + j2[3] * r[3]
        det = a11 * a22 - a12 * a12
        if not det > 0.0:
            return None
        m1 = (a22 * b1 - a12 * b2) / det
        m2 = (a11 * b2 - a12 * b1) / det
        qn = (
            x[0] - (j1[0] * m1 + j2[0] * m2),
            x[1] - (j1[1] * m1 + j2[1] * m2),
            x[2] - (j1[2] * m1 + j2[2] * m2),
            x[3] - (j1[3] * m1 + j2[3] * m2),
        )
        move = max(abs(qn[k] - q[k]) for k in range(4))
        q = qn
        if move <= 1e-14 * (1.0 + max(abs(v) for v in q)):
            break
    return q


def _gn_project(sys: _VfSystem, x, tol: float, max_iter: int = 30):
    """Minimal-norm Gauss-Newton projection of x onto the critical surface.

    The stopping rule is position-based, not residual-based, so the whole
    iteration commutes exactly with scaling f by a power of two.
    """
    q = tuple(float(v) for v in x)
    for _ in range(max_iter):
        f1 = sys.c1(*q)
        f2 = sys.c2(*q)
        j1, j2 = sys.jac_rows(q)
        a11 = sum(v * v for v in j1)
        a12 = sum(u * v for u, v in zip(j1, j2))
        a22 = sum(v * v for v in j2)
        det = a11 * a22 - a12 * a12
        if not det > 0.0:
            return None
        m1 = (a22 * f1 - a12 * f2) / det
        m2 = (a11 * f2 - a12 * f1) / det
        step = tuple(j1[k] * m1 + j2[k] * m2 for k in range(4))
        q = tuple(q[k] - step[k] for k in range(4))
        if max(abs(s) for s in step) <= 1e-14 * (1.0 + max(abs(v) for v in q)):
            break
    f1 = sys.c1(*q)
    f2 = sys.c2(*q)
    return q if max(abs(f1), abs(f2)) <= tol else None


def _distance_with_foot(f: Poly4, sample: VfSample, x, refine_tol: float = REFINE_TOL,
                        sys: "_VfSystem | None" = None):
    """Distance to the critical surface plus the foot point realizing it."""
    if len(sample) == 0:
        raise EmptyVariety("critical surface sample is empty")
    if sys is None:
        sys = _VfSystem(f)
    x = tuple(float(v) for v in x)
    dists = np.linalg.norm(sample.points - np.array(x), axis=1)
    i0 = int(dists.argmin())
    best_d = float(dists[i0])
    best_q = tuple(float(v) for v in sample.points[i0])
    feas = 10.0 * refine_tol

    candidates = []
    q = _kkt_nearest(sys, x, best_q)
    if q is not None:
        candidates.append(q)
    g = _gn_project(sys, x, refine_tol)
    if g is not None:
        p = _kkt_nearest(sys, x, g)
        candidates.append(p if p is not None else g)
    for q in candidates:
        if max(abs(sys.c1(*q)), abs(sys.c2(*q))) > feas:
            continue
        d = math.sqrt(sum((x[k] - q[k]) ** 2 for k in range(4)))
        if d < best_d:
            best_d, best_q = d, q
    return best_d, best_q


def distance_to_Vf(f: Poly4, sample: VfSample, x, refine_tol: float = REFINE_TOL) -> float:
    """Distance from x to the critical surface.

    Starts from the nearest sample point and refines by projected Newton;
    the nearest-sample distance is an upper bound, so refinement can only
    improve it.  Raises EmptyVariety on an empty sample.
    """
    d, _ = _distance_with_foot(f, sample, x, refine_tol)
    return d


# ---------------------------------------------------------------------------
# degeneracy curve


@dataclass(frozen=True)
class TraceOptions:
    grid_res: int = 6
    max_step: float | None = None  # default: 1e-2 of the box diagonal
    min_step: float = 1e-6
    growth: float = 1.4
    corrector_iters: int = 10
    refine_tol: float = REFINE_TOL
    rank_tol: float = RANK_TOL
    dedupe_radius: float | None = None  # default: 10 * refine_tol
    coverage_radius: float | None = None  # default: max_step
    max_arc_points: int = 20000


class _GammaSystem:
    """Compiled evaluators for the three degeneracy-curve equations."""

    def __init__(self, f: Poly4):
        self.f = f
        self.cf = f.compiled()
        p1 = engel.apply_X(1, f)
        p2 = engel.apply_X(2, f)
        g = engel.G_poly(f)
        self.polys = [p1, p2, g]
        amb = engel.ambient_jacobian_polys(self.polys)
        frame_h = engel.horizontal_frame_jacobian_polys(f)
        frame_g = [engel.apply_X(j, g) for j in (1, 2, 3, 4)]
        frame = [frame_h[0], frame_h[1], frame_g]
        self.c_sys = [p.compiled() for p in self.polys]
        self.c_amb = [[p.compiled() for p in row] for row in amb]
        self.c_frame = [[p.compiled() for p in row] for row in frame]
        # xi components (-X21 f, X11 f) live in the first frame row
        self.c_x11 = frame_h[0][0].compiled()
        self.c_x21 = frame_h[0][1].compiled()
        self.f_table = EvalTable(self.polys)
        self.j_table = EvalTable([p for row in amb for p in row])

    def residual_vec(self, x):
        return np.array([c(*x) for c in self.c_sys])

    def amb_jac(self, x):
        return np.array([[c(*x) for c in row] for row in self.c_amb])

    def frame_jac(self, x):
        return np.array([[c(*x) for c in row] for row in self.c_frame])

    def score_and_xi(self, x):
        xi1 = -self.c_x21(*x)
        xi2 = self.c_x11(*x)
        raw = xi1 * self.c_frame[2][0](*x) + xi2 * self.c_frame[2][1](*x)
        return raw, (xi1, xi2)


class _PointData:
    __slots__ = ("x", "residual", "sigma", "kernel", "score_norm", "xi")

    def __init__(self, x, residual, sigma, kernel, score_norm, xi):
        self.x = x
        self.residual = residual
        self.sigma = sigma
        self.kernel = kernel
        self.score_norm = score_norm
        self.xi = xi


def _point_data(sys: _GammaSystem, x, rank_tol: float) -> _PointData:
    x = np.asarray(x, float)
    res = float(np.abs(sys.residual_vec(x)).max())
    jf = sys.frame_jac(x)
    u, s, vh = np.linalg.svd(jf)
    if not s[2] >= rank_tol * max(s[0], 1e-300):
        ratio = s[2] / max(s[0], 1e-300)
        raise RankDeficiency(f"frame Jacobian rank below 3 (sigma3/sigma1 = {ratio:.3e})", x)
    kernel = vh[3]
    raw, xi = sys.score_and_xi(x)
    score_norm = raw / (1.0 + math.hypot(*xi))
    return _PointData(x, res, s, kernel, score_norm, xi)


def _tangent_ambient(pd: _PointData) -> np.ndarray:
    t = engel.frame_to_ambient(pd.kernel, pd.x)
    n = np.linalg.norm(t)
    return t / n if n > 0 else t


def _corrector(sys: _GammaSystem, x_pred, tangent, tol, iters):
    """Newton on the curve equations plus the pseudo-arclength constraint."""
    x = np.asarray(x_pred, float).copy()
    t = np.asarray(tangent, float)
    for _ in range(iters):
        F = sys.residual_vec(x)
        c = float(t @ (x - x_pred))
        rhs = -np.concatenate([F, [c]])
        if max(np.abs(F).max(), abs(c)) <= tol:
            return x
        A = np.vstack([sys.amb_jac(x), t])
        try:
            delta = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError:
            return None
        x = x + delta
        if np.linalg.norm(x - x_pred) > 1e6:
            return None
    F = sys.residual_vec(x)
    if np.abs(F).max() <= tol and abs(float(t @ (x - x_pred))) <= 1e-7:
        return x
    return None


def _face_corrector(sys: _GammaSystem, x0, axis, bound, tol, iters):
    """Newton for a curve point pinned to one box face."""
    x = np.asarray(x0, float).copy()
    x[axis] = bound
    free = [k for k in range(4) if k != axis]
    for _ in range(iters):
        F = sys.residual_vec(x)
        if np.abs(F).max() <= tol:
            return x
        A = sys.amb_jac(x)[:, free]
        try:
            delta = np.linalg.solve(A, -F)
        except np.linalg.LinAlgError:
            return None
        for i, k in enumerate(free):
            x[k] += delta[i]
    return x if np.abs(sys.residual_vec(x)).max() <= tol else None


def _first_crossing(box: Box, a: np.ndarray, b: np.ndarray):
    """Earliest boundary crossing on the segment a -> b, or None."""
    best = None
    for k in range(4):
        for bound in (box.lower[k], box.upper[k]):
            da, db = a[k] - bound, b[k] - bound
            if da == 0.0 and db == 0.0:
                continue
            if (da < 0 <= db) or (da > 0 >= db):
                theta = da / (da - db)
                if 0.0 <= theta <= 1.0 and (best is None or theta < best[0]):
                    best = (theta, k, bound)
    return best


def _march(sys, box, start_pd, direction, h0, opts):
    """Continuation in one direction; returns point records and end status."""
    records = [start_pd]
    tangent = _tangent_ambient(start_pd) * direction
    x = start_pd.x
    h = h0
    exits = False
    closed = False
    arclen = 0.0
    start = start_pd.x
    while len(records) < opts.max_arc_points:
        x_pred = x + h * tangent
        x_new = _corrector(sys, x_pred, tangent, opts.refine_tol, opts.corrector_iters)
        if x_new is None or np.linalg.norm(x_new - x) > 3.0 * h + 1e-12:
            h *= 0.5
            if h < opts.min_step:
                break
            continue
        if not box.contains(x_new, slack=0.0):
            crossing = _first_crossing(box, x, x_new)
            if crossing is None:
                h *= 0.5
                if h < opts.min_step:
                    break
                continue
            theta, axis, bound = crossing
            x_land = x + theta * (x_new - x)
            x_face = _face_corrector(sys, x_land, axis, bound, opts.refine_tol,
                                     opts.corrector_iters)
            if x_face is None or not box.contains(x_face, slack=1e-9):
                h *= 0.5
                if h < opts.min_step:
                    break
                continue
            records.append(_point_data(sys, x_face, opts.rank_tol))
            exits = True
            break
        step_len = float(np.linalg.norm(x_new - x))
        arclen += step_len
        if arclen > 3.0 * h0 and np.linalg.norm(x_new - start) < 0.9 * h:
            closed = True
            break
        pd = _point_data(sys, x_new, opts.rank_tol)
        t_new = _tangent_ambient(pd)
        if float(t_new @ tangent) < 0:
            t_new = -t_new
        records.append(pd)
        tangent = t_new
        x = pd.x
        h = min(h * opts.growth, h0)
    return records, exits, closed


def _polyline_distance(pts: np.ndarray, x: np.ndarray) -> float:
    """Distance from x to a polyline (segments, not just vertices)."""
    if len(pts) == 1:
        return float(np.linalg.norm(pts[0] - x))
    a = pts[:-1]
    b = pts[1:]
    ab = b - a
    denom = (ab * ab).sum(axis=1)
    denom = np.where(denom > 0, denom, 1.0)
    t = np.clip(((x - a) * ab).sum(axis=1) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return float(np.linalg.norm(proj - x, axis=1).min())


def _assemble(sys, fwd, bwd, exits, closed, opts) -> GammaComponent:
    records = list(reversed(bwd[1:])) + list(fwd)
    pts = np.array([r.x for r in records])
    if closed and len(pts) > 1:
        pts = np.vstack([pts, pts[:1]])
        records.append(records[0])
    # canonical orientation: lexicographically smaller end first
    if not closed and len(pts) > 1 and tuple(pts[0]) > tuple(pts[-1]):
        records = records[::-1]
        pts = pts[::-1].copy()
    fvals = np.array([sys.cf(*r.x) for r in records])
    return GammaComponent(
        polyline=pts,
        closed=closed,
        exits_box=exits,
        f_range=(float(fvals.min()), float(fvals.max())),
        tangency_scores=np.array([r.score_norm for r in records]),
        residuals=np.array([r.residual for r in records]),
        sigma3=np.array([r.sigma[2] for r in records]),
        sigma1=np.array([r.sigma[0] for r in records]),
        tangent_frames=np.array([r.kernel for r in records]),
        xi_frames=np.array([r.xi for r in records]),
    )


def trace_gamma(f: Poly4, box: Box, opts: TraceOptions | None = None) -> list[GammaComponent]:
    """Trace every component of the degeneracy curve meeting the box.

    Seeds come from a grid refined by Gauss-Newton onto the zero set of
    (X1 f, X2 f, Gf); each uncovered seed launches a two-sided
    pseudo-arclength continuation.  The frame Jacobian must keep rank 3 at
    every accepted point (RankDeficiency otherwise), and the number of
    components is checked against the degree bound.
    """
    opts = opts or TraceOptions()
    sys = _GammaSystem(f)
    h0 = opts.max_step if opts.max_step is not None else 1e-2 * box.diagonal()
    coverage = opts.coverage_radius if opts.coverage_radius is not None else h0
    seeds = box.grid(opts.grid_res)
    pts, res = _gauss_newton_batch(sys.f_table, sys.j_table, seeds, 3, opts.refine_tol)
    ok = (res <= opts.refine_tol) & box.contains_many(pts, slack=1e-12)
    pts = pts[ok]
    if len(pts):
        radius = 10.0 * opts.refine_tol if opts.dedupe_radius is None else opts.dedupe_radius
        (pts,) = _dedupe(pts, radius)
    components: list[GammaComponent] = []
    bound = component_bound(f.degree)
    for seed in pts:
        if any(_polyline_distance(c.polyline, seed) <= coverage for c in components):
            continue
        start_pd = _point_data(sys, seed, opts.rank_tol)
        fwd, f_exit, f_closed = _march(sys, box, start_pd, +1.0, h0, opts)
        if f_closed:
            comp = _assemble(sys, fwd, [start_pd], f_exit, True, opts)
        else:
            bwd, b_exit, b_closed = _march(sys, box, start_pd, -1.0, h0, opts)
            comp = _assemble(sys, fwd, bwd, f_exit or b_exit, b_closed, opts)
        components.append(comp)
        if len(components) > bound > 0:
            raise ComponentBoundExceeded(len(components), bound, components)
    components.sort(key=lambda c: tuple(c.polyline[0]) if len(c) else ())
    return components


def classify_component(
    f: Poly4,
    comp: GammaComponent,
    fiber_tol: float = FIBER_TOL,
    tangency_floor: float = TANGENCY_FLOOR,
    angle_tol: float = HORIZONTAL_ANGLE_TOL,
) -> GammaComponent:
    """Attach a classification and horizontality flag to a traced component.

    FiberContained means f is constant along the component within
    fiber_tol; Transverse means the normalized tangency score clears the
    floor somewhere; everything else, including degenerate single points,
    stays Undetermined.
    """
    n = len(comp)
    if n == 0:
        return replace(comp, classification="Undetermined", horizontal_flag=None)
    k = comp.tangent_frames
    if len(k) == n and n >= 2:
        horiz = np.hypot(k[:, 0], k[:, 1])
        vert = np.hypot(k[:, 2], k[:, 3])
        angles = np.arctan2(vert, horiz)
        horizontal = bool(np.mean(angles <= angle_tol) >= 0.99)
    else:
        horizontal = None
    if n < 2 or comp.arc_length() <= 10.0 * REFINE_TOL:
        return replace(comp, classification="Undetermined", horizontal_flag=horizontal)
    f_lo, f_hi = comp.f_range
    mid = 0.5 * (f_lo + f_hi)
    if (f_hi - f_lo) <= fiber_tol * (1.0 + abs(mid)):
        cls = "FiberContained"
    elif np.abs(comp.tangency_scores).max() > tangency_floor:
        cls = "Transverse"
    else:
        cls = "Undetermined"
    return replace(comp, classification=cls, horizontal_flag=horizontal)


def tangency_score(f: Poly4, x) -> float:
    """Directional derivative of the degeneracy function along the
    distinguished tangent field, unnormalized."""
    sys = _GammaSystem(f)
    raw, _ = sys.score_and_xi(tuple(float(v) for v in x))
    return float(raw)


# ---------------------------------------------------------------------------
# square exceptional systems


_SYSTEM_WORDS = {
    "S1": ((1,), (2,), (1, 1), (2, 1)),
    "S2": ((1,), (2,), (1, 1), (1, 2)),
    "S3": ((1,), (2,), (2, 1), (2, 2)),
    "Cr": ((1,), (2,), (3,), (4,)),
}


def _system_polys(f: Poly4, which: str) -> list[Poly4]:
    try:
        words = _SYSTEM_WORDS[which]
    except KeyError:
        raise ValueError(f"unknown system {which!r}; expected S1, S2, S3 or Cr")
    return [engel.apply_word(w, f) for w in words]


def _homotopy_probe(f_table, j_table, a, b, tol=1e-6, steps=16) -> bool:
    """Check whether the segment from a to b hugs the solution set.

    Each interior node gets one damped Newton correction; if every
    corrected node still has residual <= tol the two roots are treated as
    lying on a common solution curve.
    """
    for k in range(1, steps + 1):
        t = k / (steps + 1)
        z = (1.0 - t) * a + t * b
        F = f_table(z[None, :])[0]
        J = j_table(z[None, :]).reshape(4, 4)
        try:
            delta = np.linalg.lstsq(J, -F, rcond=None)[0]
        except np.linalg.LinAlgError:
            return False
        z2 = z + delta
        F2 = f_table(z2[None, :])[0]
        if np.abs(F2).max() <= np.abs(F).max():
            F = F2
        if np.abs(F).max() > tol:
            return False
    return True


def solve_finite_system(
    f: Poly4,
    which: str,
    box: Box,
    grid_res: int = 6,
    refine_tol: float = REFINE_TOL,
    dedupe_radius: float | None = None,
    probe_tol: float = 1e-6,
) -> RootSet:
    """Multistart Newton roots of one square exceptional system in the box.

    Roots are deduplicated and sorted; the finiteness flag reports
    CurveDetected when a homotopy probe between a root and its nearest
    neighbor stays on the solution set, which is the cheap conservative
    signal that the system cuts out a curve rather than points.
    """
    polys = _system_polys(f, which)
    f_table = EvalTable(polys)
    amb = engel.ambient_jacobian_polys(polys)
    j_table = EvalTable([p for row in amb for p in row])
    seeds = box.grid(grid_res)
    pts, res = _newton_square_batch(f_table, j_table, seeds, refine_tol)
    ok = (res <= refine_tol) & box.contains_many(pts, slack=1e-12)
    pts, res = pts[ok], res[ok]
    radius = 10.0 * refine_tol if dedupe_radius is None else dedupe_radius
    pts, res = _dedupe(pts, radius, [res])
    flag = "Finite"
    if len(pts) >= 2:
        for i in range(len(pts)):
            d = np.linalg.norm(pts - pts[i], axis=1)
            d[i] = np.inf
            j = int(d.argmin())
            if _homotopy_probe(f_table, j_table, pts[i], pts[j], tol=probe_tol):
                flag = "CurveDetected"
                break
    return RootSet(which, pts, res, flag)


def omega_set(f: Poly4, box: Box, grid_res: int = 6, refine_tol: float = REFINE_TOL) -> RootSet:
    """Union of the three second-order exceptional systems.

    Roots from S1, S2 and S3 are merged and deduplicated; the flag is the
    most pessimistic of the three.
    """
    parts = [solve_finite_system(f, w, box, grid_res, refine_tol) for w in ("S1", "S2", "S3")]
    roots = np.vstack([p.roots for p in parts]) if any(len(p) for p in parts) else np.zeros((0, 4))
    res = np.concatenate([p.residuals for p in parts]) if len(roots) else np.zeros(0)
    if len(roots):
        roots, res = _dedupe(roots, 10.0 * refine_tol, [res])
    order = {"Finite": 0, "Unknown": 1, "CurveDetected": 2}
    flag = max((p.finiteness_flag for p in parts), key=lambda s: order[s])
    return RootSet("Omega", roots, res, flag)


# ---------------------------------------------------------------------------
# dimension sanity helper


def fiber_slab_local_rank(
    f: Poly4,
    sample: VfSample,
    value: float,
    slab_tol: float,
    k_neighbors: int = 12,
    rel_cut: float = 0.25,
) -> int:
    """Largest local PCA rank of the sample restricted to a level slab of f.

    Used as a dimension check: on a surface where f separates points, the
    slab traces out at most a curve and the local rank stays <= 1; a rank
    of 2 or more means the slab holds a genuine patch.
    """
    if len(sample) == 0:
        return 0
    fv = np.array([f.eval(p) for p in sample.points])
    slab = sample.points[np.abs(fv - value) <= slab_tol]
    if len(slab) < 3:
        return min(len(slab) - 1, 1) if len(slab) else 0
    worst = 0
    for i in range(len(slab)):
        d = np.linalg.norm(slab - slab[i], axis=1)
        idx = np.argsort(d)[: min(k_neighbors, len(slab))]
        nbrs = slab[idx]
        centered = nbrs - nbrs.mean(axis=0)
        s = np.linalg.svd(centered, compute_uv=False)
        if s[0] <= 0:
            continue
        rank = int(np.sum(s >= rel_cut * s[0]))
        worst = max(worst, rank)
        if worst >= 2:
            break
    return worst
