"""Horizontal-gradient trajectories with dual-metric length accounting.

The flow integrates xdot = s * ambient_velocity(hgrad f, x) with an
embedded 5(4) Runge-Kutta pair (Dormand-Prince coefficients, FSAL, PI step
control).  Velocities at every node are rebuilt through ambient_velocity,
so the two one-form residuals vanish exactly by construction rather than
approximately.

Two lengths ride along: the horizontal length l_g with speed
sqrt((X1 f)^2 + (X2 f)^2), and the degenerate-metric length l_delta whose
integrand carries an extra factor of the distance to the critical surface.
Both use 5-point Gauss-Legendre on a cubic Hermite densification of each
accepted step.  The distance factor is tracked by a warm-started
nearest-point iteration refreshed whenever the trajectory has moved more
than half the surface sample's mesh width.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .poly import Poly4
from . import engel
from .varieties import (
    Box,
    VfSample,
    GammaComponent,
    EmptyVariety,
    sample_Vf,
    _VfSystem,
    _kkt_nearest,
    _distance_with_foot,
    _polyline_distance,
)

__all__ = [
    "FlowConfig",
    "Trajectory",
    "LojaEstimate",
    "LengthBoundReport",
    "LimitVerdict",
    "BatchSummary",
    "StartOutsideBox",
    "integrate",
    "estimate_loja",
    "delta_gradient",
    "length_bound_check",
    "limit_analysis",
    "batch_flow",
    "kronecker_points",
]


class StartOutsideBox(ValueError):
    """The initial point of a trajectory is not in the box."""


@dataclass(frozen=True)
class FlowConfig:
    direction: str = "descent"  # descent | ascent
    rtol: float = 1e-8
    atol: float = 1e-10
    max_step: float = 0.1
    min_step: float = 1e-12
    t_max: float = 1e3
    stop_grad: float = 1e-8
    sample_grid_res: int = 6

    def __post_init__(self):
        if self.direction not in ("descent", "ascent"):
            raise ValueError("direction must be 'descent' or 'ascent'")


@dataclass
class Trajectory:
    """Sampled flow line: node arrays plus accumulated lengths."""

    direction: str
    termination: str  # BoxExit | NearVf | MaxTime | StepFloor
    ts: np.ndarray
    xs: np.ndarray  # (n, 4)
    fs: np.ndarray
    grad_norms: np.ndarray
    dists: np.ndarray  # distance to the critical surface; inf when empty
    lg_cum: np.ndarray
    ldelta_cum: np.ndarray | None  # None when the critical surface is empty
    limit: "LimitVerdict | None" = None

    def __len__(self) -> int:
        return len(self.ts)

    @property
    def l_g(self) -> float:
        return float(self.lg_cum[-1])

    @property
    def l_delta(self) -> float | None:
        if self.ldelta_cum is None:
            return None
        return float(self.ldelta_cum[-1])

    def samples(self):
        """Iterate (t, x, f, grad_norm, dist) tuples in order."""
        for i in range(len(self.ts)):
            yield (
                float(self.ts[i]),
                tuple(float(v) for v in self.xs[i]),
                float(self.fs[i]),
                float(self.grad_norms[i]),
                float(self.dists[i]),
            )

    def to_csv(self, path=None):
        """Write the node table; returns the text when path is None."""
        buf = io.StringIO()
        buf.write("t,x1,x2,x3,x4,f,grad_norm,dist_vf,lg_cum,ldelta_cum\n")
        for i in range(len(self.ts)):
            cells = [repr(float(self.ts[i]))]
            cells += [repr(float(v)) for v in self.xs[i]]
            cells.append(repr(float(self.fs[i])))
            cells.append(repr(float(self.grad_norms[i])))
            cells.append(repr(float(self.dists[i])))
            cells.append(repr(float(self.lg_cum[i])))
            if self.ldelta_cum is None:
                cells.append("")
            else:
                cells.append(repr(float(self.ldelta_cum[i])))
            buf.write(",".join(cells) + "\n")
        text = buf.getvalue()
        if path is None:
            return text
        with open(path, "w") as fh:
            fh.write(text)
        return None


@dataclass
class LojaEstimate:
    C1: float
    C2: float
    argmin: tuple
    argmax: tuple
    collar_radius: float
    sample_count: int


@dataclass
class LengthBoundReport:
    l_delta: float
    bound: float
    ratio: float
    slack: float
    passed: bool


@dataclass
class LimitVerdict:
    converged: bool
    limit: tuple | None
    tail_diameter: float
    classification: str | None  # Boundary | VfOffGamma | NearGamma
    component_index: int | None = None
    witness_pair: tuple | None = None


# ---------------------------------------------------------------------------
# Dormand-Prince 5(4) pair

_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84)
_E = (
    71 / 57600,
    0.0,
    -71 / 16695,
    71 / 1920,
    -17253 / 339200,
    22 / 525,
    -1 / 40,
)

# 5-point Gauss-Legendre on [0, 1]
_GL_NODES = (
    0.5 - 0.45308992296933200 , 0.5 - 0.26923465505284155, 0.5,
    0.5 + 0.26923465505284155, 0.5 + 0.45308992296933200,
)
_GL_WEIGHTS = (
    0.5 * 0.23692688505618908, 0.5 * 0.47862867049936647, 0.5 * 0.56888888888888889,
    0.5 * 0.47862867049936647, 0.5 * 0.23692688505618908,
)


class _Field:
    """Signed horizontal-gradient vector field with exact one-form kernel."""

    __slots__ = ("c1", "c2", "cf", "s")

    def __init__(self, f: Poly4, sign: float):
        self.c1 = engel.apply_X(1, f).compiled()
        self.c2 = engel.apply_X(2, f).compiled()
        self.cf = f.compiled()
        self.s = sign

    def velocity(self, x):
        a = self.s * self.c1(x[0], x[1], x[2], x[3])
        b = self.s * self.c2(x[0], x[1], x[2], x[3])
        # third and fourth components are literally x1*v2 and x3*v2, which
        # is what makes one_form_residual vanish to the last bit
        return (a, b, x[0] * b, x[2] * b)

    def grad_norm(self, x):
        a = self.c1(x[0], x[1], x[2], x[3])
        b = self.c2(x[0], x[1], x[2], x[3])
        return math.sqrt(a * a + b * b)

    def speed(self, x):
        return self.grad_norm(x)


def _rk_step(field: _Field, y, h, k1):
    """One Dormand-Prince step; returns (y5, err, k_last)."""
    k = [k1]
    for i in range(1, 6):
        a = _A[i]
        z = list(y)
        for j, aij in enumerate(a):
            if aij != 0.0:
                kj = k[j]
                z[0] += h * aij * kj[0]
                z[1] += h * aij * kj[1]
                z[2] += h * aij * kj[2]
                z[3] += h * aij * kj[3]
        k.append(field.velocity(z))
    y5 = list(y)
    for j, bj in enumerate(_B):
        if bj != 0.0:
            kj = k[j]
            y5[0] += h * bj * kj[0]
            y5[1] += h * bj * kj[1]
            y5[2] += h * bj * kj[2]
            y5[3] += h * bj * kj[3]
    k7 = field.velocity(y5)
    k.append(k7)
    err = [0.0, 0.0, 0.0, 0.0]
    for j, ej in enumerate(_E):
        if ej != 0.0:
            kj = k[j]
            err[0] += h * ej * kj[0]
            err[1] += h * ej * kj[1]
            err[2] += h * ej * kj[2]
            err[3] += h * ej * kj[3]
    return tuple(y5), err, k7


def _err_norm(err, y0, y1, rtol, atol):
    acc = 0.0
    for i in range(4):
        sc = atol + rtol * max(abs(y0[i]), abs(y1[i]))
        q = err[i] / sc
        acc += q * q
    return math.sqrt(acc / 4.0)


def _hermite(y0, v0, y1, v1, h, theta):
    t2 = theta * theta
    t3 = t2 * theta
    h00 = 2 * t3 - 3 * t2 + 1
    h10 = t3 - 2 * t2 + theta
    h01 = -2 * t3 + 3 * t2
    h11 = t3 - t2
    return tuple(
        h00 * y0[i] + h10 * h * v0[i] + h01 * y1[i] + h11 * h * v1[i]
        for i in range(4)
    )


def _hermite_scalar(d0, dd0, d1, dd1, h, theta):
    t2 = theta * theta
    t3 = t2 * theta
    return (
        (2 * t3 - 3 * t2 + 1) * d0
        + (t3 - 2 * t2 + theta) * h * dd0
        + (-2 * t3 + 3 * t2) * d1
        + (t3 - t2) * h * dd1
    )


class _DistTracker:
    """Distance to the critical surface with warm-started refinement.

    A full query (nearest sample point, then projected Newton) runs at the
    first call and whenever the trajectory has moved more than half the
    sample mesh since the last full query; in between, the previous foot
    point seeds the nearest-point iteration directly.
    """

    def __init__(self, f: Poly4, sample: VfSample):
        self.sample = sample
        self.sys = _VfSystem(f)
        self.empty = len(sample) == 0
        self.anchor = None
        self.foot = None
        self.feas = 1e-8

    def query(self, x):
        if self.empty:
            return math.inf, None
        x = tuple(float(v) for v in x)
        if self.anchor is not None and self.foot is not None:
            moved = max(abs(x[i] - self.anchor[i]) for i in range(4))
            if moved <= 0.5 * self.sample.mesh:
                q = _kkt_nearest(self.sys, x, self.foot)
                if q is not None and max(
                    abs(self.sys.c1(*q)), abs(self.sys.c2(*q))
                ) <= self.feas:
                    self.foot = q
                    return math.dist(x, q), q
        d, q = _distance_with_foot(None, self.sample, x, sys=self.sys)
        self.anchor = x
        self.foot = q
        return d, q


def _ddot(x, v, d, foot):
    # time derivative of the distance: projection of the velocity on the
    # unit vector from the foot point
    if foot is None or not (d > 1e-300) or not math.isfinite(d):
        return 0.0
    return sum(v[i] * (x[i] - foot[i]) for i in range(4)) / d


def integrate(
    f: Poly4,
    x0,
    box: Box,
    cfg: FlowConfig | None = None,
    sample: VfSample | None = None,
) -> Trajectory:
    """Integrate the horizontal-gradient flow from x0 until an event.

    Events: leaving the box (BoxExit, crossing time bisected to 1e-10),
    the horizontal gradient dropping under cfg.stop_grad (NearVf), the
    time horizon (MaxTime), and a step-size collapse (StepFloor).  When
    the critical surface misses the box the distance column is +inf and
    l_delta is not applicable.
    """
    cfg = cfg or FlowConfig()
    if not box.contains(x0):
        raise StartOutsideBox(f"start {tuple(x0)} outside box")
    if sample is None:
        sample = sample_Vf(f, box, cfg.sample_grid_res)
    sign = -1.0 if cfg.direction == "descent" else 1.0
    field_ = _Field(f, sign)
    tracker = _DistTracker(f, sample)
    track_delta = not tracker.empty

    ts = [0.0]
    xs = [tuple(float(v) for v in x0)]
    y = xs[0]
    fs = [field_.cf(*y)]
    g = field_.grad_norm(y)
    grads = [g]
    d, foot = tracker.query(y)
    dists = [d]
    feet = foot
    lg = [0.0]
    ld = [0.0] if track_delta else None

    def finish(term):
        return Trajectory(
            cfg.direction,
            term,
            np.array(ts),
            np.array(xs),
            np.array(fs),
            np.array(grads),
            np.array(dists),
            np.array(lg),
            np.array(ld) if ld is not None else None,
        )

    if g <= cfg.stop_grad:
        return finish("NearVf")

    t = 0.0
    v = field_.velocity(y)
    h = min(cfg.max_step, 0.01 * (1.0 + math.hypot(*y)) / max(field_.speed(y), 1e-8))
    h = max(h, cfg.min_step)
    err_prev = 1.0

    def add_lengths(y0, v0, y1, v1, hh, d0, dd0, d1, dd1):
        seg_g = 0.0
        seg_d = 0.0
        for node, w in zip(_GL_NODES, _GL_WEIGHTS):
            z = _hermite(y0, v0, y1, v1, hh, node)
            m = field_.speed(z)
            seg_g += w * m
            if track_delta:
                dz = _hermite_scalar(d0, dd0, d1, dd1, hh, node)
                seg_d += w * (dz if dz > 0.0 else 0.0) * m
        lg.append(lg[-1] + hh * seg_g)
        if ld is not None:
            ld.append(ld[-1] + hh * seg_d)

    def push(tt, yy, dd):
        ts.append(tt)
        xs.append(yy)
        fs.append(field_.cf(*yy))
        grads.append(field_.grad_norm(yy))
        dists.append(dd)

    while True:
        if t >= cfg.t_max:
            return finish("MaxTime")
        hh = min(h, cfg.t_max - t)
        y5, err, k_last = _rk_step(field_, y, hh, v)
        E = _err_norm(err, y, y5, cfg.rtol, cfg.atol)
        if E > 1.0:
            h = hh * max(0.2, 0.9 * E ** -0.2)
            if h < cfg.min_step:
                return finish("StepFloor")
            continue
        fac = 0.9 * (E ** -0.2 if E > 0 else 5.0) * err_prev ** 0.04
        err_prev = max(E, 1e-4)
        if not box.contains(y5):
            # bisect the crossing time to 1e-10 on the Hermite model, then
            # land with a single controlled step of exactly that size
            v5 = field_.velocity(y5)
            lo_th, hi_th = 0.0, 1.0
            for _ in range(200):
                if (hi_th - lo_th) * hh <= 1e-10:
                    break
                mid = 0.5 * (lo_th + hi_th)
                z = _hermite(y, v, y5, v5, hh, mid)
                if box.contains(z):
                    lo_th = mid
                else:
                    hi_th = mid
            h_exit = hi_th * hh
            if h_exit > 0.0:
                y_exit, _, _ = _rk_step(field_, y, h_exit, v)
                y_exit = list(y_exit)
                # pin the crossed coordinates to their faces
                for i in range(4):
                    if y_exit[i] <= box.lower[i]:
                        y_exit[i] = box.lower[i]
                    elif y_exit[i] >= box.upper[i]:
                        y_exit[i] = box.upper[i]
                y_exit = tuple(y_exit)
                v_exit = field_.velocity(y_exit)
                d1, foot1 = tracker.query(y_exit)
                add_lengths(y, v, y_exit, v_exit, h_exit,
                            dists[-1], _ddot(y, v, dists[-1], feet),
                            d1, _ddot(y_exit, v_exit, d1, foot1))
                push(t + h_exit, y_exit, d1)
            return finish("BoxExit")
        v5 = k_last
        d1, foot1 = tracker.query(y5)
        add_lengths(y, v, y5, v5, hh,
                    dists[-1], _ddot(y, v, dists[-1], feet),
                    d1, _ddot(y5, v5, d1, foot1))
        t += hh
        push(t, y5, d1)
        feet = foot1
        y = y5
        v = v5
        if grads[-1] <= cfg.stop_grad:
            return finish("NearVf")
        if t >= cfg.t_max:
            return finish("MaxTime")
        h = min(cfg.max_step, hh * min(5.0, max(0.2, fac)))
        if h < cfg.min_step:
            return finish("StepFloor")


# ---------------------------------------------------------------------------
# Lojasiewicz constants with exponent 1


_KRONECKER_ALPHA = None


def _kron_alpha():
    # Kronecker directions from the generalized golden ratio for dim 4:
    # unique positive root of g^5 = g + 1
    global _KRONECKER_ALPHA
    if _KRONECKER_ALPHA is None:
        g = 1.0
        for _ in range(80):
            g = (1.0 + g) ** (1.0 / 5.0)
        _KRONECKER_ALPHA = tuple(g ** -(i + 1) for i in range(4))
    return _KRONECKER_ALPHA


def kronecker_points(box: Box, n: int, offset: int = 0) -> np.ndarray:
    """Low-discrepancy points in the box from a Kronecker sequence."""
    alpha = np.array(_kron_alpha())
    idx = np.arange(offset + 1, offset + n + 1, dtype=float)[:, None]
    u = (0.5 + idx * alpha[None, :]) % 1.0
    lo = np.array(box.lower)
    return lo + u * (np.array(box.upper) - lo)


def estimate_loja(
    f: Poly4,
    box: Box,
    sample: VfSample,
    n: int = 200,
    collar: float = 1e-3,
    seed: int = 0,
) -> LojaEstimate:
    """Bracket ||hgrad f|| / d between constants C1 <= C2 on the box.

    Ratios are taken on n quasi-random box points kept at distance >=
    collar from the critical surface, plus near-surface probes pushed a
    distance in [collar, 10*collar] along random normal directions from
    sample points.  All arithmetic in the ratio path commutes exactly with
    scaling f by powers of two, so scaled inputs scale C1 and C2 exactly.
    """
    if len(sample) == 0:
        raise EmptyVariety("Lojasiewicz bracket needs a non-empty critical surface")
    if not collar > 0:
        raise ValueError("collar must be positive")
    sys = _VfSystem(f)
    c1p, c2p = sys.c1, sys.c2

    ratios = []
    points = []

    def consider(x):
        d, _ = _distance_with_foot(None, sample, x, sys=sys)
        if not (d >= collar) or not math.isfinite(d):
            return
        a = c1p(*x)
        b = c2p(*x)
        g = math.sqrt(a * a + b * b)
        ratios.append(g / d)
        points.append(x)

    target = n
    block = 0
    while len(ratios) < target and block * n < 20 * n:
        pts = kronecker_points(box, n, offset=seed * 7919 + block * n)
        for row in pts:
            if len(ratios) >= target:
                break
            consider(tuple(float(v) for v in row))
        block += 1

    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    k = min(len(sample), max(8, n // 4))
    stride = max(1, len(sample) // k)
    for p in sample.points[::stride]:
        p = tuple(float(v) for v in p)
        r1, r2 = sys.jac_rows(p)
        a, b = rng.standard_normal(2)
        w = tuple(a * r1[i] + b * r2[i] for i in range(4))
        nw = math.sqrt(sum(c * c for c in w))
        if not nw > 0:
            continue
        u = tuple(c / nw for c in w)
        r = collar * (1.0 + 9.0 * float(rng.random()))
        x = tuple(p[i] + r * u[i] for i in range(4))
        consider(x)

    if not ratios:
        raise EmptyVariety("no admissible ratio points outside the collar")
    i_min = min(range(len(ratios)), key=ratios.__getitem__)
    i_max = max(range(len(ratios)), key=ratios.__getitem__)
    return LojaEstimate(
        C1=ratios[i_min],
        C2=ratios[i_max],
        argmin=points[i_min],
        argmax=points[i_max],
        collar_radius=collar,
        sample_count=len(ratios),
    )


def delta_gradient(f: Poly4, x, d: float) -> engel.FrameVector:
    """Horizontal gradient rescaled by the degenerate conformal factor 1/d^2."""
    if not d > 0:
        raise ValueError("distance must be positive")
    x = tuple(float(v) for v in x)
    a = engel.apply_X(1, f).eval(x)
    b = engel.apply_X(2, f).eval(x)
    return engel.FrameVector((a / (d * d), b / (d * d), 0.0, 0.0), x)


def length_bound_check(
    traj: Trajectory, loja: LojaEstimate, bound_slack: float = 1e-3
) -> LengthBoundReport:
    """Check l_delta <= |f change| / C1 up to the stated slack."""
    if traj.l_delta is None:
        raise EmptyVariety("l_delta not applicable: empty critical surface")
    lhs = traj.l_delta
    df = abs(float(traj.fs[-1]) - float(traj.fs[0]))
    bound = df / loja.C1
    if bound > 0:
        ratio = lhs / bound
    else:
        ratio = 0.0 if lhs == 0.0 else math.inf
    passed = lhs <= bound * (1.0 + bound_slack) + 1e-300
    return LengthBoundReport(lhs, bound, ratio, bound_slack, passed)


def limit_analysis(
    traj: Trajectory,
    gamma: list[GammaComponent],
    tol: float = 1e-5,
) -> LimitVerdict:
    """Certify and classify the limit of a terminated trajectory.

    BoxExit trajectories converge trivially to their exit point.  For
    NearVf the tail is the last quarter of the time span; the verdict is
    Converged when its diameter is at most tol.  Limits are classified as
    Boundary, NearGamma (within tol of a traced component) or VfOffGamma.
    Trajectories cut off by MaxTime or StepFloor stay Inconclusive.
    """
    last = tuple(float(v) for v in traj.xs[-1])
    if traj.termination == "BoxExit":
        verdict = LimitVerdict(True, last, 0.0, "Boundary")
        traj.limit = verdict
        return verdict
    if traj.termination not in ("NearVf",):
        verdict = _inconclusive(traj)
        traj.limit = verdict
        return verdict
    t0 = float(traj.ts[0])
    t1 = float(traj.ts[-1])
    cut = t0 + 0.75 * (t1 - t0)
    idx = np.flatnonzero(traj.ts >= cut)
    if len(idx) < 2:
        idx = np.arange(max(0, len(traj.ts) - 2), len(traj.ts))
    tail = traj.xs[idx]
    diff = tail[:, None, :] - tail[None, :, :]
    dmat = np.sqrt((diff * diff).sum(axis=2))
    diam = float(dmat.max())
    if diam > tol:
        i, j = np.unravel_index(int(dmat.argmax()), dmat.shape)
        verdict = LimitVerdict(
            False, None, diam, None,
            witness_pair=(tuple(map(float, tail[i])), tuple(map(float, tail[j]))),
        )
        traj.limit = verdict
        return verdict
    cls = "VfOffGamma"
    comp_idx = None
    for ci, comp in enumerate(gamma):
        if len(comp.polyline) and _polyline_distance(comp.polyline, np.array(last)) <= tol:
            cls = "NearGamma"
            comp_idx = ci
            break
    verdict = LimitVerdict(True, last, diam, cls, component_index=comp_idx)
    traj.limit = verdict
    return verdict


def _inconclusive(traj: Trajectory) -> LimitVerdict:
    t0 = float(traj.ts[0])
    t1 = float(traj.ts[-1])
    cut = t0 + 0.75 * (t1 - t0)
    idx = np.flatnonzero(traj.ts >= cut)
    if len(idx) < 2:
        idx = np.arange(max(0, len(traj.ts) - 2), len(traj.ts))
    tail = traj.xs[idx]
    diff = tail[:, None, :] - tail[None, :, :]
    dmat = np.sqrt((diff * diff).sum(axis=2))
    i, j = np.unravel_index(int(dmat.argmax()), dmat.shape)
    return LimitVerdict(
        False, None, float(dmat.max()), None,
        witness_pair=(tuple(map(float, tail[i])), tuple(map(float, tail[j]))),
    )


# ---------------------------------------------------------------------------
# batch runs


@dataclass
class BatchSummary:
    n_trajectories: int
    fraction_converged: float
    max_monotonicity_violation: float
    max_horizontality_residual: float
    length_bound_pass_rate: float
    revisit_firings: int
    termination_counts: dict
    records: list = field(default_factory=list)


def _monotonicity_defect(traj: Trajectory) -> float:
    s = -1.0 if traj.direction == "descent" else 1.0
    df = np.diff(traj.fs)
    viol = np.maximum(0.0, -s * df)
    span = abs(float(traj.fs[-1]) - float(traj.fs[0]))
    if span <= 0:
        return float(viol.max(initial=0.0))
    return float(viol.max(initial=0.0)) / span


def _horizontality_residual(traj: Trajectory, c1, c2) -> float:
    s = -1.0 if traj.direction == "descent" else 1.0
    worst = 0.0
    for row in traj.xs:
        x = tuple(float(v) for v in row)
        a = s * c1(*x)
        b = s * c2(*x)
        v = (a, b, x[0] * b, x[2] * b)
        r3, r4 = engel.one_form_residual(x, v)
        worst = max(worst, abs(r3), abs(r4))
    return worst


def _revisits(traj: Trajectory, space_tol: float = 1e-6, arc_gap: float = 1e-3) -> int:
    n = len(traj.ts)
    if n < 3:
        return 0
    X = traj.xs
    L = traj.lg_cum
    # squared-distance matrix via the gram trick keeps memory at O(n^2)
    sq = (X * X).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(d2, 0.0, out=d2)
    gap = np.abs(L[:, None] - L[None, :])
    fire = (d2 <= space_tol * space_tol) & (gap >= arc_gap)
    return int(np.triu(fire, k=1).sum())


def batch_flow(
    f: Poly4,
    box: Box,
    n_seeds: int,
    cfg: FlowConfig | None = None,
    sample: VfSample | None = None,
    gamma: list[GammaComponent] | None = None,
    loja: LojaEstimate | None = None,
    seed: int = 0,
    limit_tol: float = 1e-5,
) -> BatchSummary:
    """Integrate both flow directions from quasi-random starts and audit.

    The audit covers convergence of every trajectory's limit, strict
    monotonicity of f along the flow, exact horizontality at nodes, the
    degenerate-length bound, and a revisit detector (a sampled state
    recurring within 1e-6 after at least 1e-3 of horizontal arclength
    would contradict the absence of closed trajectories).  MaxTime
    trajectories are retried once with the horizon doubled.
    """
    if n_seeds < 1:
        raise ValueError("need at least one seed")
    cfg = cfg or FlowConfig()
    if sample is None:
        sample = sample_Vf(f, box, cfg.sample_grid_res)
    if gamma is None:
        from .varieties import trace_gamma

        gamma = trace_gamma(f, box)
    if loja is None and len(sample):
        loja = estimate_loja(f, box, sample, seed=seed)

    starts = kronecker_points(box, n_seeds, offset=seed * 104729)
    aud1 = engel.apply_X(1, f).compiled()
    aud2 = engel.apply_X(2, f).compiled()
    records = []
    n_conv = 0
    worst_mono = 0.0
    worst_horiz = 0.0
    lb_pass = 0
    lb_total = 0
    revisits = 0
    term_counts: dict[str, int] = {}
    for si, row in enumerate(starts):
        x0 = tuple(float(v) for v in row)
        for direction in ("descent", "ascent"):
            traj = integrate(f, x0, box, replace(cfg, direction=direction), sample=sample)
            if traj.termination == "MaxTime":
                retry = replace(cfg, direction=direction, t_max=2.0 * cfg.t_max)
                traj = integrate(f, x0, box, retry, sample=sample)
            verdict = limit_analysis(traj, gamma, tol=limit_tol)
            mono = _monotonicity_defect(traj)
            horiz = _horizontality_residual(traj, aud1, aud2)
            worst_mono = max(worst_mono, mono)
            worst_horiz = max(worst_horiz, horiz)
            n_conv += bool(verdict.converged)
            rev = _revisits(traj)
            revisits += rev
            lb_ok = None
            if loja is not None and traj.l_delta is not None:
                rep = length_bound_check(traj, loja)
                lb_total += 1
                lb_pass += bool(rep.passed)
                lb_ok = rep.passed
            term_counts[traj.termination] = term_counts.get(traj.termination, 0) + 1
            records.append(
                {
                    "seed_index": si,
                    "start": x0,
                    "direction": direction,
                    "termination": traj.termination,
                    "converged": bool(verdict.converged),
                    "tail_diameter": verdict.tail_diameter,
                    "classification": verdict.classification,
                    "l_g": traj.l_g,
                    "l_delta": traj.l_delta,
                    "monotonicity_defect": mono,
                    "horizontality_residual": horiz,
                    "length_bound_passed": lb_ok,
                    "revisit_firings": rev,
                }
            )
    n_total = len(records)
    return BatchSummary(
        n_trajectories=n_total,
        fraction_converged=n_conv / n_total,
        max_monotonicity_violation=worst_mono,
        max_horizontality_residual=worst_horiz,
        length_bound_pass_rate=(lb_pass / lb_total) if lb_total else 1.0,
        revisit_firings=revisits,
        termination_counts=term_counts,
        records=records,
    )
