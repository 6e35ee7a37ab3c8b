import math

import numpy as np
import pytest

from engelflow.engel import apply_X
from engelflow.poly import parse_poly, random_poly
from engelflow.varieties import (
    Box,
    EmptyVariety,
    classify_component,
    sample_Vf,
    trace_gamma,
)
from engelflow.flow import (
    FlowConfig,
    StartOutsideBox,
    batch_flow,
    delta_gradient,
    estimate_loja,
    integrate,
    kronecker_points,
    length_bound_check,
    limit_analysis,
)

START = (1.0, 1.0, 0.0, 0.0)


def _model_reference(t):
    e = np.exp(-t)
    return np.stack(
        [e, e, (e * e - 1.0) / 2.0, (1.0 - e) / 2.0 + (e ** 3 - 1.0) / 6.0],
        axis=-1,
    )


def test_model_descent_matches_closed_form(model_poly, unit_box):
    traj = integrate(model_poly, START, unit_box)
    assert traj.termination == "NearVf"
    ref = _model_reference(np.asarray(traj.ts))
    err = np.linalg.norm(np.asarray(traj.xs) - ref, axis=1).max()
    assert err <= 1e-8
    assert np.linalg.norm(np.array(traj.xs[-1]) - [0, 0, -0.5, 1 / 3]) <= 1e-6
    assert abs(traj.l_g - math.sqrt(2.0)) <= 1e-6
    assert abs(traj.l_delta - 1.0) <= 1e-6


def test_energy_identity_along_flow(unit_box):
    f = random_poly(3, seed=77)
    g1 = apply_X(1, f)
    g2 = apply_X(2, f)
    grads = (f.partial(1), f.partial(2), f.partial(3), f.partial(4))
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = tuple(float(v) for v in rng.uniform(-1, 1, 4))
        a, b = g1.eval(x), g2.eval(x)
        v = (-a, -b, -x[0] * b, -x[2] * b)
        dot = sum(gi.eval(x) * vi for gi, vi in zip(grads, v))
        g2n = a * a + b * b
        assert abs(dot + g2n) <= 1e-12 * (1.0 + g2n)


def test_discrete_decay_rate_matches_gradient(model_poly, unit_box):
    cfg = FlowConfig(max_step=0.005)
    traj = integrate(model_poly, START, unit_box, cfg)
    t = np.asarray(traj.ts)
    fs = np.asarray(traj.fs)
    gn = np.asarray(traj.grad_norms)
    fd = np.diff(fs) / np.diff(t)
    trap = -(gn[:-1] ** 2 + gn[1:] ** 2) / 2.0
    rel = np.abs(fd - trap) / np.maximum(np.abs(trap), 1e-30)
    assert float(rel[np.abs(trap) > 1e-12].max()) <= 1e-5


def test_limit_stable_under_tolerance_refinement(model_poly, unit_box):
    a = integrate(model_poly, START, unit_box, FlowConfig(rtol=1e-8))
    b = integrate(model_poly, START, unit_box, FlowConfig(rtol=5e-9))
    gap = np.linalg.norm(np.array(a.xs[-1]) - np.array(b.xs[-1]))
    assert gap <= 1e-6


def test_ascent_reaches_boundary(model_poly, unit_box):
    traj = integrate(
        model_poly, (0.5, 0.5, 0.0, 0.0), unit_box, FlowConfig(direction="ascent")
    )
    assert traj.termination == "BoxExit"
    fs = np.asarray(traj.fs)
    assert bool(np.all(np.diff(fs) > 0))
    last = np.array(traj.xs[-1])
    assert np.isclose(np.abs(last), 1.0).any()
    verdict = limit_analysis(traj, [])
    assert verdict.converged and verdict.classification == "Boundary"


def test_stationary_start_is_single_sample(model_poly, unit_box):
    traj = integrate(model_poly, (0.0, 0.0, 0.3, 0.4), unit_box)
    assert traj.termination == "NearVf"
    assert len(traj.ts) == 1
    assert traj.l_g == 0.0


def test_start_outside_box_rejected(model_poly, unit_box):
    with pytest.raises(StartOutsideBox):
        integrate(model_poly, (2.0, 0.0, 0.0, 0.0), unit_box)


def test_empty_critical_surface_flow(unit_box):
    f = parse_poly("x1 + x2")
    traj = integrate(f, (0.0, 0.0, 0.0, 0.0), unit_box)
    assert traj.termination == "BoxExit"
    assert bool(np.all(np.isinf(traj.dists)))
    assert traj.ldelta_cum is None and traj.l_delta is None
    text = traj.to_csv()
    lines = text.strip().split("\n")
    assert lines[0] == "t,x1,x2,x3,x4,f,grad_norm,dist_vf,lg_cum,ldelta_cum"
    assert lines[1].endswith(",")  # distance column inf, delta column empty
    loja_stub = None
    with pytest.raises(EmptyVariety):
        length_bound_check(traj, loja_stub)


def test_loja_constants_exact_on_model(model_poly, unit_box):
    s = sample_Vf(model_poly, unit_box)
    est = estimate_loja(model_poly, unit_box, s)
    assert est.C1 == 1.0 and est.C2 == 1.0
    assert est.sample_count > 0
    assert est.collar_radius == 1e-3
    assert unit_box.contains(est.argmin) and unit_box.contains(est.argmax)


def test_loja_commutes_with_doubling(unit_box):
    f = random_poly(3, seed=5)
    s = sample_Vf(f, unit_box)
    if len(s) == 0:
        pytest.skip("surface misses the box for this draw")
    one = estimate_loja(f, unit_box, s, seed=3)
    two = estimate_loja(f + f, unit_box, sample_Vf(f + f, unit_box), seed=3)
    assert two.C1 == 2.0 * one.C1
    assert two.C2 == 2.0 * one.C2


def test_delta_gradient_scaling(model_poly):
    v = delta_gradient(model_poly, (1.0, 0.0, 0.0, 0.0), 2.0)
    assert v.a == (0.25, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        delta_gradient(model_poly, (1.0, 0.0, 0.0, 0.0), 0.0)


def test_length_bound_tight_on_model(model_poly, unit_box):
    s = sample_Vf(model_poly, unit_box)
    est = estimate_loja(model_poly, unit_box, s)
    traj = integrate(model_poly, START, unit_box, sample=s)
    rep = length_bound_check(traj, est)
    assert rep.passed
    assert abs(rep.ratio - 1.0) <= 1e-3


def test_limit_analysis_classifications(model_poly, degenerate_poly, unit_box):
    # cut off early: no verdict can be issued
    short = integrate(model_poly, START, unit_box, FlowConfig(t_max=1.0))
    assert short.termination == "MaxTime"
    v = limit_analysis(short, [])
    assert not v.converged and v.witness_pair is not None

    # full run lands on the critical surface away from the degeneracy curve
    traj = integrate(model_poly, START, unit_box)
    v2 = limit_analysis(traj, [])
    assert v2.converged and v2.classification == "VfOffGamma"
    assert v2.tail_diameter <= 1e-5

    # straight horizontal decay onto the fiber axis of the degenerate fixture
    comps = [
        classify_component(degenerate_poly, c)
        for c in trace_gamma(degenerate_poly, unit_box)
    ]
    traj3 = integrate(degenerate_poly, (0.5, 0.5, 0.0, 0.0), unit_box)
    assert traj3.termination == "NearVf"
    v3 = limit_analysis(traj3, comps)
    assert v3.converged and v3.classification == "NearGamma"
    assert v3.component_index == 0


def test_kronecker_points_deterministic(unit_box):
    a = kronecker_points(unit_box, 16)
    b = kronecker_points(unit_box, 16)
    c = kronecker_points(unit_box, 16, offset=5)
    assert a.shape == (16, 4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert bool(np.all(unit_box.contains_many(a)))


def test_csv_round_trip_header_and_values(model_poly, unit_box, tmp_path):
    traj = integrate(model_poly, START, unit_box)
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "t,x1,x2,x3,x4,f,grad_norm,dist_vf,lg_cum,ldelta_cum"
    assert len(lines) == 1 + len(traj.ts)
    first = [float(tok) for tok in lines[1].split(",")]
    assert first[0] == 0.0 and first[1] == 1.0


def test_batch_flow_small(model_poly, unit_box):
    batch = batch_flow(model_poly, unit_box, 3, seed=1)
    assert batch.n_trajectories == 6
    assert len(batch.records) == 6
    assert sum(batch.termination_counts.values()) == 6
    assert batch.fraction_converged == 1.0
    assert batch.revisit_firings == 0
    assert batch.max_horizontality_residual == 0.0
    for rec in batch.records:
        assert rec["direction"] in ("descent", "ascent")
        assert len(rec["start"]) == 4
