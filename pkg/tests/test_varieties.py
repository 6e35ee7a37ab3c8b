import math

import numpy as np
import pytest

from engelflow.poly import parse_poly, random_poly
from engelflow.varieties import (
    Box,
    EmptyVariety,
    RankDeficiency,
    TraceOptions,
    classify_component,
    component_bound,
    distance_to_Vf,
    fiber_slab_local_rank,
    omega_set,
    sample_Vf,
    solve_finite_system,
    tangency_score,
    trace_gamma,
)


class TestBox:
    def test_bounds_validation(self):
        with pytest.raises(ValueError):
            Box((0.0, 0.0, 0.0, 0.0), (1.0, 1.0, 0.0, 1.0))

    def test_contains_and_clip(self):
        b = Box.cube(1.0)
        assert b.contains((0.9, -0.9, 0.0, 1.0))
        assert not b.contains((1.1, 0.0, 0.0, 0.0))
        clipped = b.clip((2.0, -3.0, 0.5, 0.0))
        assert b.contains(clipped)
        assert tuple(clipped[:2]) == (1.0, -1.0)

    def test_grid_shape_and_membership(self):
        b = Box.cube(2.0)
        pts = b.grid(3)
        assert pts.shape == (81, 4)
        assert bool(np.all(b.contains_many(pts)))


def test_component_bound_formula():
    assert component_bound(2) == 54
    assert component_bound(3) == 1372


def test_sample_critical_surface_quadratic(model_poly, unit_box):
    s = sample_Vf(model_poly, unit_box)
    assert len(s) > 0
    assert float(np.max(s.residuals)) <= 1e-9
    # the surface is the plane x1 = x2 = 0
    assert float(np.max(np.abs(s.points[:, :2]))) <= 1e-8
    assert float(np.min(s.jacobian_sigma2)) > 0.5


def test_sample_empty_when_no_critical_points(wide_box):
    s = sample_Vf(parse_poly("x1"), wide_box)
    assert len(s) == 0
    with pytest.raises(EmptyVariety):
        distance_to_Vf(parse_poly("x1"), s, (0.0, 0.0, 0.0, 0.0))


def test_distance_to_plane_exact(model_poly, wide_box):
    s = sample_Vf(model_poly, wide_box)
    d = distance_to_Vf(model_poly, s, (3.0, 4.0, 7.0, -2.0))
    assert math.isclose(d, 5.0, rel_tol=0, abs_tol=1e-8)


def test_degenerate_curve_empty_for_model(model_poly, unit_box):
    assert trace_gamma(model_poly, unit_box) == []


def test_degenerate_fixture_traces_fiber_axis(degenerate_poly, wide_box):
    comps = trace_gamma(degenerate_poly, wide_box)
    assert len(comps) == 1
    comp = classify_component(degenerate_poly, comps[0])
    pl = np.asarray(comp.polyline)
    # off-axis coordinates vanish along the whole component
    off = np.abs(pl[:, [0, 2, 3]]).max()
    assert off <= 1e-8
    assert comp.classification == "FiberContained"
    assert comp.horizontal_flag is True
    assert comp.exits_box


def test_transverse_fixture_classification(transverse_poly, wide_box):
    comps = trace_gamma(transverse_poly, wide_box)
    assert len(comps) == 1
    comp = classify_component(transverse_poly, comps[0])
    assert comp.classification == "Transverse"
    spread = comp.f_range[1] - comp.f_range[0]
    assert spread > 1.0


def test_tangency_score_values(transverse_poly):
    assert tangency_score(transverse_poly, (0.0, 0.0, 0.5, 0.0)) == 0.0
    assert math.isclose(
        tangency_score(transverse_poly, (1.0, -1.0, 1.0, 0.0)), 4.0, abs_tol=1e-12
    )


def test_rank_deficient_curve_is_rejected():
    with pytest.raises(RankDeficiency):
        trace_gamma(parse_poly("x1^3"), Box.cube(1.0))


def test_exceptional_sets(model_poly, degenerate_poly, wide_box):
    om = omega_set(model_poly, wide_box)
    assert om.finiteness_flag == "Finite"
    assert len(om.roots) == 0

    om2 = omega_set(degenerate_poly, wide_box)
    assert om2.finiteness_flag == "CurveDetected"


def test_ambient_critical_set_morse_case(wide_box):
    f = parse_poly("x1^2/2 + x2^2/2 + x3^2/2 + x4^2/2")
    rs = solve_finite_system(f, "Cr", wide_box)
    assert rs.finiteness_flag == "Finite"
    assert len(rs.roots) == 1
    assert float(np.abs(rs.roots[0]).max()) <= 1e-9


def test_ambient_critical_curve_detected(transverse_poly, wide_box):
    rs = solve_finite_system(transverse_poly, "Cr", wide_box)
    assert rs.finiteness_flag == "CurveDetected"


def test_fiber_slab_rank_separates_fixtures(transverse_poly, wide_box):
    # critical surface equal to a whole 3-plane: the zero fiber holds a patch
    flat = parse_poly("x1^2/2")
    s_flat = sample_Vf(flat, wide_box)
    assert fiber_slab_local_rank(flat, s_flat, 0.0, 1e-6) >= 2
    # on the transverse fixture a regular level cuts the surface in a curve
    s = sample_Vf(transverse_poly, wide_box)
    assert fiber_slab_local_rank(transverse_poly, s, 0.1, 1e-3) <= 1


def test_trace_options_respected(transverse_poly, wide_box):
    comps = trace_gamma(transverse_poly, wide_box, TraceOptions(max_step=0.05))
    assert len(comps) == 1
    pl = np.asarray(comps[0].polyline)
    steps = np.linalg.norm(np.diff(pl, axis=0), axis=1)
    assert float(steps.max()) <= 0.05 * 1.01
