"""End-to-end acceptance checks, one numbered criterion per test.

Each test prints a single verdict line; supporting detail appears only on
failure.
"""

import json
import math
import time

import numpy as np

from engelflow.engel import G_poly, apply_X, apply_word, xi_polys
from engelflow.poly import Poly4, parse_poly, poly_allclose, random_poly
from engelflow.varieties import (
    Box,
    TraceOptions,
    classify_component,
    component_bound,
    omega_set,
    sample_Vf,
    tangency_score,
    trace_gamma,
)
from engelflow.flow import FlowConfig, estimate_loja, integrate, length_bound_check, limit_analysis
from engelflow.genericity import PerturbationParams, certify, perturb, perturbation_from_point, verify_claim2
from engelflow.cli import main as cli_main

from tests.conftest import DEGENERATE, MODEL, TRANSVERSE


def _verdict(num, label, failures):
    status = "PASS" if not failures else "FAIL"
    print(f"criterion {num:02d} [{label}]: {status}")
    for msg in failures:
        print(f"  - {msg}")
    assert not failures


def test_criterion_01_commutator_identities():
    failures = []
    t0 = time.perf_counter()
    for seed in range(100):
        f = random_poly(5, seed=seed)
        first = apply_word((1, 2), f) - apply_word((2, 1), f)
        if not poly_allclose(first, apply_X(3, f), tol=1e-12):
            failures.append(f"first bracket identity broke at seed {seed}")
        second = apply_X(2, apply_X(3, f)) - apply_X(3, apply_X(2, f))
        if not poly_allclose(second, -apply_X(4, f), tol=1e-12):
            failures.append(f"second bracket identity broke at seed {seed}")
    elapsed = time.perf_counter() - t0
    if elapsed >= 5.0:
        failures.append(f"runtime {elapsed:.2f}s exceeds 5s")
    _verdict(1, "commutator suite", failures)


def test_criterion_02_quadratic_model_end_to_end():
    failures = []
    t0 = time.perf_counter()
    f = parse_poly(MODEL)
    box = Box.cube(1.0)
    if trace_gamma(f, box):
        failures.append("degeneracy curve expected empty")
    sample = sample_Vf(f, box)
    est = estimate_loja(f, box, sample)
    if abs(est.C1 - 1.0) > 1e-6 or abs(est.C2 - 1.0) > 1e-6:
        failures.append(f"loja constants C1={est.C1} C2={est.C2}")
    traj = integrate(f, (1.0, 1.0, 0.0, 0.0), box, sample=sample)
    end = np.array(traj.xs[-1])
    if np.linalg.norm(end - [0.0, 0.0, -0.5, 1.0 / 3.0]) > 1e-6:
        failures.append(f"limit off target: {tuple(end)}")
    if abs(traj.l_g - math.sqrt(2.0)) > 1e-6:
        failures.append(f"horizontal length {traj.l_g}")
    if abs(traj.l_delta - 1.0) > 1e-6:
        failures.append(f"degenerate length {traj.l_delta}")
    rep = length_bound_check(traj, est)
    if abs(rep.ratio - 1.0) > 1e-3:
        failures.append(f"length bound ratio {rep.ratio}")
    elapsed = time.perf_counter() - t0
    if elapsed >= 10.0:
        failures.append(f"runtime {elapsed:.2f}s exceeds 10s")
    _verdict(2, "quadratic model", failures)


def _segment_hausdorff(points, polyline):
    """Max over points of distance to the piecewise-linear curve."""
    pts = np.asarray(points, float)
    a = np.asarray(polyline, float)[:-1]
    b = np.asarray(polyline, float)[1:]
    ab = b - a
    denom = (ab * ab).sum(axis=1)
    denom[denom == 0] = 1.0
    worst = 0.0
    for p in pts:
        t = np.clip(((p - a) * ab).sum(axis=1) / denom, 0.0, 1.0)
        proj = a + t[:, None] * ab
        d = float(np.linalg.norm(proj - p, axis=1).min())
        worst = max(worst, d)
    return worst


def test_criterion_03_degenerate_fixture():
    failures = []
    f = parse_poly(DEGENERATE)
    box = Box.cube(2.0)
    comps = [classify_component(f, c) for c in trace_gamma(f, box)]
    if len(comps) != 1:
        failures.append(f"expected one component, got {len(comps)}")
    else:
        comp = comps[0]
        pl = np.asarray(comp.polyline)
        axis = np.stack(
            [np.zeros(4001), np.linspace(-2, 2, 4001), np.zeros(4001), np.zeros(4001)],
            axis=1,
        )
        onto_axis = float(np.abs(pl[:, [0, 2, 3]]).max())
        onto_curve = _segment_hausdorff(axis, pl)
        if max(onto_axis, onto_curve) > 1e-6:
            failures.append(
                f"Hausdorff gap to fiber axis: {max(onto_axis, onto_curve):.2e}"
            )
        if comp.classification != "FiberContained":
            failures.append(f"classified {comp.classification}")
        if comp.horizontal_flag is not True:
            failures.append("horizontality flag not set")
    if omega_set(f, box).finiteness_flag != "CurveDetected":
        failures.append("exceptional set flag not CurveDetected")
    rep = certify(f, box)
    if rep.md_no_fiber_horizontal is not False:
        failures.append("md certificate should be false")
    if rep.dd_omega_finite is not False:
        failures.append("dd certificate should be false")
    _verdict(3, "degenerate fixture", failures)


def test_criterion_04_transverse_fixture():
    failures = []
    f = parse_poly(TRANSVERSE)
    box = Box.cube(2.0)
    comps = trace_gamma(f, box, TraceOptions(max_step=4e-3))
    if len(comps) != 1:
        failures.append(f"expected one component, got {len(comps)}")
    else:
        pl = np.asarray(comps[0].polyline)
        t = pl[:, 0]
        ref = np.stack([t, -t, (1 + t * t) / 2, t * (t * t - 1) / 2], axis=1)
        err = float(np.linalg.norm(pl - ref, axis=1).max())
        if err > 1e-6:
            failures.append(f"parametrization gap {err:.2e}")
    s0 = tangency_score(f, (0.0, 0.0, 0.5, 0.0))
    if abs(s0) > 1e-6:
        failures.append(f"score at tangency point {s0}")
    s1 = tangency_score(f, (1.0, -1.0, 1.0, 0.0))
    if abs(s1 - 4.0) > 1e-4:
        failures.append(f"score at generic point {s1}")
    rep = certify(f, box)
    if rep.lambda_in_box != 1 or rep.kappa_in_box != 0:
        failures.append(
            f"counts lambda={rep.lambda_in_box} kappa={rep.kappa_in_box}"
        )
    _verdict(4, "transverse fixture", failures)


def test_criterion_05_perturbation_identities():
    failures = []
    x1 = parse_poly("x1")
    x2 = parse_poly("x2")
    x3 = parse_poly("x3")
    rng = np.random.default_rng(55)
    for k in range(100):
        f = random_poly(4, seed=500 + k)
        a, b, g = (float(v) for v in rng.uniform(-1, 1, 3))
        eps = PerturbationParams(a, b, g)
        fe = perturb(f, eps)
        corr = Poly4.constant(b) + x1 * g
        if not poly_allclose(G_poly(fe), G_poly(f) + corr * apply_word((1, 1), f), tol=1e-12):
            failures.append(f"degeneracy shift identity broke at draw {k}")
            break
        e1, e2 = xi_polys(fe)
        o1, o2 = xi_polys(f)
        if not (poly_allclose(e1, o1, tol=1e-12) and poly_allclose(e2, o2, tol=1e-12)):
            failures.append(f"tangent field invariance broke at draw {k}")
            break
        shift = Poly4.constant(a) + x2 * b + x3 * g
        if not poly_allclose(apply_X(2, fe), apply_X(2, f) + shift, tol=1e-12):
            failures.append(f"second-field shift identity broke at draw {k}")
            break
    ft = parse_poly(TRANSVERSE)
    bpt = (0.0, 0.0, 0.5, 0.0)
    out = verify_claim2(ft, perturbation_from_point(bpt, 0.01), bpt)
    if abs(out.lhs + 0.01) > 1e-7 or abs(out.rhs + 0.01) > 1e-7:
        failures.append(f"directional check lhs={out.lhs} rhs={out.rhs}")
    _verdict(5, "perturbation identities", failures)


def test_criterion_06_component_bound():
    failures = []
    box = Box.cube(2.0)
    bound = component_bound(2)
    if bound != 54:
        failures.append(f"degree-2 bound is {bound}")
    worst = 0
    for seed in range(200):
        f = random_poly(2, seed=seed)
        n = len(trace_gamma(f, box))
        worst = max(worst, n)
        if n > bound:
            failures.append(f"seed {seed} produced {n} components")
            break
    _verdict(6, f"component bound (max seen {worst})", failures)


def test_criterion_07_monotonicity_and_no_revisit(cubic_batches):
    failures = []
    for i, batch in enumerate(cubic_batches):
        if batch.max_monotonicity_violation > 1e-5:
            failures.append(
                f"batch {i}: monotonicity defect {batch.max_monotonicity_violation:.2e}"
            )
        if batch.revisit_firings != 0:
            failures.append(f"batch {i}: {batch.revisit_firings} revisit firings")
    _verdict(7, "flow monotonicity / no revisit", failures)


def test_criterion_08_limit_certification(cubic_batches):
    failures = []
    for i, batch in enumerate(cubic_batches):
        for rec in batch.records:
            if rec["termination"] in ("NearVf", "BoxExit"):
                if not rec["converged"]:
                    failures.append(
                        f"batch {i} seed {rec['seed_index']} {rec['direction']}: "
                        f"not converged ({rec['termination']})"
                    )
                elif rec["tail_diameter"] > 1e-5:
                    failures.append(
                        f"batch {i} seed {rec['seed_index']}: tail {rec['tail_diameter']:.2e}"
                    )
            else:
                failures.append(
                    f"batch {i} seed {rec['seed_index']} {rec['direction']}: "
                    f"inconclusive after doubled horizon ({rec['termination']})"
                )
    _verdict(8, "limit certification", failures)


def test_criterion_09_exact_horizontality(cubic_batches):
    failures = []
    for i, batch in enumerate(cubic_batches):
        if batch.max_horizontality_residual != 0.0:
            failures.append(
                f"batch {i}: residual {batch.max_horizontality_residual:.2e}"
            )
    _verdict(9, "exact horizontality", failures)


def test_criterion_10_cli_determinism(tmp_path):
    failures = []
    pairs = {}
    for tag, args in (
        ("analyze", ["analyze", "--poly", TRANSVERSE, "--seed", "7"]),
        (
            "flow",
            [
                "flow", "--poly", MODEL,
                "--box=-1,1,-1,1,-1,1,-1,1",
                "--seeds", "4", "--seed", "7",
            ],
        ),
    ):
        outs = []
        for run in (0, 1):
            path = tmp_path / f"{tag}_{run}.json"
            code = cli_main(args + ["--out", str(path)])
            if code == 1:
                failures.append(f"{tag} run errored")
            outs.append(path.read_bytes())
        pairs[tag] = outs
        if outs[0] != outs[1]:
            failures.append(f"{tag} output differs between identical runs")
    if not failures:
        # sanity: the reports really carry content
        doc = json.loads(pairs["flow"][0])
        if len(doc["flows"]) != 8:
            failures.append("flow report lost its records")
    _verdict(10, "command determinism", failures)
