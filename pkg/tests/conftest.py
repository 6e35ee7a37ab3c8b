import pytest

from engelflow.poly import parse_poly, random_poly
from engelflow.varieties import Box
from engelflow.genericity import certify
from engelflow import flow as flowmod

MODEL = "x1^2/2 + x2^2/2"
DEGENERATE = "x1^2/2 + x2*x4"
TRANSVERSE = "x1^2/2 + x1*x2 + x2*x4"

# first ten seeds from 1000 upward whose degree-3 draw passes every
# certificate on [-1,1]^4; the fixture re-checks them instead of trusting
# this list
CUBIC_SEEDS = (1000, 1001, 1002, 1003, 1004, 1005, 1006, 1007, 1008, 1009)

BATCH_CFG = flowmod.FlowConfig(rtol=1e-8, atol=1e-10, max_step=0.15, stop_grad=1e-10)


@pytest.fixture(scope="session")
def model_poly():
    return parse_poly(MODEL)


@pytest.fixture(scope="session")
def degenerate_poly():
    return parse_poly(DEGENERATE)


@pytest.fixture(scope="session")
def transverse_poly():
    return parse_poly(TRANSVERSE)


@pytest.fixture(scope="session")
def unit_box():
    return Box.cube(1.0)


@pytest.fixture(scope="session")
def wide_box():
    return Box.cube(2.0)


@pytest.fixture(scope="session")
def certified_cubics(unit_box):
    polys = []
    for seed in CUBIC_SEEDS:
        f = random_poly(3, seed=seed)
        rep = certify(f, unit_box)
        assert rep.all_pass(), f"cubic seed {seed} no longer certifies"
        polys.append(f)
    return polys


@pytest.fixture(scope="session")
def cubic_batches(certified_cubics, unit_box):
    out = []
    for i, f in enumerate(certified_cubics):
        out.append(flowmod.batch_flow(f, unit_box, 100, BATCH_CFG, seed=i))
    return out
