import numpy as np
import pytest

from storage_bidding.case_io import DC, JABR, LoadProfile, StorageSpec, build_instance
from storage_bidding.conic import dualize
from storage_bidding.driver import operating_point
from storage_bidding.exceptions import TechniqueError
from storage_bidding.opf import balance_dual, build_lower_level, estimate_price_bounds, p_es
from storage_bidding.reducer import gap_expression, profit_of, reduce, warm_start
from storage_bidding.schemas import Technique, TechniqueSpec
from storage_bidding.upper import UpperLevelModel

from conftest import two_bus


def _pieces(instance, spec, bounds=True, opts=None):
    bundle = build_lower_level(instance)
    dual, pairing = dualize(bundle.program)
    upper = UpperLevelModel(instance.storage, instance.horizon, reactive=bool(bundle.injection_q),
                            binaries=spec.binaries)
    surface = None
    if bounds:
        surface = estimate_price_bounds(operating_point(instance, opts=opts).surface)
    return upper, bundle, dual, pairing, surface


def _random_point(problem, rng):
    return {k: rng.uniform(-2.0, 2.0) for k in problem.variables}


@pytest.fixture
def quad_dc():
    net = two_bus(quad=2.0)
    return build_instance(net, LoadProfile((0.8, 1.0)), StorageSpec(bus=2), model=DC)


def test_technique_strings_parse():
    assert TechniqueSpec.parse("SM1 eps=1e-4").label() == "SM1 eps=1e-4"
    assert TechniqueSpec.parse("pf-cs pi=10").kind == Technique.PF_CS
    spec = TechniqueSpec.parse("BE-SD D=8 binaries")
    assert spec.steps == 8 and spec.binaries
    assert TechniqueSpec.parse("SM2").eps == pytest.approx(1e-4)
    for bad in ("XX", "PD eps=1", "SM1 eps=-1", "BE-SD D=1", "CS-R eps=abc"):
        with pytest.raises(TechniqueError):
            TechniqueSpec.parse(bad)


def test_pd_objective_identity_and_convexity(quad_dc, opts):
    spec = TechniqueSpec.parse("PD")
    upper, bundle, dual, pairing, surface = _pieces(quad_dc, spec, opts=opts)
    problem = reduce(upper, bundle, dual, pairing, spec, surface)
    assert problem.is_convex()
    # the p_es * lam bilinears cancel between profit and the dual objective
    assert not any(a.startswith("p_es") or b.startswith("p_es") for a, b in problem.objective.quad)

    rng = np.random.default_rng(1)
    primal_objective = bundle.program.primal_objective()
    for _ in range(20):
        point = _random_point(problem, rng)
        full = {k: point.get(k, 0.0) for k in set(dual.objective.symbols()) | set(primal_objective.symbols())}
        full.update(point)
        expected = (profit_of(full, full, 2, bundle) + dual.objective.evaluate(full)
                    - primal_objective.evaluate(full))
        assert problem.objective.evaluate(full) == pytest.approx(expected, rel=1e-9, abs=1e-9)
        assert gap_expression(bundle, dual).evaluate(full) == pytest.approx(
            primal_objective.evaluate(full) - dual.objective.evaluate(full), abs=1e-9)


@pytest.mark.parametrize("name,convex", [
    ("PD", True), ("PD-S", True), ("SD", False), ("SD-R eps=1", False), ("MC", True), ("CS", False),
    ("CS-R eps=0.01", False), ("CS-A", False), ("CS-AR eps=1e-3", False), ("PF-SD pi=100", False),
    ("PF-CS pi=10", False), ("BE-SD D=4", True), ("BE-PF pi=100 D=4", True), ("UE-SD D=4", True),
    ("UE-PF pi=100 D=4", True), ("SM1 eps=1e-4", False), ("SM2 eps=1e-4", False),
])
def test_every_technique_builds(quad_dc, opts, name, convex):
    spec = TechniqueSpec.parse(name)
    upper, bundle, dual, pairing, surface = _pieces(quad_dc, spec, opts=opts)
    problem = reduce(upper, bundle, dual, pairing, spec, surface)
    assert problem.relaxed().is_convex() == convex
    assert problem.block("upper")
    assert set(problem.referenced()) <= set(problem.variables)


def test_pd_s_needs_quadratic_costs(dc_two_bus, opts):
    spec = TechniqueSpec.parse("PD-S")
    upper, bundle, dual, pairing, surface = _pieces(dc_two_bus, spec, opts=opts)
    with pytest.raises(TechniqueError):
        reduce(upper, bundle, dual, pairing, spec, surface)
    # other stationarity users skip the strengthening instead
    cs = TechniqueSpec.parse("CS")
    assert not reduce(upper, bundle, dual, pairing, cs, surface).block("stationarity")


def test_bounded_techniques_need_price_bounds(dc_two_bus):
    spec = TechniqueSpec.parse("MC")
    upper, bundle, dual, pairing, _ = _pieces(dc_two_bus, spec, bounds=False)
    with pytest.raises(TechniqueError):
        reduce(upper, bundle, dual, pairing, spec, None)


def test_mccormick_envelopes_contain_the_product(dc_two_bus, opts):
    spec = TechniqueSpec.parse("MC")
    upper, bundle, dual, pairing, surface = _pieces(dc_two_bus, spec, opts=opts)
    problem = reduce(upper, bundle, dual, pairing, spec, surface)
    rows = [r for r in problem.rows if r.name.startswith("mc_") and r.name.endswith("_p[0]")]
    assert len(rows) == 4
    nu = balance_dual(bundle.balance_p[(0, 2)])
    rating = upper.storage.rating
    lo, hi = surface.lam_p_lo[0, 1], surface.lam_p_hi[0, 1]
    rng = np.random.default_rng(2)
    for _ in range(10000):
        p = rng.uniform(-rating, rating)
        lam = rng.uniform(lo, hi)
        point = {p_es(0): p, nu: -lam, "w_p[0]": p * lam}
        for row in rows:
            value = row.expr.evaluate(point) - row.rhs
            slack = 1e-9 * max(1.0, abs(hi) * rating)
            assert (value >= -slack) if row.sense == ">=" else (value <= slack), row.name


@pytest.mark.parametrize("name,digits,unary", [("BE-SD D=4", 2, False), ("BE-SD D=8", 3, False),
                                               ("UE-SD D=4", 4, True)])
def test_discretization_digit_counts(dc_two_bus, opts, name, digits, unary):
    spec = TechniqueSpec.parse(name)
    upper, bundle, dual, pairing, surface = _pieces(dc_two_bus, spec, opts=opts)
    problem = reduce(upper, bundle, dual, pairing, spec, surface)
    prefix = "ue" if unary else "be"
    digit_names = [k for k in problem.integral_names() if k.startswith(f"x_p_{prefix}[0,")]
    assert len(digit_names) == digits
    assert "x_p[0]" in problem.integral_names()
    assert any(r.name == "ue_one_p[0]" for r in problem.rows) == unary
    levels = problem.variables["y_p[0]"].ub
    assert levels == (4.0 if unary else 2.0 ** digits - 1)


def test_smoothing_replaces_cones(case3, opts):
    instance = build_instance(case3, LoadProfile.flat(1), StorageSpec(bus=3), model=JABR)
    spec = TechniqueSpec.parse("SM2 eps=1e-3")
    upper, bundle, dual, pairing, surface = _pieces(instance, spec, bounds=False)
    problem = reduce(upper, bundle, dual, pairing, spec, surface)
    assert len(problem.smoothed) == len(pairing)
    # only the storage rating cone survives
    assert [c.name for c in problem.cones] == ["rating[0]"]
    assert {s.kind for s in problem.smoothed} == {"Kanzow"}
    assert problem.block("stationarity")


def test_warm_start_respects_bounds(dc_two_bus, opts):
    spec = TechniqueSpec.parse("PD")
    upper, bundle, dual, pairing, surface = _pieces(dc_two_bus, spec, opts=opts)
    problem = reduce(upper, bundle, dual, pairing, spec, surface)
    op = operating_point(dc_two_bus, opts=opts)
    start = warm_start(problem, op.solution.point, op.solution.duals, upper.point([5.0]))
    assert set(start) == set(problem.variables)
    assert start[p_es(0)] == pytest.approx(upper.storage.rating)
    assert start["pg[0,0]"] == pytest.approx(op.solution.point["pg[0,0]"])
