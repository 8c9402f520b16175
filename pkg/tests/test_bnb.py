import itertools

import pytest

from storage_bidding.bnb import branch_and_bound
from storage_bidding.conic import dualize
from storage_bidding.conic_solver import solve_reduced_conic
from storage_bidding.driver import operating_point
from storage_bidding.opf import build_lower_level, estimate_price_bounds, p_es
from storage_bidding.problem import ReducedProblem
from storage_bidding.reducer import reduce
from storage_bidding.schemas import SolveOptions, SolveStatus, TechniqueSpec
from storage_bidding.upper import UpperLevelModel


@pytest.fixture
def binary_problem(dc_two_bus, opts):
    spec = TechniqueSpec.parse("BE-SD D=4")
    bundle = build_lower_level(dc_two_bus)
    dual, pairing = dualize(bundle.program)
    upper = UpperLevelModel(dc_two_bus.storage, dc_two_bus.horizon, reactive=False, binaries=True)
    surface = estimate_price_bounds(operating_point(dc_two_bus, opts=opts).surface)
    return reduce(upper, bundle, dual, pairing, spec, surface)


def _enumerate(problem):
    names = problem.integral_names()
    best = None
    for values in itertools.product((0.0, 1.0), repeat=len(names)):
        node = problem.relaxed().with_bounds({k: (v, v) for k, v in zip(names, values)})
        sol = solve_reduced_conic(node)
        if sol.status.accepted and (best is None or sol.objective > best.objective):
            best = sol
    return best


def test_matches_enumeration(binary_problem):
    assert len(binary_problem.integral_names()) == 3
    brute = _enumerate(binary_problem)
    assert brute is not None
    sol = branch_and_bound(binary_problem)
    assert sol.status == SolveStatus.OPTIMAL
    assert sol.objective == pytest.approx(brute.objective, abs=1e-5)
    assert sol.mip_gap == pytest.approx(0.0, abs=1e-6)
    for name in binary_problem.integral_names():
        assert sol.point[name] in (0.0, 1.0)
    # magnitudes come in thirds of the rating; 0.4 is the largest the stored energy allows
    assert sol.point[p_es(0)] == pytest.approx(0.4, abs=1e-5)


def test_exhaustive_search_agrees(binary_problem):
    pruned = branch_and_bound(binary_problem)
    full = branch_and_bound(binary_problem, SolveOptions(exhaustive=True))
    assert full.objective == pytest.approx(pruned.objective, abs=1e-6)
    assert full.nodes >= pruned.nodes


def test_infeasible_integer_problem():
    problem = ReducedProblem("parity")
    x = problem.add_variable("x", 0.0, 1.0, integral=True)
    y = problem.add_variable("y", 0.0, 1.0, integral=True)
    problem.add_row(x + y, "==", 1.0, "one", "technique")
    problem.add_row(x - y, "==", 0.5, "half", "technique")
    problem.set_objective(x)
    sol = branch_and_bound(problem)
    assert sol.status == SolveStatus.INFEASIBLE
    assert sol.point == {}


def test_knapsack():
    problem = ReducedProblem("knapsack")
    items = [(3.0, 2.0), (4.0, 3.0), (5.0, 4.0), (6.0, 5.0)]
    chosen = [problem.add_variable(f"x{i}", 0.0, 1.0, integral=True) for i in range(len(items))]
    weight = chosen[0] * items[0][1]
    value = chosen[0] * items[0][0]
    for x, (v, w) in zip(chosen[1:], items[1:]):
        weight = weight + x * w
        value = value + x * v
    problem.add_row(weight, "<=", 5.0, "capacity", "technique")
    problem.set_objective(value)
    sol = branch_and_bound(problem)
    assert sol.objective == pytest.approx(7.0, abs=1e-6)
    assert [round(sol.point[f"x{i}"]) for i in range(4)] == [1, 1, 0, 0]
