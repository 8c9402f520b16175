from dataclasses import replace

import numpy as np
import pytest
from scipy.optimize import fsolve

from storage_bidding.case_io import DC, JABR, Branch, Bus, Generator, Load, LoadProfile, Network, StorageSpec, \
    build_instance
from storage_bidding.driver import operating_point, solve_lower_level, verify
from storage_bidding.exceptions import NetworkDisconnectedError
from storage_bidding.opf import (PriceSurface, branch_loading, build_lower_level, estimate_price_bounds,
                                 extract_prices, thermal_violations)

from conftest import two_bus


def test_uncongested_price_equals_marginal_cost(dc_two_bus, opts):
    bundle, sol = solve_lower_level(dc_two_bus, opts=opts)
    assert sol.point["pg[0,0]"] == pytest.approx(1.0, abs=1e-6)
    prices = extract_prices(bundle, sol.duals)
    np.testing.assert_allclose(prices.lam_p[0], [10.0, 10.0], atol=1e-6)
    assert prices.lam_q is None
    assert sol.objective == pytest.approx(10.0, abs=1e-6)


def test_congested_line_splits_prices(dc_congested, opts):
    bundle, sol = solve_lower_level(dc_congested, opts=opts)
    assert sol.point["pg[0,0]"] == pytest.approx(0.5, abs=1e-6)
    assert sol.point["pg[0,1]"] == pytest.approx(0.5, abs=1e-6)
    prices = extract_prices(bundle, sol.duals)
    assert prices.active(1)[0] == pytest.approx(10.0, abs=1e-6)
    assert prices.active(2)[0] == pytest.approx(20.0, abs=1e-6)
    assert branch_loading(bundle, sol.point)[(0, 0)] == pytest.approx(1.0, abs=1e-6)


def test_storage_injection_shifts_dispatch(dc_two_bus, opts):
    _, sol = solve_lower_level(dc_two_bus, p=[0.3], opts=opts)
    assert sol.point["pg[0,0]"] == pytest.approx(0.7, abs=1e-6)
    check = verify(dc_two_bus, [0.3], opts=opts)
    assert check.actual_profit == pytest.approx(3.0, abs=1e-5)
    assert check.violations == []


def test_verification_flags_overloaded_branch(opts):
    # unscreened limit: clearing ignores it, verification reports it
    instance = build_instance(two_bus(rate=0.5), LoadProfile.flat(1), StorageSpec(bus=2), model=DC)
    screened = instance.with_screen([])
    check = verify(screened, [0.0], opts=opts)
    assert check.violations == ["t=0 branch=0 loading=2.000000"]
    (overload,) = check.overloads
    assert (overload.t, overload.branch) == (0, 0)
    assert overload.loading == pytest.approx(2.0, abs=1e-6)


def test_operating_point_screens_loaded_branches(dc_congested, opts):
    op = operating_point(dc_congested, opts=opts)
    assert op.screen == {0}
    relaxed = operating_point(replace(dc_congested, network=two_bus(rate=5.0, second_cost=20.0)), opts=opts)
    assert relaxed.screen == set()


@pytest.mark.parametrize("model", [DC, JABR])
def test_load_perturbation_matches_price(case3, model, opts):
    instance = build_instance(case3, LoadProfile.flat(1), StorageSpec(bus=1), model=model)
    bundle, sol = solve_lower_level(instance, opts=opts)
    prices = extract_prices(bundle, sol.duals)
    delta = 1e-4
    for j, load in enumerate(case3.loads):
        bumped = instance.load_p.copy()
        bumped[0, j] += delta
        _, moved = solve_lower_level(replace(instance, load_p=bumped), opts=opts)
        predicted = prices.active(load.bus)[0] * delta
        assert moved.objective - sol.objective == pytest.approx(predicted, rel=0.05, abs=1e-7)


def test_jabr_has_reactive_prices_and_cones(case3, opts):
    instance = build_instance(case3, LoadProfile.flat(2), StorageSpec(bus=2), model=JABR)
    bundle = build_lower_level(instance)
    assert len(bundle.injection_q) == 2
    cone_names = [c.name for c in bundle.program.cones]
    assert "jabr[0,1-3]" in cone_names
    assert "thermal_fr[1,1]" in cone_names
    bundle, sol = solve_lower_level(instance, opts=opts)
    prices = extract_prices(bundle, sol.duals)
    assert prices.lam_q.shape == (2, 3)
    assert thermal_violations(bundle, sol.point) == []
    no_q = build_lower_level(instance.with_reactive_bids(False))
    assert no_q.injection_q == []


def test_price_bounds_clamp_active_floor():
    surface = PriceSurface([1, 2], np.array([[5.0, -3.0]]), np.array([[1.0, -1.0]]))
    bounded = estimate_price_bounds(surface, active_width=10.0, reactive_width=2.0)
    np.testing.assert_allclose(bounded.lam_p_lo, [[0.0, -3.0]])
    np.testing.assert_allclose(bounded.lam_p_hi, [[15.0, 7.0]])
    np.testing.assert_allclose(bounded.lam_q_lo, [[-1.0, -3.0]])
    assert bounded.within_bounds(surface, 1)
    shifted = PriceSurface([1, 2], np.array([[16.0, 0.0]]))
    assert not bounded.within_bounds(shifted, 1)
    with pytest.raises(ValueError):
        estimate_price_bounds(surface, active_width=-1.0)


def test_islanded_network_rejected():
    net = Network(
        "islands", 100.0,
        (Bus(1, 3, 0.9, 1.1), Bus(2, 1, 0.9, 1.1), Bus(3, 1, 0.9, 1.1)),
        (Generator(1, 0.0, 1.0, -1.0, 1.0, cost_lin=1.0),),
        (Branch(1, 2, 0.0, 0.1),),
        (Load(3, 0.1, 0.0),),
    )
    instance = build_instance(net, LoadProfile.flat(1), StorageSpec(bus=1), model=DC)
    with pytest.raises(NetworkDisconnectedError):
        build_lower_level(instance)


def test_dc_flows_conserve_power_at_every_bus(case3, opts):
    instance = build_instance(case3, LoadProfile.flat(2), StorageSpec(bus=2), model=DC)
    bids = [0.1, -0.05]
    _, sol = solve_lower_level(instance, p=bids, opts=opts)
    net = instance.network
    for t in range(instance.horizon):
        residual = {b.id: -b.gs for b in net.buses}
        for k, gen in net.active_generators():
            residual[gen.bus] += sol.point[f"pg[{t},{k}]"]
        for j, load in enumerate(net.loads):
            residual[load.bus] -= instance.load_p[t, j]
        residual[instance.storage.bus] += bids[t]
        for e, br in net.active_branches():
            residual[br.from_bus] -= sol.point[f"f[{t},{e}]"]
            residual[br.to_bus] += sol.point[f"f[{t},{e}]"]
        for bus, value in residual.items():
            assert value == pytest.approx(0.0, abs=1e-6), f"t={t} bus={bus}"
        generation = sum(sol.point[f"pg[{t},{k}]"] for k, _ in net.active_generators())
        demand = float(instance.load_p[t].sum()) + sum(b.gs for b in net.buses)
        assert generation + bids[t] == pytest.approx(demand, abs=1e-6)


def _two_bus_power_flow(net):
    """AC power flow with the slack at 1.0 pu; returns |V2| and the slack injection."""
    br, load = net.branches[0], net.loads[0]
    y = 1.0 / complex(br.r, br.x)

    def mismatch(v):
        v2 = v[0] * np.exp(1j * v[1])
        s2 = v2 * np.conj(y * (v2 - 1.0))
        return [s2.real + load.pd, s2.imag + load.qd]

    vm, va = fsolve(mismatch, [1.0, 0.0], xtol=1e-12)
    v2 = vm * np.exp(1j * va)
    return vm, np.conj(y * (1.0 - v2))


def test_jabr_cost_bounded_by_ac_feasible_dispatch(opts):
    net = two_bus()
    vm, slack = _two_bus_power_flow(net)
    gen, bus = net.generators[0], net.buses[1]
    assert bus.vmin <= vm <= bus.vmax
    assert gen.pmin <= slack.real <= gen.pmax
    assert gen.qmin <= slack.imag <= gen.qmax
    # series resistance makes the AC dispatch cover losses
    assert slack.real > net.loads[0].pd

    instance = build_instance(net, LoadProfile.flat(1), StorageSpec(bus=2), model=JABR)
    _, sol = solve_lower_level(instance, opts=opts)
    assert sol.objective <= gen.cost_lin * slack.real + 1e-6
    assert sol.objective >= gen.cost_lin * net.loads[0].pd - 1e-6
