from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from storage_bidding import driver
from storage_bidding.case_io import DC, JABR, LoadProfile, StorageSpec, build_instance
from storage_bidding.driver import (CENTRAL, FIXED_PRICE, centralized_baseline, compare_techniques,
                                    fixed_price_baseline, operating_point, reactive_benefit_study, run_sequential,
                                    sweep_buses)
from storage_bidding.exceptions import TechniqueError
from storage_bidding.opf import p_es
from storage_bidding.schemas import Solution, SolveReport, SolveStatus, TechniqueSpec

from conftest import two_bus

ACCEPTED = {SolveStatus.OPTIMAL.describe(), SolveStatus.FEASIBLE.describe()}


def test_fixed_price_baseline(dc_two_bus, opts):
    report = fixed_price_baseline(dc_two_bus, opts)
    assert report.technique == FIXED_PRICE
    assert report.status in ACCEPTED
    # discharge is capped by the stored energy: 0.5 * 0.9
    assert report.computed_profit == pytest.approx(4.5, abs=1e-5)
    assert report.actual_profit == pytest.approx(4.5, abs=1e-5)
    assert report.actual_expenses == pytest.approx(5.5, abs=1e-5)


def test_centralized_baseline(dc_two_bus, opts):
    report = centralized_baseline(dc_two_bus, opts)
    assert report.technique == CENTRAL
    assert report.computed_expenses == pytest.approx(5.5, abs=1e-5)
    assert report.actual_expenses == pytest.approx(5.5, abs=1e-5)
    assert report.computed_profit == pytest.approx(4.5, abs=1e-4)


def test_primal_dual_reduction_is_exact_when_congested(dc_congested, opts):
    report = run_sequential(dc_congested, TechniqueSpec.parse("PD"), opts)
    assert report.status in ACCEPTED
    # the expensive local unit stays marginal, so the price holds at 20
    assert report.actual_profit == pytest.approx(9.0, abs=1e-4)
    assert report.computed_profit == pytest.approx(report.actual_profit, abs=1e-4)
    assert abs(report.diff_pct) < 1e-2
    assert report.duality_gap_pct == pytest.approx(0.0, abs=1e-4)
    assert report.violations == []
    assert len(report.history) == 1


def test_outer_iterations_recorded(dc_two_bus, opts):
    report = run_sequential(dc_two_bus, TechniqueSpec.parse("PD"), opts, outer_iterations=2)
    assert [h.outer_iteration for h in report.history] == [1, 2]
    assert report.outer_iteration == 2
    with pytest.raises(ValueError):
        run_sequential(dc_two_bus, TechniqueSpec.parse("PD"), opts, outer_iterations=0)


def test_compare_keeps_one_row_per_technique(dc_congested, opts):
    specs = [TechniqueSpec.parse(s) for s in ("PD", "MC", "BE-SD D=4")]
    reports = compare_techniques(dc_congested, specs, opts)
    assert [r.technique for r in reports] == ["PD", "MC", "BE-SD"]
    assert reports[2].params == "D=4"
    for r in reports:
        assert r.actual_profit is not None
        assert r.storage_bus == 2
    with pytest.raises(TechniqueError):
        compare_techniques(dc_congested, [], opts)


def test_sweep_summarizes_accuracy(case3, opts):
    instance = build_instance(case3, LoadProfile.flat(2), StorageSpec(bus=1), model=DC)
    result = sweep_buses(instance, TechniqueSpec.parse("PD"), opts, buses=[1, 2])
    assert [r.storage_bus for r in result.reports] == [1, 2]
    assert result.max_abs_diff_pct is not None
    assert result.median_abs_diff_pct <= result.max_abs_diff_pct


def test_reactive_study_needs_jabr(dc_two_bus, opts):
    with pytest.raises(TechniqueError):
        reactive_benefit_study([dc_two_bus], TechniqueSpec.parse("SM2"), opts)


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["SM1", "SM2"])
@pytest.mark.parametrize("eps, gap_pct", [(1e-3, 1e-5), (1e-4, 1e-7)])
def test_smoothing_closes_the_gap_on_jabr(case3, winter_profile, opts, kind, eps, gap_pct):
    instance = build_instance(case3, winter_profile, StorageSpec(bus=3), model=JABR)
    report = run_sequential(instance, TechniqueSpec.build(kind, eps=eps), opts)
    assert report.status in ACCEPTED
    assert report.violations == []
    assert abs(report.duality_gap_pct) <= gap_pct
    assert abs(report.diff_pct) <= 0.01


@pytest.mark.slow
def test_reactive_study_rows(case3, opts):
    base = build_instance(case3, LoadProfile.flat(3), StorageSpec(bus=1), model=JABR)
    instances = [base.with_storage_bus(bus) for bus in case3.bus_ids]
    result = reactive_benefit_study(instances, TechniqueSpec.parse("SM2"), opts)
    assert [r.bus for r in result.rows] == list(case3.bus_ids)
    for row in result.rows:
        if row.included:
            assert row.active_profit is not None and row.full_profit is not None
    assert result.sorted_increases() == sorted(result.sorted_increases(), reverse=True)


def test_flat_prices_leave_storage_idle(opts):
    # an empty unit facing one price can only lose energy by cycling
    instance = build_instance(two_bus(), LoadProfile.flat(3), StorageSpec(bus=2, initial_soe=0.0), model=DC)
    report = run_sequential(instance, TechniqueSpec.parse("BE-SD D=4"), opts)
    assert report.status in ACCEPTED
    assert report.computed_profit == pytest.approx(0.0, abs=1e-5)
    assert report.actual_profit == pytest.approx(0.0, abs=1e-5)
    assert report.actual_expenses == pytest.approx(30.0, abs=1e-5)
    assert report.violations == []


def test_unscreened_overload_expands_the_screen(dc_congested, opts):
    op = operating_point(dc_congested, opts=opts)
    assert op.screen == {0}
    report = run_sequential(dc_congested, TechniqueSpec.parse("PD"), opts, baseline=replace(op, screen=set()))
    assert report.violations == []
    assert report.actual_profit == pytest.approx(9.0, abs=1e-4)


def _scripted_iterations(diffs):
    values = iter(diffs)

    def one_iteration(instance, spec, opts, op, iteration, previous):
        diff = next(values)
        report = SolveReport(technique=spec.kind.value, status="optimal", outer_iteration=iteration,
                             computed_profit=1.0 + diff / 100.0, actual_profit=1.0, diff_pct=diff)
        return report, Solution({p_es(0): 0.0}, 1.0, 0.0, SolveStatus.OPTIMAL)

    return one_iteration


def test_worse_outer_iteration_is_not_reported(dc_two_bus, opts, monkeypatch):
    monkeypatch.setattr(driver, "_one_iteration", _scripted_iterations([0.01, 0.03, 0.0]))
    monkeypatch.setattr(driver, "operating_point", lambda *args, **kwargs: None)
    report = run_sequential(dc_two_bus, TechniqueSpec.parse("SM2"), opts, outer_iterations=3)
    assert report.outer_iteration == 1
    assert report.diff_pct == 0.01
    assert [h.diff_pct for h in report.history] == [0.01, 0.03]


def test_improving_outer_iterations_run_to_the_end(dc_two_bus, opts, monkeypatch):
    monkeypatch.setattr(driver, "_one_iteration", _scripted_iterations([0.03, -0.01, 0.01]))
    monkeypatch.setattr(driver, "operating_point", lambda *args, **kwargs: None)
    report = run_sequential(dc_two_bus, TechniqueSpec.parse("SM2"), opts, outer_iterations=3)
    assert report.outer_iteration == 3
    assert len(report.history) == 3


@pytest.mark.slow
@pytest.mark.parametrize("case, bus", [("case3", 3), ("case5", 4)])
def test_outer_iterations_never_raise_the_error(request, winter_profile, opts, case, bus):
    instance = build_instance(request.getfixturevalue(case), winter_profile, StorageSpec(bus=bus), model=JABR)
    report = run_sequential(instance, TechniqueSpec.parse("SM2 eps=1e-4"), opts, outer_iterations=2)
    first = report.history[0]
    assert report.status in ACCEPTED
    assert first.diff_pct is not None
    assert abs(report.diff_pct) <= abs(first.diff_pct) + 1e-6


@pytest.mark.slow
def test_comparison_ordering_on_jabr(case3, winter_profile, opts):
    instance = build_instance(case3, winter_profile, StorageSpec(bus=3), model=JABR)
    specs = [TechniqueSpec.parse(s) for s in ("PD", "CS-R eps=0.01", "SM2 eps=1e-4", "SD")]
    primal_dual, relaxed_cs, smoothed, strong_duality = compare_techniques(instance, specs, opts)
    for report in (primal_dual, relaxed_cs, smoothed, strong_duality):
        assert report.status in ACCEPTED, report.technique
    assert abs(primal_dual.duality_gap_pct) > abs(relaxed_cs.duality_gap_pct) > abs(smoothed.duality_gap_pct)
    assert strong_duality.computed_profit == pytest.approx(smoothed.computed_profit, rel=5e-3)


def test_zero_active_profit_rows_stay_out_of_the_ratio(case3, opts, monkeypatch):
    base = build_instance(case3, LoadProfile.flat(1), StorageSpec(bus=1), model=JABR)
    # (bus, reactive bids) -> (actual profit, actual expenses)
    outcomes = {(1, False): (0.0, 10.0), (1, True): (2.0, 9.0), (2, False): (4.0, 10.0), (2, True): (5.0, 8.0)}

    def sequential(instance, spec, opts=None, outer_iterations=1, baseline=None):
        profit, expenses = outcomes[(instance.storage.bus, instance.has_reactive)]
        return SolveReport(technique=spec.kind.value, status="optimal", actual_profit=profit,
                           actual_expenses=expenses)

    surface = SimpleNamespace(reactive=lambda bus: np.array([1.5]))
    monkeypatch.setattr(driver, "run_sequential", sequential)
    monkeypatch.setattr(driver, "operating_point", lambda *args, **kwargs: SimpleNamespace(surface=surface))
    result = reactive_benefit_study([base, base.with_storage_bus(2)], TechniqueSpec.parse("SM2"), opts)

    zero, regular = result.rows
    assert not zero.included
    assert zero.increase_pct == 0.0
    assert zero.full_profit == 2.0
    assert "zero active-only profit" in zero.status
    assert regular.included
    assert regular.increase_pct == pytest.approx(25.0)
    assert result.ratio == pytest.approx(2.0 / 25.0)
