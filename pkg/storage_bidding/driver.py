"""Sequential outer algorithm, verification and the experiment harness."""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from .bnb import branch_and_bound
from .case_io import JABR, BilevelInstance
from .config import settings
from .conic import dualize
from .conic_solver import solve_conic, solve_reduced_conic
from .exceptions import BilevelError, SolverError, TechniqueError, VerificationError
from .expr import LinExpr
from .nlp_solver import multistart
from .opf import (LowerLevelBundle, Overload, PriceSurface, balance_dual, build_lower_level, estimate_price_bounds,
                  extract_prices, p_es, q_es, screen_branches, thermal_violations)
from .problem import ReducedProblem
from .reducer import emit_primal, gap_expression, profit_of, reduce, warm_start
from .schemas import (DISCRETE, IterationRecord, Solution, SolveOptions, SolveReport, StudyResult,
                      StudyRow, SweepResult, Technique, TechniqueSpec)
from .upper import UpperLevelModel

logger = logging.getLogger(__name__)

FIXED_PRICE = "FIXED-PRICE"
CENTRAL = "CENTRAL"
# bounds-aware techniques that get one retry with wider price envelopes
BOUNDED = DISCRETE | {Technique.MC}
REACTIVE_PRICE_TOL = 1e-9
# percentage points of profit error treated as noise between outer iterations
DIFF_TOL = 1e-6
ACTIVE_PROFIT_TOL = 1e-9


@dataclass
class OperatingPoint:
    """Lower-level solution used for screening, price bounds and warm starts."""
    bundle: LowerLevelBundle
    solution: Solution
    surface: PriceSurface
    screen: Set[int]
    bids: Tuple[List[float], List[float]]


@dataclass
class Verification:
    actual_profit: float
    actual_expenses: float
    surface: PriceSurface
    overloads: List[Overload]
    solution: Solution = field(repr=False)

    @property
    def violations(self) -> List[str]:
        return [o.describe() for o in self.overloads]


def _bid_parameters(p: Sequence[float], q: Sequence[float], bundle: LowerLevelBundle) -> Dict[str, float]:
    params = {name: float(v) for name, v in zip(bundle.injection_p, p)}
    params.update({name: float(v) for name, v in zip(bundle.injection_q, q)})
    return params


def _idle(instance: BilevelInstance) -> Tuple[List[float], List[float]]:
    zeros = [0.0] * instance.horizon
    return zeros, list(zeros) if instance.has_reactive else []


def solve_lower_level(instance: BilevelInstance, p: Sequence[float] = None, q: Sequence[float] = None,
                      opts: SolveOptions = None) -> Tuple[LowerLevelBundle, Solution]:
    """Clear the market with the storage bids fixed (idle when omitted)."""
    bundle = build_lower_level(instance)
    idle_p, idle_q = _idle(instance)
    params = _bid_parameters(idle_p if p is None else p, idle_q if q is None else q, bundle)
    sol = solve_conic(bundle.program, opts, params)
    if not sol.status.accepted:
        raise SolverError(f"Lower level of '{instance.network.name}' did not solve: {sol.status.value}", sol)
    return bundle, sol


def operating_point(instance: BilevelInstance, bids: Tuple[List[float], List[float]] = None,
                    opts: SolveOptions = None) -> OperatingPoint:
    """Clear with every rated limit imposed and screen the loaded branches."""
    full = replace(instance, screen=None)
    bids = bids or _idle(instance)
    bundle, sol = solve_lower_level(full, bids[0], bids[1], opts)
    surface = extract_prices(bundle, sol.duals)
    screen = screen_branches(bundle, sol.point, instance.threshold)
    logger.info(
        f"Operating point: expenses {sol.objective:.6g}, {len(screen)} of "
        f"{len(instance.limited_branches())} rated branches screened in"
    )
    return OperatingPoint(bundle, sol, surface, screen, bids)


def verify(instance: BilevelInstance, p: Sequence[float], q: Sequence[float] = None,
           opts: SolveOptions = None) -> Verification:
    """Re-clear with the bids fixed and check every rated limit."""
    q = list(q or [])
    try:
        bundle, sol = solve_lower_level(instance, p, q if instance.has_reactive else [], opts)
    except SolverError as e:
        raise VerificationError(f"Bids are inconsistent with the market: {e}")
    surface = extract_prices(bundle, sol.duals)
    point = {p_es(t): float(p[t]) for t in range(instance.horizon)}
    if instance.has_reactive:
        point.update({q_es(t): float(q[t]) for t in range(instance.horizon)})
    profit = profit_of(point, surface, instance.storage.bus)
    return Verification(profit, sol.objective, surface, thermal_violations(bundle, sol.point), sol)


def _route(problem: ReducedProblem, opts: SolveOptions, start: Mapping[str, float]) -> Solution:
    if problem.integral_names():
        return branch_and_bound(problem, opts, start)
    if problem.is_convex():
        return solve_reduced_conic(problem, opts)
    return multistart(problem, start, opts)


def _diff_pct(computed: Optional[float], actual: Optional[float]) -> Optional[float]:
    if computed is None or actual is None:
        return None
    if actual == 0:
        return 0.0 if abs(computed) <= 1e-9 else None
    return (computed - actual) / abs(actual) * 100.0


def _attempt(instance: BilevelInstance, spec: TechniqueSpec, opts: SolveOptions, op: OperatingPoint,
             screen: Set[int], width_scale: float, previous: Optional[Mapping[str, float]]):
    """Bounds, reduction, solve and verification for one screen set and one price envelope."""
    screened = instance.with_screen(screen)
    bundle = build_lower_level(screened)
    surface = estimate_price_bounds(op.surface, settings.ACTIVE_PRICE_WIDTH * width_scale,
                                    settings.REACTIVE_PRICE_WIDTH * width_scale)
    dual, pairing = dualize(bundle.program)
    upper = UpperLevelModel(screened.storage, screened.horizon, reactive=bool(bundle.injection_q),
                            binaries=spec.binaries or spec.kind in DISCRETE)
    problem = reduce(upper, bundle, dual, pairing, spec, surface)
    start = warm_start(problem, op.solution.point, op.solution.duals,
                       upper.point(op.bids[0], op.bids[1] or None), previous)
    sol = _route(problem, opts, start)
    return screened, bundle, dual, upper, surface, sol


def _computed(bundle: LowerLevelBundle, dual, point: Mapping[str, float], bus: int):
    profit = profit_of(point, point, bus, bundle)
    expenses = bundle.expenses().evaluate(point)
    gap_expr = gap_expression(bundle, dual)
    # dual entries pruned from the reduced problem are zero
    gap = gap_expr.evaluate({k: point.get(k, 0.0) for k in gap_expr.symbols()})
    return profit, expenses, gap / max(1.0, abs(expenses)) * 100.0


def _one_iteration(instance: BilevelInstance, spec: TechniqueSpec, opts: SolveOptions, op: OperatingPoint,
                   iteration: int, previous: Optional[Mapping[str, float]]):
    began = time.perf_counter()
    screen, width_scale = set(op.screen), 1.0
    retried_screen = retried_bounds = False
    while True:
        screened, bundle, dual, upper, surface, sol = _attempt(instance, spec, opts, op, screen, width_scale, previous)
        report = SolveReport(
            technique=spec.kind.value, params=spec.params_text(), status=sol.status.describe(),
            iterations=sol.iterations, nodes=sol.nodes, mip_gap=sol.mip_gap,
            outer_iteration=iteration, storage_bus=instance.storage.bus,
        )
        if not sol.point:
            report.message = str(sol.info.get("message", "solver returned no point"))
            break
        report.computed_profit, report.computed_expenses, report.duality_gap_pct = _computed(
            bundle, dual, sol.point, instance.storage.bus)
        p, q = upper.bids(sol.point)
        try:
            check = verify(screened, p, q, opts)
        except VerificationError as e:
            report.message = str(e)
            break
        report.actual_profit, report.actual_expenses = check.actual_profit, check.actual_expenses
        report.diff_pct = _diff_pct(report.computed_profit, report.actual_profit)
        report.violations = check.violations
        if check.overloads and not retried_screen:
            extra = {o.branch for o in check.overloads}
            logger.warning(f"{spec.label()}: {len(extra)} unscreened limits violated; expanding the screen")
            screen |= extra
            retried_screen = True
            continue
        if (spec.kind in BOUNDED and not retried_bounds
                and not surface.within_bounds(check.surface, instance.storage.bus)):
            logger.warning(f"{spec.label()}: verified prices left the envelope; widening bounds")
            width_scale *= settings.BOUND_WIDENING_FACTOR
            retried_bounds = True
            continue
        if check.overloads:
            report.message = "thermal limits violated after screen expansion"
        break
    report.wall_time = time.perf_counter() - began
    return report, sol


def run_sequential(instance: BilevelInstance, spec: TechniqueSpec, opts: SolveOptions = None,
                   outer_iterations: int = 1, baseline: OperatingPoint = None) -> SolveReport:
    """Operating point, bounds, reduction, solve and verification, repeated up to `outer_iterations` times.

    The returned report is the iterate with the smallest profit error; the loop stops as soon as an
    iterate is worse than the best one, so the reported error never grows with more iterations.
    """
    if outer_iterations < 1:
        raise ValueError("outer_iterations must be at least 1")
    opts = opts or SolveOptions()
    op = baseline or operating_point(instance, opts=opts)
    history: List[IterationRecord] = []
    previous: Optional[Mapping[str, float]] = None
    best: Optional[SolveReport] = None
    for k in range(1, outer_iterations + 1):
        report, sol = _one_iteration(instance, spec, opts, op, k, previous)
        history.append(IterationRecord(
            outer_iteration=k, computed_profit=report.computed_profit, actual_profit=report.actual_profit,
            diff_pct=report.diff_pct, duality_gap_pct=report.duality_gap_pct, status=report.status,
        ))
        logger.info(
            f"{spec.label()} iteration {k}: {report.status}, computed {report.computed_profit}, "
            f"actual {report.actual_profit}"
        )
        if best is not None and _error(report) > _error(best) + DIFF_TOL:
            logger.info(
                f"{spec.label()}: profit error rose to {_error(report):.6g}% at iteration {k}; "
                f"keeping iteration {best.outer_iteration}"
            )
            break
        best = report
        if not sol.status.accepted or k == outer_iterations or report.violations:
            break
        upper = UpperLevelModel(instance.storage, instance.horizon, instance.has_reactive)
        op = operating_point(instance, upper.bids(sol.point), opts)
        previous = sol.point
    best.history = history
    return best


def _error(report: SolveReport) -> float:
    return abs(report.diff_pct) if report.diff_pct is not None else np.inf


def compare_techniques(instance: BilevelInstance, specs: Sequence[TechniqueSpec], opts: SolveOptions = None,
                       outer_iterations: int = 1) -> List[SolveReport]:
    """One report per technique over a shared operating point; failures stay in their row."""
    if not specs:
        raise TechniqueError("No techniques to compare")
    opts = opts or SolveOptions()
    baseline = operating_point(instance, opts=opts)
    reports = []
    for spec in specs:
        try:
            reports.append(run_sequential(instance, spec, opts, outer_iterations, baseline))
        except BilevelError as e:
            logger.error(f"{spec.label()} failed: {e}")
            reports.append(SolveReport(technique=spec.kind.value, params=spec.params_text(), status="error",
                                       message=str(e), storage_bus=instance.storage.bus))
    return reports


def reactive_benefit_study(instances: Iterable[BilevelInstance], spec: TechniqueSpec,
                           opts: SolveOptions = None) -> StudyResult:
    """Profit increase and expense savings from reactive bids, one row per storage location."""
    opts = opts or SolveOptions()
    result = StudyResult(technique=spec.label())
    for instance in instances:
        if instance.model != JABR:
            raise TechniqueError("The reactive study needs the Jabr lower level")
        bus = instance.storage.bus
        row = StudyRow(bus=bus, included=False)
        try:
            full = instance.with_reactive_bids(True)
            op = operating_point(full, opts=opts)
            if np.all(np.abs(op.surface.reactive(bus)) <= REACTIVE_PRICE_TOL):
                row.status = "zero reactive prices"
                result.rows.append(row)
                continue
            active = run_sequential(instance.with_reactive_bids(False), spec, opts)
            both = run_sequential(full, spec, opts, baseline=op)
            row.status = both.status
            if active.actual_profit is None or both.actual_profit is None:
                row.status = f"{active.status} / {both.status}"
                result.rows.append(row)
                continue
            row.active_profit, row.full_profit = active.actual_profit, both.actual_profit
            row.savings = active.actual_expenses - both.actual_expenses
            if abs(active.actual_profit) <= ACTIVE_PROFIT_TOL:
                # no relative increase over a zero base; the row stays out of the ratio
                row.status = f"zero active-only profit (reactive gain {both.actual_profit:.6g})"
                result.rows.append(row)
                continue
            row.included = True
            row.increase_pct = (both.actual_profit - active.actual_profit) / abs(active.actual_profit) * 100.0
        except BilevelError as e:
            logger.error(f"Reactive study at bus {bus} failed: {e}")
            row.status = f"error: {e}"
        result.rows.append(row)
    included = [r for r in result.rows if r.included]
    if included:
        mean_increase = float(np.mean([r.increase_pct for r in included]))
        if mean_increase != 0:
            result.ratio = float(np.mean([r.savings for r in included])) / mean_increase
    return result


def sweep_buses(instance: BilevelInstance, spec: TechniqueSpec, opts: SolveOptions = None,
                buses: Sequence[int] = None) -> SweepResult:
    """Run one technique with the storage at every bus and summarize the accuracy."""
    opts = opts or SolveOptions()
    result = SweepResult(technique=spec.label())
    for bus in buses or instance.network.bus_ids:
        placed = instance.with_storage_bus(bus)
        try:
            result.reports.append(run_sequential(placed, spec, opts))
        except BilevelError as e:
            logger.error(f"Sweep at bus {bus} failed: {e}")
            result.reports.append(SolveReport(technique=spec.kind.value, params=spec.params_text(),
                                              status="error", message=str(e), storage_bus=bus))
    diffs = [abs(r.diff_pct) for r in result.reports if r.diff_pct is not None]
    if diffs:
        result.median_abs_diff_pct = float(np.median(diffs))
        result.mean_abs_diff_pct = float(np.mean(diffs))
        result.max_abs_diff_pct = float(np.max(diffs))
    return result


def _baseline_report(name: str, instance: BilevelInstance, upper: UpperLevelModel, sol: Solution,
                     computed_profit: float, computed_expenses: float, opts: SolveOptions,
                     began: float) -> SolveReport:
    report = SolveReport(technique=name, status=sol.status.describe(), iterations=sol.iterations,
                         storage_bus=instance.storage.bus)
    if sol.point:
        report.computed_profit, report.computed_expenses = computed_profit, computed_expenses
        p, q = upper.bids(sol.point)
        try:
            check = verify(instance, p, q, opts)
            report.actual_profit, report.actual_expenses = check.actual_profit, check.actual_expenses
            report.diff_pct = _diff_pct(report.computed_profit, report.actual_profit)
            report.violations = check.violations
        except VerificationError as e:
            report.message = str(e)
    report.wall_time = time.perf_counter() - began
    return report


def fixed_price_baseline(instance: BilevelInstance, opts: SolveOptions = None) -> SolveReport:
    """Price-taker storage: idle-storage prices are treated as constants."""
    opts = opts or SolveOptions()
    began = time.perf_counter()
    op = operating_point(instance, opts=opts)
    bus = instance.storage.bus
    upper = UpperLevelModel(instance.storage, instance.horizon, instance.has_reactive)
    problem = ReducedProblem(FIXED_PRICE)
    upper.emit(problem)
    lam_p, lam_q = op.surface.active(bus), op.surface.reactive(bus)
    objective = LinExpr()
    for t in range(instance.horizon):
        objective.add_term(p_es(t), float(lam_p[t]))
        if upper.reactive:
            objective.add_term(q_es(t), float(lam_q[t]))
    problem.set_objective(objective)
    problem.validate()
    sol = solve_reduced_conic(problem, opts)
    expenses = op.solution.objective
    return _baseline_report(FIXED_PRICE, instance, upper, sol, sol.objective, expenses, opts, began)


def centralized_baseline(instance: BilevelInstance, opts: SolveOptions = None) -> SolveReport:
    """The market operator dispatches the storage to minimize system expenses."""
    opts = opts or SolveOptions()
    began = time.perf_counter()
    bundle = build_lower_level(instance)
    upper = UpperLevelModel(instance.storage, instance.horizon, bool(bundle.injection_q))
    problem = ReducedProblem(CENTRAL)
    upper.emit(problem)
    emit_primal(problem, bundle)
    problem.set_objective(-bundle.expenses())
    problem.validate()
    sol = solve_reduced_conic(problem, opts)
    profit = expenses = None
    if sol.point:
        expenses = -sol.objective
        prices = {balance_dual(row): sol.duals.get(f"nu[primal[{row}]]", 0.0)
                  for row in list(bundle.balance_p.values()) + list(bundle.balance_q.values())}
        profit = profit_of(sol.point, prices, instance.storage.bus, bundle)
    return _baseline_report(CENTRAL, instance, upper, sol, profit, expenses, opts, began)
