"""Single-level reductions of the storage bidding bilevel program.

Every technique starts from the same pieces: the upper-level storage model,
the lower-level primal rows, the mechanical dual, and the cone pairing. They
differ in how the primal-dual link (duality gap or complementarity) is
enforced and in the objective. The profit bilinears p_es * lam cancel
symbolically between the profit and the dual objective, which is what makes
PD, PD-S, MC and the discretized variants convex.
"""

import logging
import math
from typing import Dict, Mapping, Optional, Union

from .conic import DualProgram, PairingMap
from .exceptions import ProgramBuildError, TechniqueError
from .expr import LinExpr, QuadExpr
from .opf import LowerLevelBundle, PriceSurface, balance_dual, p_es, q_es
from .problem import DUAL, PRIMAL, STATIONARITY, TECHNIQUE, ReducedProblem
from .schemas import NEEDS_STATIONARITY, Technique, TechniqueSpec
from .smoothing import CHKS, KANZOW
from .upper import UpperLevelModel, p_ch, p_dis, q_ch, q_dis, x_p, x_q

logger = logging.getLogger(__name__)

SMOOTHING_KIND = {Technique.SM1: CHKS, Technique.SM2: KANZOW}


class _Pieces:
    """Shared expressions of one reduction."""

    def __init__(self, upper: UpperLevelModel, bundle: LowerLevelBundle, dual: DualProgram,
                 surface: Optional[PriceSurface] = None):
        self.upper = upper
        self.bundle = bundle
        self.dual = dual
        self.surface = surface
        bus = upper.storage.bus
        T = upper.horizon
        self.lam_p = [LinExpr.var(balance_dual(bundle.balance_p[(t, bus)]), -1.0) for t in range(T)]
        self.lam_q = ([LinExpr.var(balance_dual(bundle.balance_q[(t, bus)]), -1.0) for t in range(T)]
                      if upper.reactive else [])
        self.omega_p = bundle.program.primal_objective()
        self.omega_d = dual.objective
        self.profit = QuadExpr()
        for t in range(T):
            self.profit.accumulate(LinExpr.var(p_es(t)) * self.lam_p[t])
            if upper.reactive:
                self.profit.accumulate(LinExpr.var(q_es(t)) * self.lam_q[t])
        # dual objective with the interaction terms removed: omega_d = d0 - profit
        self.d0 = self.omega_d + self.profit

    def convexified(self) -> QuadExpr:
        return self.profit + self.omega_d - self.omega_p


def emit_primal(problem: ReducedProblem, bundle: LowerLevelBundle, smooth: bool = False) -> None:
    """Lower-level variables and rows with the storage injections left as symbols."""
    f = bundle.program.freeze()
    for name in f.var_names:
        problem.add_variable(name, tag=PRIMAL)
    for row, expr in zip(f.eq_names, f.eq_exprs):
        problem.add_row(expr, "==", 0.0, f"primal[{row}]", PRIMAL)
    if smooth:
        return
    for row, exprs in zip(f.cone_names, f.cone_exprs):
        if len(exprs) == 1:
            problem.add_row(exprs[0], ">=", 0.0, f"primal[{row}]", PRIMAL)
        else:
            problem.add_cone(exprs, f"primal[{row}]", PRIMAL)


def _emit_dual(problem: ReducedProblem, dual: DualProgram, smooth: bool) -> None:
    for name in dual.nu_names:
        problem.add_variable(name, tag=DUAL)
    for name in dual.xq_names.values():
        problem.add_variable(name, tag=DUAL)
    for row, names in dual.z_blocks:
        scalar = len(names) == 1
        for name in names:
            problem.add_variable(name, lb=0.0 if scalar and not smooth else None, tag=DUAL)
        if not scalar and not smooth:
            problem.add_cone([LinExpr.var(n) for n in names], f"dual[{row}]", DUAL)
    for var, row in dual.stationarity.items():
        problem.add_row(row, "==", 0.0, f"stat[{var}]", DUAL)


def _emit_strengthening(problem: ReducedProblem, dual: DualProgram, spec: TechniqueSpec) -> None:
    if not dual.xq_names:
        if spec.kind == Technique.PD_S:
            raise TechniqueError("stationarity strengthening inapplicable: no generator has a quadratic cost")
        logger.debug(f"{spec.label()}: no quadratic generators, stationarity strengthening skipped")
        return
    for var in dual.xq_names:
        problem.add_row(dual.strengthened_stationarity(var), "==", 0.0, f"kkt[{var}]", STATIONARITY)


def _bilinear_substitutes(problem: ReducedProblem, pieces: _Pieces) -> LinExpr:
    """MC auxiliaries w ~ p_es * lam with McCormick envelopes over the price box."""
    upper, surface = pieces.upper, pieces.surface
    bus, rating = upper.storage.bus, upper.storage.rating
    j = surface.column(bus)
    total = LinExpr()
    channels = [("p", p_es, pieces.lam_p, surface.lam_p_lo, surface.lam_p_hi)]
    if upper.reactive:
        channels.append(("q", q_es, pieces.lam_q, surface.lam_q_lo, surface.lam_q_hi))
    for tag, inj_name, lams, lo, hi in channels:
        for t in range(upper.horizon):
            w = problem.add_variable(f"w_{tag}[{t}]")
            p, lam = LinExpr.var(inj_name(t)), lams[t]
            lam_lo, lam_hi = float(lo[t, j]), float(hi[t, j])
            problem.add_row(w + rating * lam - lam_lo * p, ">=", rating * lam_lo, f"mc_under1_{tag}[{t}]", TECHNIQUE)
            problem.add_row(w - rating * lam - lam_hi * p, ">=", -rating * lam_hi, f"mc_under2_{tag}[{t}]", TECHNIQUE)
            problem.add_row(w - rating * lam - lam_lo * p, "<=", -rating * lam_lo, f"mc_over1_{tag}[{t}]", TECHNIQUE)
            problem.add_row(w + rating * lam - lam_hi * p, "<=", rating * lam_hi, f"mc_over2_{tag}[{t}]", TECHNIQUE)
            total.accumulate(w)
    return total


def _exact_product(problem: ReducedProblem, w: LinExpr, x: LinExpr, lam: LinExpr, lo: float, hi: float,
                   name: str) -> None:
    """w = x * lam for binary x and lam in [lo, hi]."""
    problem.add_row(w - lo * x, ">=", 0.0, f"{name}.lo", TECHNIQUE)
    problem.add_row(w - hi * x, "<=", 0.0, f"{name}.hi", TECHNIQUE)
    problem.add_row(w - lam - hi * x, ">=", -hi, f"{name}.lam_lo", TECHNIQUE)
    problem.add_row(w - lam - lo * x, "<=", -lo, f"{name}.lam_hi", TECHNIQUE)


def _discretized_interaction(problem: ReducedProblem, pieces: _Pieces, spec: TechniqueSpec) -> LinExpr:
    """Binary or unary expansion of the (dis)charge magnitude; returns the profit substitute."""
    upper, surface = pieces.upper, pieces.surface
    bus, rating = upper.storage.bus, upper.storage.rating
    j = surface.column(bus)
    unary = spec.kind in (Technique.UE_SD, Technique.UE_PF)
    steps = spec.steps
    if unary:
        weights = list(range(1, steps + 1))
        levels = steps
        prefix = "ue"
    else:
        nbits = max(1, math.ceil(math.log2(steps)))
        weights = [2 ** (b - 1) for b in range(1, nbits + 1)]
        levels = 2 ** nbits - 1
        prefix = "be"
    channels = [("p", p_ch, p_dis, x_p, pieces.lam_p, surface.lam_p_lo, surface.lam_p_hi)]
    if upper.reactive:
        channels.append(("q", q_ch, q_dis, x_q, pieces.lam_q, surface.lam_q_lo, surface.lam_q_hi))
    substitute = LinExpr()
    for tag, ch_name, dis_name, dir_name, lams, lo_arr, hi_arr in channels:
        for t in range(upper.horizon):
            lam, lo, hi = lams[t], float(lo_arr[t, j]), float(hi_arr[t, j])
            ch, dis, direction = LinExpr.var(ch_name(t)), LinExpr.var(dis_name(t)), LinExpr.var(dir_name(t))
            y = problem.add_variable(f"y_{tag}[{t}]", 0.0, float(levels))
            code, weighted, digits = LinExpr(), LinExpr(), []
            for k, weight in enumerate(weights, start=1):
                xb = problem.add_variable(f"x_{tag}_{prefix}[{t},{k}]", 0.0, 1.0, integral=True)
                wb = problem.add_variable(f"w_{tag}_{prefix}[{t},{k}]")
                _exact_product(problem, wb, xb, lam, lo, hi, f"{prefix}_mc_{tag}[{t},{k}]")
                code.accumulate(xb, weight)
                weighted.accumulate(wb, weight)
                digits.append(xb)
            if unary:
                problem.add_row(LinExpr.total(digits), "<=", 1.0, f"ue_one_{tag}[{t}]", TECHNIQUE)
            problem.add_row(y - code, "==", 0.0, f"{prefix}_code_{tag}[{t}]", TECHNIQUE)
            problem.add_row((ch + dis) / rating - y / levels, "==", 0.0, f"{prefix}_map_{tag}[{t}]", TECHNIQUE)
            w_ch = problem.add_variable(f"w_{tag}_ch[{t}]")
            w_dis = problem.add_variable(f"w_{tag}_dis[{t}]")
            problem.add_row((w_ch + w_dis) / rating - weighted / levels, "==", 0.0,
                            f"{prefix}_agg_{tag}[{t}]", TECHNIQUE)
            problem.add_row(w_ch - lo * rating * direction, ">=", 0.0, f"{prefix}_env_ch_lo_{tag}[{t}]", TECHNIQUE)
            problem.add_row(w_ch - hi * rating * direction, "<=", 0.0, f"{prefix}_env_ch_hi_{tag}[{t}]", TECHNIQUE)
            problem.add_row(w_dis + lo * rating * direction, ">=", lo * rating,
                            f"{prefix}_env_dis_lo_{tag}[{t}]", TECHNIQUE)
            problem.add_row(w_dis + hi * rating * direction, "<=", hi * rating,
                            f"{prefix}_env_dis_hi_{tag}[{t}]", TECHNIQUE)
            substitute.accumulate(w_dis)
            substitute.accumulate(w_ch, -1.0)
    return substitute


def reduce(upper: UpperLevelModel, bundle: LowerLevelBundle, dual: DualProgram, pairing: PairingMap,
           spec: TechniqueSpec, surface: Optional[PriceSurface] = None) -> ReducedProblem:
    """Build the single-level program of `spec`."""
    if dual.primal.source is not bundle.program:
        raise ProgramBuildError("Dual was not derived from this lower-level program")
    kind = spec.kind
    discrete = kind in (Technique.BE_SD, Technique.BE_PF, Technique.UE_SD, Technique.UE_PF)
    if (discrete or kind == Technique.MC) and (surface is None or not surface.has_bounds()):
        raise TechniqueError(f"{kind.value} needs price bounds")
    if upper.reactive != bool(bundle.injection_q):
        raise ProgramBuildError("Upper-level reactive bids do not match the lower-level injection slots")
    if discrete and not upper.binaries:
        upper = UpperLevelModel(upper.storage, upper.horizon, upper.reactive, binaries=True)
    smooth = kind in SMOOTHING_KIND

    problem = ReducedProblem(spec.label())
    pieces = _Pieces(upper, bundle, dual, surface)
    upper.emit(problem)
    emit_primal(problem, bundle, smooth)
    _emit_dual(problem, dual, smooth)
    if kind in NEEDS_STATIONARITY:
        _emit_strengthening(problem, dual, spec)

    objective = pieces.convexified()
    gap = pieces.omega_p - pieces.omega_d
    if kind == Technique.SD:
        problem.add_row(gap, "==", 0.0, "strong_duality", TECHNIQUE)
    elif kind == Technique.SD_R:
        problem.add_row(gap, "<=", spec.eps, "strong_duality", TECHNIQUE)
    elif kind == Technique.MC:
        w = _bilinear_substitutes(problem, pieces)
        problem.add_row(pieces.omega_p - pieces.d0 + w, "<=", 0.0, "strong_duality", TECHNIQUE)
    elif kind in (Technique.CS, Technique.CS_R):
        for pair in pairing:
            problem.add_row(pair.inner_product(), "==" if kind == Technique.CS else "<=",
                            0.0 if kind == Technique.CS else spec.eps, f"cs[{pair.name}]", TECHNIQUE)
    elif kind in (Technique.CS_A, Technique.CS_AR):
        total = QuadExpr()
        for pair in pairing:
            total.accumulate(pair.inner_product())
        if kind == Technique.CS_A:
            problem.add_row(total, "==", 0.0, "cs_aggregate", TECHNIQUE)
        else:
            problem.add_row(total, "<=", len(pairing) * spec.eps, "cs_aggregate", TECHNIQUE)
    elif kind == Technique.PF_SD:
        objective = pieces.profit + (1.0 + spec.pi) * (pieces.omega_d - pieces.omega_p)
    elif kind == Technique.PF_CS:
        total = QuadExpr()
        for pair in pairing:
            total.accumulate(pair.inner_product())
        objective = pieces.convexified() - spec.pi * total
    elif discrete:
        substitute = _discretized_interaction(problem, pieces, spec)
        if kind in (Technique.BE_SD, Technique.UE_SD):
            problem.add_row(pieces.omega_p - pieces.d0 + substitute, "<=", 0.0, "strong_duality", TECHNIQUE)
        else:
            objective = (1.0 + spec.pi) * (pieces.d0 - pieces.omega_p) - spec.pi * substitute
    elif smooth:
        for pair in pairing:
            problem.add_smoothed(pair.x, tuple(LinExpr.var(n) for n in pair.y), spec.eps,
                                 SMOOTHING_KIND[kind], f"sm[{pair.name}]")
    problem.set_objective(objective)
    problem.validate()
    logger.info(
        f"Reduced {spec.label()}: {len(problem.variables)} vars, {len(problem.rows)} rows, "
        f"{len(problem.cones)} cones, {len(problem.smoothed)} smoothed pairs"
    )
    return problem


def profit_of(point: Mapping[str, float], prices: Union[PriceSurface, Mapping[str, float]], bus: int,
              bundle: LowerLevelBundle = None) -> float:
    """sum_t p_es[t] * lam1[t, bus] + q_es[t] * lam2[t, bus]."""
    total, t = 0.0, 0
    while p_es(t) in point:
        if isinstance(prices, PriceSurface):
            lam_p = prices.active(bus)[t]
            lam_q = prices.reactive(bus)[t]
        else:
            lam_p = -prices[balance_dual(bundle.balance_p[(t, bus)])]
            row_q = bundle.balance_q.get((t, bus))
            lam_q = -prices[balance_dual(row_q)] if row_q else 0.0
        total += point[p_es(t)] * lam_p + point.get(q_es(t), 0.0) * lam_q
        t += 1
    return total


def gap_expression(bundle: LowerLevelBundle, dual: DualProgram) -> QuadExpr:
    return bundle.program.primal_objective() - dual.objective


def warm_start(problem: ReducedProblem, lower_point: Mapping[str, float], duals: Mapping[str, float],
               upper_point: Mapping[str, float], previous: Mapping[str, float] = None) -> Dict[str, float]:
    """Start point from a lower-level solve; auxiliaries default to zero."""
    start: Dict[str, float] = {}
    for name, var in problem.variables.items():
        if previous is not None and name in previous:
            value = previous[name]
        elif name in upper_point:
            value = upper_point[name]
        elif name in lower_point:
            value = lower_point[name]
        elif name in duals:
            value = duals[name]
        elif name.startswith("xq[") and name[3:-1] in lower_point:
            value = lower_point[name[3:-1]]
        else:
            value = 0.0
        if var.lb is not None:
            value = max(value, var.lb)
        if var.ub is not None:
            value = min(value, var.ub)
        start[name] = value
    return start
