"""Lower-level market clearing: DC and Jabr SOCP builders, prices and screening."""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, NamedTuple, Optional, Set, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .case_io import DC, JABR, BilevelInstance, Network
from .config import settings
from .conic import ConicProgram
from .exceptions import MissingValueError, NetworkDisconnectedError
from .expr import LinExpr

logger = logging.getLogger(__name__)

# relative slack when checking thermal limits of verified flows
LIMIT_TOL = 1e-6


def p_es(t: int) -> str:
    return f"p_es[{t}]"


def q_es(t: int) -> str:
    return f"q_es[{t}]"


@dataclass
class FlowRef:
    """Names of the flow variables of one branch in one hour."""
    branch: int
    rate: Optional[float]
    p_fr: str
    p_to: Optional[str] = None
    q_fr: Optional[str] = None
    q_to: Optional[str] = None


@dataclass
class LowerLevelBundle:
    instance: BilevelInstance
    program: ConicProgram
    balance_p: Dict[Tuple[int, int], str]
    balance_q: Dict[Tuple[int, int], str]
    injection_p: List[str]
    injection_q: List[str]
    flows: Dict[Tuple[int, int], FlowRef] = field(default_factory=dict)

    @property
    def model(self) -> str:
        return self.instance.model

    @property
    def horizon(self) -> int:
        return self.instance.horizon

    def expenses(self):
        return self.program.primal_objective()


@dataclass
class PriceSurface:
    bus_ids: List[int]
    lam_p: np.ndarray
    lam_q: Optional[np.ndarray] = None
    lam_p_lo: Optional[np.ndarray] = None
    lam_p_hi: Optional[np.ndarray] = None
    lam_q_lo: Optional[np.ndarray] = None
    lam_q_hi: Optional[np.ndarray] = None

    def column(self, bus: int) -> int:
        return self.bus_ids.index(bus)

    def active(self, bus: int) -> np.ndarray:
        return self.lam_p[:, self.column(bus)]

    def reactive(self, bus: int) -> np.ndarray:
        if self.lam_q is None:
            return np.zeros(self.lam_p.shape[0])
        return self.lam_q[:, self.column(bus)]

    def has_bounds(self) -> bool:
        return self.lam_p_lo is not None

    def within_bounds(self, other: "PriceSurface", bus: int, tol: float = 1e-6) -> bool:
        """True if the prices of `other` at `bus` lie inside this surface's envelope."""
        j = self.column(bus)
        lam = other.active(bus)
        if np.any(lam < self.lam_p_lo[:, j] - tol) or np.any(lam > self.lam_p_hi[:, j] + tol):
            return False
        if self.lam_q_lo is not None and other.lam_q is not None:
            lq = other.reactive(bus)
            if np.any(lq < self.lam_q_lo[:, j] - tol) or np.any(lq > self.lam_q_hi[:, j] + tol):
                return False
        return True


def check_connected(net: Network) -> None:
    index = net.bus_index
    rows, cols = [], []
    for _, br in net.active_branches():
        rows.append(index[br.from_bus])
        cols.append(index[br.to_bus])
    n = len(index)
    graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    count, labels = connected_components(graph, directed=False)
    if count > 1:
        islands = [[net.buses[i].id for i in np.flatnonzero(labels == c)] for c in range(count)]
        raise NetworkDisconnectedError(f"Network '{net.name}' splits into {count} islands: {islands}")


def _generation(prog: ConicProgram, instance: BilevelInstance, t: int, reactive: bool):
    net = instance.network
    pg: Dict[int, LinExpr] = {}
    qg: Dict[int, LinExpr] = {}
    cost = LinExpr()
    quad: Dict[str, float] = {}
    for k, gen in net.active_generators():
        name = f"pg[{t},{k}]"
        pg[k] = prog.add_variable(name, gen.pmin, gen.pmax)
        if reactive:
            qg[k] = prog.add_variable(f"qg[{t},{k}]", gen.qmin, gen.qmax)
        cost.add_term(name, gen.cost_lin)
        cost.const += gen.cost_const
        if gen.cost_quad:
            quad[name] = gen.cost_quad
    return pg, qg, cost, quad


def _loads_at(instance: BilevelInstance, t: int) -> Tuple[Dict[int, float], Dict[int, float]]:
    pd: Dict[int, float] = {}
    qd: Dict[int, float] = {}
    for j, load in enumerate(instance.network.loads):
        pd[load.bus] = pd.get(load.bus, 0.0) + float(instance.load_p[t, j])
        qd[load.bus] = qd.get(load.bus, 0.0) + float(instance.load_q[t, j])
    return pd, qd


def build_dc(instance: BilevelInstance) -> LowerLevelBundle:
    """Lossless DC market clearing with phase shifters and screened line limits."""
    net = instance.network
    check_connected(net)
    prog = ConicProgram(f"dc[{net.name}]")
    limited = set(instance.limited_branches())
    ref = net.reference_bus
    balance_p: Dict[Tuple[int, int], str] = {}
    injection_p, flows = [], {}
    objective = LinExpr()
    quadratic: Dict[str, float] = {}
    for t in range(instance.horizon):
        inj = prog.add_parameter(p_es(t))
        injection_p.append(p_es(t))
        va = {b.id: prog.add_variable(f"va[{t},{b.id}]", *((0.0, 0.0) if b.id == ref else (None, None)))
              for b in net.buses}
        pg, _, cost, quad = _generation(prog, instance, t, reactive=False)
        objective.accumulate(cost)
        quadratic.update(quad)
        out: Dict[int, LinExpr] = {b.id: LinExpr() for b in net.buses}
        for e, br in net.active_branches():
            susceptance = 1.0 / (br.x * br.tap)
            f = prog.add_variable(f"f[{t},{e}]")
            prog.add_linear(f - susceptance * (va[br.from_bus] - va[br.to_bus]), "==",
                            -susceptance * br.shift, name=f"flow[{t},{e}]")
            out[br.from_bus].accumulate(f)
            out[br.to_bus].accumulate(f, -1.0)
            flows[(t, e)] = FlowRef(e, br.rate, f"f[{t},{e}]")
            if e in limited:
                prog.add_linear(f, "<=", br.rate, name=f"limit_up[{t},{e}]")
                prog.add_linear(f, ">=", -br.rate, name=f"limit_dn[{t},{e}]")
        pd, _ = _loads_at(instance, t)
        gens_at: Dict[int, LinExpr] = {b.id: LinExpr() for b in net.buses}
        for k, gen in net.active_generators():
            gens_at[gen.bus].accumulate(pg[k])
        for b in net.buses:
            expr = gens_at[b.id] - out[b.id]
            if b.id == instance.storage.bus:
                expr = expr + inj
            row = f"bal_p[{t},{b.id}]"
            prog.add_linear(expr, "==", pd.get(b.id, 0.0) + b.gs, name=row)
            balance_p[(t, b.id)] = row
    prog.set_quadratic_objective(objective, quadratic)
    logger.debug(f"Built DC market over {instance.horizon} hours with {len(limited)} limited branches")
    return LowerLevelBundle(instance, prog, balance_p, {}, injection_p, [], flows)


def build_jabr(instance: BilevelInstance) -> LowerLevelBundle:
    """Jabr SOCP relaxation in squared magnitudes w and voltage products (wr, wi)."""
    net = instance.network
    check_connected(net)
    prog = ConicProgram(f"jabr[{net.name}]")
    limited = set(instance.limited_branches())
    reactive_bids = instance.reactive_bids
    balance_p: Dict[Tuple[int, int], str] = {}
    balance_q: Dict[Tuple[int, int], str] = {}
    injection_p, injection_q, flows = [], [], {}
    objective = LinExpr()
    quadratic: Dict[str, float] = {}

    pairs: Dict[Tuple[int, int], str] = {}
    for _, br in net.active_branches():
        key = (min(br.from_bus, br.to_bus), max(br.from_bus, br.to_bus))
        pairs.setdefault(key, f"{key[0]}-{key[1]}")

    for t in range(instance.horizon):
        inj_p = prog.add_parameter(p_es(t))
        injection_p.append(p_es(t))
        inj_q = LinExpr()
        if reactive_bids:
            inj_q = prog.add_parameter(q_es(t))
            injection_q.append(q_es(t))
        w = {b.id: prog.add_variable(f"w[{t},{b.id}]", b.vmin ** 2, b.vmax ** 2) for b in net.buses}
        wr, wi = {}, {}
        for (i, j), tag in pairs.items():
            wr[(i, j)] = prog.add_variable(f"wr[{t},{tag}]")
            wi[(i, j)] = prog.add_variable(f"wi[{t},{tag}]")
            prog.add_soc([w[i] + w[j], 2.0 * wr[(i, j)], 2.0 * wi[(i, j)], w[i] - w[j]],
                         name=f"jabr[{t},{tag}]")
        pg, qg, cost, quad = _generation(prog, instance, t, reactive=True)
        objective.accumulate(cost)
        quadratic.update(quad)

        out_p: Dict[int, LinExpr] = {b.id: LinExpr() for b in net.buses}
        out_q: Dict[int, LinExpr] = {b.id: LinExpr() for b in net.buses}
        for e, br in net.active_branches():
            f, to = br.from_bus, br.to_bus
            if f <= to:
                c_re, c_im = wr[(f, to)], wi[(f, to)]
            else:
                c_re, c_im = wr[(to, f)], -wi[(to, f)]
            g, b = br.g_series, br.b_series
            tr, ti = br.tap * np.cos(br.shift), br.tap * np.sin(br.shift)
            tm = br.tap ** 2
            p_fr = prog.add_variable(f"pf[{t},{e}]")
            q_fr = prog.add_variable(f"qf[{t},{e}]")
            p_to = prog.add_variable(f"pt[{t},{e}]")
            q_to = prog.add_variable(f"qt[{t},{e}]")
            prog.add_linear(
                p_fr - (g / tm * w[f] + (-g * tr + b * ti) / tm * c_re + (-b * tr - g * ti) / tm * c_im),
                "==", 0.0, name=f"ohm_pf[{t},{e}]")
            prog.add_linear(
                q_fr - (-(b + br.b_fr) / tm * w[f] - (-b * tr - g * ti) / tm * c_re + (-g * tr + b * ti) / tm * c_im),
                "==", 0.0, name=f"ohm_qf[{t},{e}]")
            prog.add_linear(
                p_to - (g * w[to] + (-g * tr - b * ti) / tm * c_re - (-b * tr + g * ti) / tm * c_im),
                "==", 0.0, name=f"ohm_pt[{t},{e}]")
            prog.add_linear(
                q_to - (-(b + br.b_to) * w[to] - (-b * tr + g * ti) / tm * c_re - (-g * tr - b * ti) / tm * c_im),
                "==", 0.0, name=f"ohm_qt[{t},{e}]")
            out_p[f].accumulate(p_fr)
            out_q[f].accumulate(q_fr)
            out_p[to].accumulate(p_to)
            out_q[to].accumulate(q_to)
            flows[(t, e)] = FlowRef(e, br.rate, f"pf[{t},{e}]", f"pt[{t},{e}]", f"qf[{t},{e}]", f"qt[{t},{e}]")
            if e in limited:
                prog.add_soc([LinExpr.constant(br.rate), p_fr, q_fr], name=f"thermal_fr[{t},{e}]")
                prog.add_soc([LinExpr.constant(br.rate), p_to, q_to], name=f"thermal_to[{t},{e}]")

        pd, qd = _loads_at(instance, t)
        gp: Dict[int, LinExpr] = {b.id: LinExpr() for b in net.buses}
        gq: Dict[int, LinExpr] = {b.id: LinExpr() for b in net.buses}
        for k, gen in net.active_generators():
            gp[gen.bus].accumulate(pg[k])
            gq[gen.bus].accumulate(qg[k])
        for bus in net.buses:
            expr_p = gp[bus.id] - out_p[bus.id] - bus.gs * w[bus.id]
            expr_q = gq[bus.id] - out_q[bus.id] + bus.bs * w[bus.id]
            if bus.id == instance.storage.bus:
                expr_p = expr_p + inj_p
                expr_q = expr_q + inj_q
            row_p, row_q = f"bal_p[{t},{bus.id}]", f"bal_q[{t},{bus.id}]"
            prog.add_linear(expr_p, "==", pd.get(bus.id, 0.0), name=row_p)
            prog.add_linear(expr_q, "==", qd.get(bus.id, 0.0), name=row_q)
            balance_p[(t, bus.id)] = row_p
            balance_q[(t, bus.id)] = row_q
    prog.set_quadratic_objective(objective, quadratic)
    logger.debug(f"Built Jabr market over {instance.horizon} hours with {len(limited)} limited branches")
    return LowerLevelBundle(instance, prog, balance_p, balance_q, injection_p, injection_q, flows)


def build_lower_level(instance: BilevelInstance) -> LowerLevelBundle:
    if instance.model == DC:
        return build_dc(instance)
    if instance.model == JABR:
        return build_jabr(instance)
    raise ValueError(f"Unknown lower-level model '{instance.model}'")


def balance_dual(row: str) -> str:
    return f"nu[{row}]"


def extract_prices(bundle: LowerLevelBundle, duals: Mapping[str, float]) -> PriceSurface:
    """Nodal prices: minus the balance-row multipliers, so extra load at (t, i) costs lam[t, i]."""
    net = bundle.instance.network
    T, ids = bundle.horizon, net.bus_ids
    lam_p = np.zeros((T, len(ids)))
    lam_q = np.zeros((T, len(ids))) if bundle.balance_q else None
    try:
        for (t, bus), row in bundle.balance_p.items():
            lam_p[t, ids.index(bus)] = -duals[balance_dual(row)]
        for (t, bus), row in bundle.balance_q.items():
            lam_q[t, ids.index(bus)] = -duals[balance_dual(row)]
    except KeyError as e:
        raise MissingValueError(f"No dual value for balance row {e.args[0]}")
    return PriceSurface(list(ids), lam_p, lam_q)


def estimate_price_bounds(surface: PriceSurface, active_width: float = None,
                          reactive_width: float = None) -> PriceSurface:
    """Envelope lam +- width; energy-price lower bounds are clamped at zero."""
    active_width = settings.ACTIVE_PRICE_WIDTH if active_width is None else active_width
    reactive_width = settings.REACTIVE_PRICE_WIDTH if reactive_width is None else reactive_width
    if active_width < 0 or reactive_width < 0:
        raise ValueError("Price bound widths must be nonnegative")
    lam = surface.lam_p
    lo = np.minimum(np.maximum(0.0, lam - active_width), lam)
    out = replace(surface, lam_p_lo=lo, lam_p_hi=lam + active_width)
    if surface.lam_q is not None:
        out = replace(out, lam_q_lo=surface.lam_q - reactive_width, lam_q_hi=surface.lam_q + reactive_width)
    return out


def branch_loading(bundle: LowerLevelBundle, point: Mapping[str, float]) -> Dict[Tuple[int, int], float]:
    """Apparent (or DC) flow over rating for every rated branch and hour."""
    loading = {}
    for key, ref in bundle.flows.items():
        if ref.rate is None:
            continue
        if ref.q_fr is None:
            flow = abs(point[ref.p_fr])
        else:
            flow = max(np.hypot(point[ref.p_fr], point[ref.q_fr]), np.hypot(point[ref.p_to], point[ref.q_to]))
        loading[key] = flow / ref.rate
    return loading


def screen_branches(bundle: LowerLevelBundle, point: Mapping[str, float], threshold: float) -> Set[int]:
    return {e for (_, e), ratio in branch_loading(bundle, point).items() if ratio >= threshold}


class Overload(NamedTuple):
    """A rated branch loaded above its limit in one period."""
    t: int
    branch: int
    loading: float

    def describe(self) -> str:
        return f"t={self.t} branch={self.branch} loading={self.loading:.6f}"


def thermal_violations(bundle: LowerLevelBundle, point: Mapping[str, float]) -> List[Overload]:
    return [Overload(t, e, ratio) for (t, e), ratio in sorted(branch_loading(bundle, point).items())
            if ratio > 1.0 + LIMIT_TOL]
