"""Upper-level model of the strategic storage unit."""

from dataclasses import dataclass
from typing import Dict, List, Mapping

from .case_io import FIXED, StorageSpec
from .expr import LinExpr
from .opf import p_es, q_es
from .problem import UPPER, ReducedProblem


def soe(t: int) -> str:
    return f"soe[{t}]"


def p_ch(t: int) -> str:
    return f"p_ch[{t}]"


def p_dis(t: int) -> str:
    return f"p_dis[{t}]"


def q_ch(t: int) -> str:
    return f"q_ch[{t}]"


def q_dis(t: int) -> str:
    return f"q_dis[{t}]"


def x_p(t: int) -> str:
    return f"x_p[{t}]"


def x_q(t: int) -> str:
    return f"x_q[{t}]"


@dataclass(frozen=True)
class UpperLevelModel:
    """State-of-energy recursion, charge/discharge split and ratings.

    Injections are positive when the unit discharges (sells).
    """
    storage: StorageSpec
    horizon: int
    reactive: bool = True
    binaries: bool = False

    def emit(self, problem: ReducedProblem) -> None:
        s = self.storage
        rating = s.rating
        previous = LinExpr.constant(s.initial_soe * s.capacity)
        for t in range(self.horizon):
            e = problem.add_variable(soe(t), 0.0, s.capacity, UPPER)
            ch = problem.add_variable(p_ch(t), 0.0, rating, UPPER)
            dis = problem.add_variable(p_dis(t), 0.0, rating, UPPER)
            inj = problem.add_variable(p_es(t), -rating, rating, UPPER)
            problem.add_row(e - previous - s.eta_ch * ch + dis / s.eta_dis, "==", 0.0, f"soe_balance[{t}]", UPPER)
            problem.add_row(inj - dis + ch, "==", 0.0, f"p_split[{t}]", UPPER)
            if self.binaries:
                xp = problem.add_variable(x_p(t), 0.0, 1.0, UPPER, integral=True)
                problem.add_row(ch - rating * xp, "<=", 0.0, f"p_ch_on[{t}]", UPPER)
                problem.add_row(dis + rating * xp, "<=", rating, f"p_dis_on[{t}]", UPPER)
            if self.reactive:
                qc = problem.add_variable(q_ch(t), 0.0, rating, UPPER)
                qd = problem.add_variable(q_dis(t), 0.0, rating, UPPER)
                qinj = problem.add_variable(q_es(t), -rating, rating, UPPER)
                problem.add_row(qinj - qd + qc, "==", 0.0, f"q_split[{t}]", UPPER)
                if self.binaries:
                    xq = problem.add_variable(x_q(t), 0.0, 1.0, UPPER, integral=True)
                    problem.add_row(qc - rating * xq, "<=", 0.0, f"q_ch_on[{t}]", UPPER)
                    problem.add_row(qd + rating * xq, "<=", rating, f"q_dis_on[{t}]", UPPER)
                problem.add_cone([LinExpr.constant(rating), inj, qinj], f"rating[{t}]", UPPER)
            previous = e
        if s.terminal == FIXED:
            problem.add_row(previous, "==", s.initial_soe * s.capacity, "soe_terminal", UPPER)

    def point(self, p: List[float], q: List[float] = None) -> Dict[str, float]:
        """Upper-level values realizing the given injections with no simultaneous (dis)charge."""
        s = self.storage
        out: Dict[str, float] = {}
        level = s.initial_soe * s.capacity
        q = q if q is not None else [0.0] * self.horizon
        for t in range(self.horizon):
            ch, dis = max(-p[t], 0.0), max(p[t], 0.0)
            level = level + s.eta_ch * ch - dis / s.eta_dis
            out.update({soe(t): level, p_ch(t): ch, p_dis(t): dis, p_es(t): p[t]})
            if self.binaries:
                out[x_p(t)] = 1.0 if ch > 0 else 0.0
            if self.reactive:
                out.update({q_ch(t): max(-q[t], 0.0), q_dis(t): max(q[t], 0.0), q_es(t): q[t]})
                if self.binaries:
                    out[x_q(t)] = 1.0 if q[t] < 0 else 0.0
        return out

    def idle_point(self) -> Dict[str, float]:
        return self.point([0.0] * self.horizon)

    def bids(self, point: Mapping[str, float]):
        p = [point[p_es(t)] for t in range(self.horizon)]
        q = [point[q_es(t)] for t in range(self.horizon)] if self.reactive else []
        return p, q
