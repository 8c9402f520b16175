"""Single-level programs produced by the reducer."""

import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .conic import ConicProgram
from .exceptions import ProgramBuildError
from .expr import LinExpr, QuadExpr
from .smoothing import residual

logger = logging.getLogger(__name__)

UPPER = "upper"
PRIMAL = "primal"
DUAL = "dual"
STATIONARITY = "stationarity"
TECHNIQUE = "technique"
TAGS = (UPPER, PRIMAL, DUAL, STATIONARITY, TECHNIQUE)


@dataclass(frozen=True)
class RegistryVar:
    name: str
    lb: Optional[float] = None
    ub: Optional[float] = None
    tag: str = TECHNIQUE
    integral: bool = False


@dataclass(frozen=True)
class Row:
    name: str
    expr: QuadExpr
    sense: str
    rhs: float
    tag: str


@dataclass(frozen=True)
class Cone:
    name: str
    exprs: Tuple[LinExpr, ...]
    tag: str


@dataclass(frozen=True)
class SmoothedPair:
    """residual(kind, x, y, eps) == 0 for affine cone vectors x and y."""
    name: str
    x: Tuple[LinExpr, ...]
    y: Tuple[LinExpr, ...]
    eps: float
    kind: str
    tag: str


class ReducedProblem:
    """Maximize a quadratic objective over quadratic rows, SOC rows and smoothed pairs."""

    def __init__(self, name: str):
        self.name = name
        self.variables: Dict[str, RegistryVar] = {}
        self.rows: List[Row] = []
        self.cones: List[Cone] = []
        self.smoothed: List[SmoothedPair] = []
        self.objective = QuadExpr()
        self._names: set = set()

    # builder

    def _unique(self, name: str) -> str:
        if name in self._names:
            raise ProgramBuildError(f"Duplicate constraint '{name}' in {self.name}")
        self._names.add(name)
        return name

    def add_variable(self, name: str, lb: float = None, ub: float = None, tag: str = TECHNIQUE,
                     integral: bool = False) -> LinExpr:
        if name in self.variables:
            raise ProgramBuildError(f"Duplicate variable '{name}' in {self.name}")
        if tag not in TAGS:
            raise ProgramBuildError(f"Unknown block tag '{tag}'")
        self.variables[name] = RegistryVar(name, lb, ub, tag, integral)
        return LinExpr.var(name)

    def add_row(self, expr, sense: str, rhs: float, name: str, tag: str) -> None:
        if sense not in ("==", "<=", ">="):
            raise ProgramBuildError(f"Unknown sense '{sense}'")
        self.rows.append(Row(self._unique(name), QuadExpr.lift(expr).copy(), sense, float(rhs), tag))

    def add_cone(self, exprs: Sequence[LinExpr], name: str, tag: str) -> None:
        self.cones.append(Cone(self._unique(name), tuple(exprs), tag))

    def add_smoothed(self, x: Sequence[LinExpr], y: Sequence[LinExpr], eps: float, kind: str,
                     name: str, tag: str = TECHNIQUE) -> None:
        if len(x) != len(y):
            raise ProgramBuildError(f"Smoothed pair '{name}' has mismatched dimensions")
        self.smoothed.append(SmoothedPair(self._unique(name), tuple(x), tuple(y), eps, kind, tag))

    def set_objective(self, expr) -> None:
        self.objective = QuadExpr.lift(expr).copy()

    # inspection

    def block(self, tag: str) -> List[str]:
        names = [r.name for r in self.rows if r.tag == tag]
        names += [c.name for c in self.cones if c.tag == tag]
        names += [s.name for s in self.smoothed if s.tag == tag]
        return names

    def integral_names(self) -> List[str]:
        return [v.name for v in self.variables.values() if v.integral]

    def referenced(self) -> set:
        used = set(self.objective.symbols())
        for r in self.rows:
            used.update(r.expr.symbols())
        for c in self.cones:
            for e in c.exprs:
                used.update(e.symbols())
        for s in self.smoothed:
            for e in s.x + s.y:
                used.update(e.symbols())
        return used

    def validate(self) -> "ReducedProblem":
        """Check registry closure and drop variables nothing refers to."""
        used = self.referenced()
        unknown = sorted(used - set(self.variables))
        if unknown:
            raise ProgramBuildError(f"Unregistered symbols in {self.name}: {unknown[:5]}")
        unused = [k for k in self.variables if k not in used]
        for k in unused:
            del self.variables[k]
        if unused:
            logger.debug(f"Pruned {len(unused)} unreferenced variables from {self.name}")
        return self

    def with_bounds(self, overrides: Mapping[str, Tuple[Optional[float], Optional[float]]]) -> "ReducedProblem":
        out = ReducedProblem(self.name)
        out.variables = dict(self.variables)
        for k, (lb, ub) in overrides.items():
            out.variables[k] = replace(out.variables[k], lb=lb, ub=ub)
        out.rows, out.cones, out.smoothed = self.rows, self.cones, self.smoothed
        out.objective = self.objective
        out._names = self._names
        return out

    def relaxed(self) -> "ReducedProblem":
        """Copy with integrality marks dropped."""
        out = self.with_bounds({})
        out.variables = {k: replace(v, integral=False) for k, v in out.variables.items()}
        return out

    def is_convex(self) -> bool:
        if self.smoothed:
            return False
        if not self.objective.diagonal_only() or any(c > 0 for c in self.objective.quad.values()):
            return False
        for r in self.rows:
            if r.expr.is_linear():
                continue
            if r.sense == "==" or not r.expr.diagonal_only():
                return False
            sign = 1.0 if r.sense == "<=" else -1.0
            if any(sign * c < 0 for c in r.expr.quad.values()):
                return False
        return True

    # evaluation

    def evaluate(self, point: Mapping[str, float]) -> Tuple[float, float]:
        """Objective value and max absolute violation at `point`."""
        worst = 0.0
        for v in self.variables.values():
            x = point[v.name]
            if v.lb is not None:
                worst = max(worst, v.lb - x)
            if v.ub is not None:
                worst = max(worst, x - v.ub)
        for r in self.rows:
            val = r.expr.evaluate(point) - r.rhs
            if r.sense == "==":
                worst = max(worst, abs(val))
            elif r.sense == "<=":
                worst = max(worst, val)
            else:
                worst = max(worst, -val)
        for c in self.cones:
            vals = [e.evaluate(point) for e in c.exprs]
            worst = max(worst, float(np.linalg.norm(vals[1:])) - vals[0] if len(vals) > 1 else -vals[0])
        for s in self.smoothed:
            x = np.array([e.evaluate(point) for e in s.x])
            y = np.array([e.evaluate(point) for e in s.y])
            worst = max(worst, float(np.max(np.abs(residual(s.kind, x, y, s.eps)))))
        return self.objective.evaluate(point), worst

    # conic form

    def to_conic(self) -> ConicProgram:
        """Equivalent convex conic program (minimizing the negated objective)."""
        if not self.is_convex():
            raise ProgramBuildError(f"{self.name} is not convex; no conic form")
        prog = ConicProgram(f"conic({self.name})")
        for v in self.variables.values():
            prog.add_variable(v.name, v.lb, v.ub)
        for r in self.rows:
            lin = r.expr.lin
            if r.expr.is_linear():
                prog.add_linear(lin, r.sense, r.rhs, name=r.name)
                continue
            sign = 1.0 if r.sense == "<=" else -1.0
            epi = prog.add_variable(f"epi[{r.name}]", lb=0.0)
            # sum a_j v_j^2 <= epi  as  ||(2 sqrt(a_j) v_j, 1 - epi)|| <= 1 + epi
            tail = [2.0 * math.sqrt(sign * c) * LinExpr.var(a) for (a, _), c in sorted(r.expr.quad.items())]
            prog.add_soc([1.0 + epi] + tail + [1.0 - epi], name=f"epi_cone[{r.name}]")
            prog.add_linear(sign * lin + epi, "<=", sign * r.rhs, name=r.name)
        for c in self.cones:
            prog.add_soc(list(c.exprs), name=c.name)
        neg = -self.objective
        prog.set_quadratic_objective(neg.lin, {a: c for (a, _), c in neg.quad.items()})
        return prog
