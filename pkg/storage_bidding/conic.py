"""Convex conic programs: builder, frozen standard form, mechanical dual."""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .exceptions import InfeasiblePointError, MissingValueError, ProgramBuildError
from .expr import LinExpr, QuadExpr, format_linear, format_quadratic

logger = logging.getLogger(__name__)

SENSES = ("==", "<=", ">=")


@dataclass(frozen=True)
class Variable:
    name: str
    lb: Optional[float] = None
    ub: Optional[float] = None


@dataclass(frozen=True)
class LinearRow:
    name: str
    expr: LinExpr
    sense: str
    rhs: float = 0.0


@dataclass(frozen=True)
class ConeRow:
    """Requires ||exprs[1:]|| <= exprs[0]."""
    name: str
    exprs: Tuple[LinExpr, ...]


@dataclass(frozen=True)
class ConePair:
    """Primal cone vector x (affine in primal symbols) and its dual block y."""
    name: str
    x: Tuple[LinExpr, ...]
    y: Tuple[str, ...]
    scalar: bool

    @property
    def dim(self) -> int:
        return len(self.x)

    def inner_product(self) -> QuadExpr:
        out = QuadExpr()
        for xe, yn in zip(self.x, self.y):
            out.accumulate(xe * LinExpr.var(yn))
        return out


@dataclass
class PairingMap:
    pairs: List[ConePair]

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def by_name(self, name: str) -> ConePair:
        for pair in self.pairs:
            if pair.name == name:
                return pair
        raise KeyError(name)


class ConicProgram:
    """Builder for min c'x + sum q_j x_j^2 + c0 over linear and SOC rows.

    Parameters are named constants that may appear in constraint rows only;
    the bilevel reducer later promotes them to upper-level variables.
    """

    def __init__(self, name: str = "program"):
        self.name = name
        self.variables: Dict[str, Variable] = {}
        self.parameters: Dict[str, float] = {}
        self.linear: List[LinearRow] = []
        self.cones: List[ConeRow] = []
        self.objective = LinExpr()
        self.quadratic: Dict[str, float] = {}
        self._row_names: set = set()
        self._frozen: Optional["FrozenProgram"] = None

    # builder surface

    def _check_open(self) -> None:
        if self._frozen is not None:
            raise ProgramBuildError(f"Program '{self.name}' is frozen")

    def _check_name(self, name: str) -> None:
        if name in self.variables or name in self.parameters:
            raise ProgramBuildError(f"Duplicate symbol '{name}'")

    def _check_expr(self, expr: LinExpr, allow_parameters: bool = True) -> None:
        for k in expr.symbols():
            if k in self.variables:
                continue
            if k in self.parameters and allow_parameters:
                continue
            raise ProgramBuildError(f"Unknown variable '{k}' in {self.name}")

    def _row_name(self, name: Optional[str], prefix: str) -> str:
        if name is None:
            name = f"{prefix}{len(self.linear) + len(self.cones)}"
        if name in self._row_names:
            raise ProgramBuildError(f"Duplicate row '{name}'")
        self._row_names.add(name)
        return name

    def add_variable(self, name: str, lb: float = None, ub: float = None) -> LinExpr:
        self._check_open()
        self._check_name(name)
        if lb is not None and ub is not None and lb > ub:
            raise ProgramBuildError(f"Empty bounds on '{name}': [{lb}, {ub}]")
        self.variables[name] = Variable(name, lb, ub)
        return LinExpr.var(name)

    def add_parameter(self, name: str, value: float = 0.0) -> LinExpr:
        self._check_open()
        self._check_name(name)
        self.parameters[name] = float(value)
        return LinExpr.var(name)

    def add_linear(self, expr: LinExpr, sense: str, rhs: float = 0.0, name: str = None) -> str:
        self._check_open()
        if sense not in SENSES:
            raise ProgramBuildError(f"Unknown sense '{sense}'")
        expr = LinExpr.constant(expr) if not isinstance(expr, LinExpr) else expr
        self._check_expr(expr)
        name = self._row_name(name, "r")
        self.linear.append(LinearRow(name, expr.copy(), sense, float(rhs)))
        return name

    def add_soc(self, exprs: Sequence[LinExpr], name: str = None) -> str:
        self._check_open()
        exprs = [e if isinstance(e, LinExpr) else LinExpr.constant(e) for e in exprs]
        if len(exprs) < 1:
            raise ProgramBuildError("Cone row needs at least one component")
        for e in exprs:
            self._check_expr(e)
        name = self._row_name(name, "k")
        self.cones.append(ConeRow(name, tuple(e.copy() for e in exprs)))
        return name

    def set_quadratic_objective(self, linear: LinExpr, quadratic: Mapping[str, float] = None) -> None:
        self._check_open()
        self._check_expr(linear, allow_parameters=False)
        quadratic = dict(quadratic or {})
        for k, c in quadratic.items():
            if k not in self.variables:
                raise ProgramBuildError(f"Unknown variable '{k}' in objective")
            if c < 0:
                raise ProgramBuildError(f"Negative quadratic coefficient on '{k}' (nonconvex)")
        self.objective = linear.copy()
        self.quadratic = {k: float(c) for k, c in quadratic.items() if c != 0}

    def primal_objective(self) -> QuadExpr:
        """Objective as an expression (the lower-level value Omega^p)."""
        out = QuadExpr(self.objective)
        for k, c in self.quadratic.items():
            out.add_quad(k, k, c)
        return out

    def freeze(self) -> "FrozenProgram":
        if self._frozen is None:
            self._frozen = FrozenProgram.build(self)
        return self._frozen


@dataclass
class FrozenProgram:
    """Standard form  min 1/2 x'Px + c'x + c0  s.t.  Ax = b(theta), Gx + s = h(theta), s in K."""

    name: str
    var_names: List[str]
    param_names: List[str]
    param_values: np.ndarray
    q: np.ndarray
    c: np.ndarray
    c0: float
    eq_names: List[str]
    A: sp.csr_matrix
    b0: np.ndarray
    B: sp.csr_matrix
    cone_names: List[str]
    cone_dims: List[int]
    lp_count: int
    G: sp.csr_matrix
    h0: np.ndarray
    H: sp.csr_matrix
    eq_exprs: List[LinExpr] = field(repr=False)
    cone_exprs: List[Tuple[LinExpr, ...]] = field(repr=False)
    source: ConicProgram = field(repr=False)

    @property
    def index(self) -> Dict[str, int]:
        return {k: i for i, k in enumerate(self.var_names)}

    @property
    def n(self) -> int:
        return len(self.var_names)

    def b(self, theta: np.ndarray = None) -> np.ndarray:
        theta = self.param_values if theta is None else theta
        return self.b0 + self.B @ theta if len(theta) else self.b0.copy()

    def h(self, theta: np.ndarray = None) -> np.ndarray:
        theta = self.param_values if theta is None else theta
        return self.h0 + self.H @ theta if len(theta) else self.h0.copy()

    def theta(self, overrides: Mapping[str, float] = None) -> np.ndarray:
        theta = self.param_values.copy()
        if overrides:
            for i, k in enumerate(self.param_names):
                if k in overrides:
                    theta[i] = overrides[k]
        return theta

    @classmethod
    def build(cls, prog: ConicProgram) -> "FrozenProgram":
        var_names = list(prog.variables)
        vidx = {k: i for i, k in enumerate(var_names)}
        param_names = list(prog.parameters)
        pidx = {k: i for i, k in enumerate(param_names)}
        n, k = len(var_names), len(param_names)

        eq_rows: List[Tuple[str, LinExpr]] = []
        lp_rows: List[Tuple[str, LinExpr]] = []
        soc_rows: List[Tuple[str, Tuple[LinExpr, ...]]] = []

        for v in prog.variables.values():
            x = LinExpr.var(v.name)
            if v.lb is not None and v.ub is not None and v.lb == v.ub:
                eq_rows.append((f"{v.name}.fix", x - v.lb))
                continue
            if v.lb is not None:
                lp_rows.append((f"{v.name}.lb", x - v.lb))
            if v.ub is not None:
                lp_rows.append((f"{v.name}.ub", v.ub - x))
        for row in prog.linear:
            if row.sense == "==":
                eq_rows.append((row.name, row.expr - row.rhs))
            elif row.sense == "<=":
                lp_rows.append((row.name, row.rhs - row.expr))
            else:
                lp_rows.append((row.name, row.expr - row.rhs))
        for cone in prog.cones:
            if len(cone.exprs) == 1:
                lp_rows.append((cone.name, cone.exprs[0]))
            else:
                soc_rows.append((cone.name, cone.exprs))

        def matrices(exprs: List[LinExpr], sign: float):
            # row value = const + a'x + p'theta ; returns (sign*a, sign*const, sign*p)
            ri, ci, vi, pr, pc, pv = [], [], [], [], [], []
            const = np.zeros(len(exprs))
            for r, e in enumerate(exprs):
                const[r] = e.const
                for name, coef in e.terms.items():
                    if name in vidx:
                        ri.append(r); ci.append(vidx[name]); vi.append(coef)
                    else:
                        pr.append(r); pc.append(pidx[name]); pv.append(coef)
            M = sp.csr_matrix((np.array(vi) * sign, (ri, ci)), shape=(len(exprs), n))
            P = sp.csr_matrix((np.array(pv) * sign, (pr, pc)), shape=(len(exprs), k))
            return M, const * sign, P

        eq_exprs = [e for _, e in eq_rows]
        A, negb0, negB = matrices(eq_exprs, 1.0)
        flat: List[LinExpr] = [e for _, e in lp_rows]
        for _, exprs in soc_rows:
            flat.extend(exprs)
        # s = h - Gx equals the row expression, so G = -a and h = const + p'theta
        negG, h0, H = matrices(flat, 1.0)

        q = np.zeros(n)
        for name, coef in prog.quadratic.items():
            q[vidx[name]] = coef
        c = np.zeros(n)
        for name, coef in prog.objective.terms.items():
            c[vidx[name]] = coef

        frozen = cls(
            name=prog.name,
            var_names=var_names,
            param_names=param_names,
            param_values=np.array([prog.parameters[p] for p in param_names], dtype=float),
            q=q,
            c=c,
            c0=prog.objective.const,
            eq_names=[nm for nm, _ in eq_rows],
            A=A,
            b0=-negb0,
            B=-negB,
            cone_names=[nm for nm, _ in lp_rows] + [nm for nm, _ in soc_rows],
            cone_dims=[1] * len(lp_rows) + [len(e) for _, e in soc_rows],
            lp_count=len(lp_rows),
            G=-negG,
            h0=h0,
            H=H,
            eq_exprs=eq_exprs,
            cone_exprs=[(e,) for _, e in lp_rows] + [tuple(e) for _, e in soc_rows],
            source=prog,
        )
        logger.debug(
            f"Froze '{prog.name}': {n} vars, {len(eq_rows)} equalities, "
            f"{len(lp_rows)} linear cones, {len(soc_rows)} SOC rows"
        )
        return frozen

    def cone_slices(self) -> List[slice]:
        out, start = [], 0
        for d in self.cone_dims:
            out.append(slice(start, start + d))
            start += d
        return out

    def vector(self, point: Mapping[str, float]) -> np.ndarray:
        try:
            return np.array([point[k] for k in self.var_names], dtype=float)
        except KeyError as e:
            raise MissingValueError(f"No value for variable '{e.args[0]}'")

    def objective_value(self, x: np.ndarray) -> float:
        return float(self.c @ x + self.q @ (x * x) + self.c0)

    def infeasibility(self, x: np.ndarray, theta: np.ndarray = None) -> float:
        worst = 0.0
        if self.A.shape[0]:
            worst = max(worst, float(np.max(np.abs(self.A @ x - self.b(theta)))))
        s = self.h(theta) - self.G @ x
        worst = max(worst, cone_violation(s, self.cone_slices()))
        return worst


def cone_violation(s: np.ndarray, slices: List[slice]) -> float:
    worst = 0.0
    for sl in slices:
        block = s[sl]
        if len(block) == 1:
            worst = max(worst, -float(block[0]))
        else:
            worst = max(worst, float(np.linalg.norm(block[1:]) - block[0]))
    return worst


def dual_name(kind: str, row: str, k: int = None) -> str:
    return f"{kind}[{row}]" if k is None else f"{kind}[{row}][{k}]"


@dataclass
class DualProgram:
    """Mechanical dual of a frozen program.

    max  c0 - sum q_j xq_j^2 - b(theta)'nu - h(theta)'z
    s.t. 2 q_j xq_j + c_j + (A'nu)_j + (G'z)_j = 0   for every primal variable j
         z in K
    """

    primal: FrozenProgram
    nu_names: List[str]
    z_blocks: List[Tuple[str, Tuple[str, ...]]]
    xq_names: Dict[str, str]
    stationarity: Dict[str, LinExpr]
    objective: QuadExpr

    @property
    def variable_names(self) -> List[str]:
        out = list(self.nu_names)
        for _, names in self.z_blocks:
            out.extend(names)
        out.extend(self.xq_names.values())
        return out

    def strengthened_stationarity(self, var: str) -> LinExpr:
        """Stationarity row of a quadratic variable with the primal value in place of its dual copy."""
        if var not in self.xq_names:
            raise ProgramBuildError(f"'{var}' has no quadratic cost term")
        row = self.stationarity[var]
        xq = self.xq_names[var]
        out = row.copy()
        coef = out.terms.pop(xq)
        out.add_term(var, coef)
        return out

    def as_program(self) -> ConicProgram:
        """Dual as a minimization (min -Omega^d) with parameters at their current values."""
        prog = ConicProgram(f"dual({self.primal.name})")
        for name in self.nu_names:
            prog.add_variable(name)
        for name in self.xq_names.values():
            prog.add_variable(name)
        for (row, names), dim in zip(self.z_blocks, self.primal.cone_dims):
            for nm in names:
                prog.add_variable(nm, lb=0.0 if dim == 1 else None)
            if dim > 1:
                prog.add_soc([LinExpr.var(nm) for nm in names], name=f"cone[{row}]")
        for var, row in self.stationarity.items():
            prog.add_linear(row, "==", 0.0, name=f"stat[{var}]")
        values = dict(zip(self.primal.param_names, self.primal.param_values))
        neg = -self.objective
        lin = LinExpr(const=neg.const)
        quad: Dict[str, float] = {}
        for k, c in neg.lin.terms.items():
            if k in values:
                lin.const += c * values[k]
            else:
                lin.add_term(k, c)
        for (a, b), c in neg.quad.items():
            if a == b and a not in values:
                quad[a] = quad.get(a, 0.0) + c
            elif a in values:
                lin.add_term(b, c * values[a])
            elif b in values:
                lin.add_term(a, c * values[b])
            else:
                raise ProgramBuildError("Dual objective has a cross term between dual variables")
        prog.set_quadratic_objective(lin, quad)
        return prog


def dualize(program: ConicProgram) -> Tuple[DualProgram, PairingMap]:
    f = program.freeze()
    nu_names = [dual_name("nu", r) for r in f.eq_names]
    z_blocks: List[Tuple[str, Tuple[str, ...]]] = []
    for row, dim in zip(f.cone_names, f.cone_dims):
        names = (dual_name("z", row),) if dim == 1 else tuple(dual_name("z", row, j) for j in range(dim))
        z_blocks.append((row, names))
    z_flat = [nm for _, names in z_blocks for nm in names]
    xq_names = {f.var_names[j]: dual_name("xq", f.var_names[j]) for j in np.flatnonzero(f.q > 0)}

    stationarity: Dict[str, LinExpr] = {}
    At = f.A.T.tocsr()
    Gt = f.G.T.tocsr()
    for j, var in enumerate(f.var_names):
        row = LinExpr(const=f.c[j])
        if var in xq_names:
            row.add_term(xq_names[var], 2.0 * f.q[j])
        lo, hi = At.indptr[j], At.indptr[j + 1]
        for i, a in zip(At.indices[lo:hi], At.data[lo:hi]):
            row.add_term(nu_names[i], a)
        lo, hi = Gt.indptr[j], Gt.indptr[j + 1]
        for i, g in zip(Gt.indices[lo:hi], Gt.data[lo:hi]):
            row.add_term(z_flat[i], g)
        stationarity[var] = row

    objective = QuadExpr(LinExpr(const=f.c0))
    for var, xq in xq_names.items():
        objective.add_quad(xq, xq, -f.q[f.var_names.index(var)])

    def rhs_expr(const: float, P: sp.csr_matrix, i: int) -> LinExpr:
        e = LinExpr(const=const)
        lo, hi = P.indptr[i], P.indptr[i + 1]
        for j, v in zip(P.indices[lo:hi], P.data[lo:hi]):
            e.add_term(f.param_names[j], v)
        return e

    B, H = f.B.tocsr(), f.H.tocsr()
    for i, nu in enumerate(nu_names):
        objective.accumulate(rhs_expr(f.b0[i], B, i) * LinExpr.var(nu), -1.0)
    for i, z in enumerate(z_flat):
        objective.accumulate(rhs_expr(f.h0[i], H, i) * LinExpr.var(z), -1.0)

    pairs = [
        ConePair(row, f.cone_exprs[r], names, len(names) == 1)
        for r, (row, names) in enumerate(z_blocks)
    ]
    dual = DualProgram(f, nu_names, z_blocks, xq_names, stationarity, objective)
    logger.debug(f"Dualized '{f.name}': {len(dual.variable_names)} dual vars, {len(pairs)} cone pairs")
    return dual, PairingMap(pairs)


@dataclass(frozen=True)
class Evaluation:
    objective: float
    infeasibility: float


@dataclass(frozen=True)
class DualityGap:
    absolute: float
    relative_pct: float


def _theta_from(f: FrozenProgram, point: Mapping[str, float]) -> np.ndarray:
    return f.theta({k: point[k] for k in f.param_names if k in point})


def evaluate(program, point: Mapping[str, float]) -> Evaluation:
    """Objective value and max signed violation of a primal or dual program at `point`."""
    if isinstance(program, ConicProgram):
        f = program.freeze()
        x = f.vector(point)
        return Evaluation(f.objective_value(x), f.infeasibility(x, _theta_from(f, point)))
    if isinstance(program, DualProgram):
        f = program.primal
        full = dict(zip(f.param_names, f.param_values))
        full.update(point)
        worst = 0.0
        for row in program.stationarity.values():
            worst = max(worst, abs(row.evaluate(full)))
        for _, names in program.z_blocks:
            z = np.array([full[nm] if nm in full else _missing(nm) for nm in names])
            worst = max(worst, cone_violation(z, [slice(0, len(z))]))
        return Evaluation(program.objective.evaluate(full), worst)
    raise TypeError(f"Cannot evaluate {type(program).__name__}")


def _missing(name: str):
    raise MissingValueError(f"No value for variable '{name}'")


def duality_gap(primal_point: Mapping[str, float], dual_point: Mapping[str, float],
                dual: DualProgram, tol: float = 1e-6) -> DualityGap:
    primal_eval = evaluate(dual.primal.source, primal_point)
    if primal_eval.infeasibility > tol:
        raise InfeasiblePointError(f"Primal point violates a row by {primal_eval.infeasibility:.3g}")
    point = {k: primal_point[k] for k in dual.primal.param_names if k in primal_point}
    point.update(dual_point)
    dual_eval = evaluate(dual, point)
    if dual_eval.infeasibility > tol:
        raise InfeasiblePointError(f"Dual point violates a row by {dual_eval.infeasibility:.3g}")
    absolute = primal_eval.objective - dual_eval.objective
    return DualityGap(absolute, absolute / max(1.0, abs(primal_eval.objective)) * 100.0)


def dump_program(program: ConicProgram) -> str:
    """Plain-text LP-like listing in declaration order."""
    lines = [f"\\ program {program.name}", "minimize"]
    obj = QuadExpr(program.objective)
    for k, c in program.quadratic.items():
        obj.add_quad(k, k, c)
    lines.append(f"  obj: {format_quadratic(obj)}")
    lines.append("subject to")
    for row in program.linear:
        lines.append(f"  {row.name}: {format_linear(row.expr)} {row.sense} {row.rhs:.12g}")
    if program.cones:
        lines.append("cones")
        for cone in program.cones:
            head = format_linear(cone.exprs[0])
            tail = ", ".join(format_linear(e) for e in cone.exprs[1:])
            lines.append(f"  {cone.name}: || ({tail}) || <= {head}")
    lines.append("bounds")
    for v in program.variables.values():
        lo = "-inf" if v.lb is None else f"{v.lb:.12g}"
        hi = "+inf" if v.ub is None else f"{v.ub:.12g}"
        lines.append(f"  {lo} <= {v.name} <= {hi}")
    if program.parameters:
        lines.append("parameters")
        for k, val in program.parameters.items():
            lines.append(f"  {k} = {val:.12g}")
    lines.append("end")
    return "\n".join(lines) + "\n"
