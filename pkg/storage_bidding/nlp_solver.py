"""Primal-dual interior point method for the nonconvex reductions.

The reduced problem is compiled to

    min f(x)  s.t.  g(x) = 0,  h(x) <= 0

with quadratic rows vectorized as coordinate lists, cones written as
x0^2 - |xbar|^2 >= 0 and x0 >= 0, and smoothed pairs as residual equalities.
Steps follow the usual slack formulation (h + z = 0, z > 0) with a
fraction-to-boundary rule, Hessian regularization chosen by a curvature test
on the computed direction, and a backtracking search on an l1 merit function.
"""

import logging
import time
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from .exceptions import ProgramBuildError
from .expr import LinExpr, QuadExpr
from .problem import ReducedProblem
from .schemas import STATUS_ORDER, Solution, SolveOptions, SolveStatus
from .smoothing import jacobian as smoothing_jacobian
from .smoothing import residual as smoothing_residual
from .smoothing import scalar_hessians, scalar_residuals

logger = logging.getLogger(__name__)

FRACTION_TO_BOUNDARY = 0.99995
CENTERING = 0.1
ARMIJO = 1e-4
MAX_BACKTRACKS = 30
MAX_STALLS = 3
CURVATURE = 1e-8
FD_STEP = 1e-7
SLACK_FLOOR = 1e-8


def acceptance_tolerance(opts: SolveOptions) -> float:
    """Unscaled worst violation below which a point counts as feasible."""
    return max(1e-6, 100.0 * opts.feasibility_tol)


def _empty(m: int, n: int) -> sp.csr_matrix:
    return sp.csr_matrix((m, n))


def _diag(v: np.ndarray) -> sp.csr_matrix:
    k = len(v)
    return sp.csr_matrix((v, (np.arange(k), np.arange(k))), shape=(k, k))


class _AffineRows:
    """Rows const + M x for a list of affine expressions."""

    def __init__(self, exprs: Sequence[LinExpr], index: Dict[str, int], n: int):
        rows, cols, vals = [], [], []
        self.const = np.array([e.const for e in exprs], dtype=float)
        for r, e in enumerate(exprs):
            for name, coef in e.terms.items():
                rows.append(r)
                cols.append(_lookup(index, name))
                vals.append(coef)
        self.M = sp.csr_matrix((vals, (rows, cols)), shape=(len(exprs), n))

    def value(self, x: np.ndarray) -> np.ndarray:
        return self.const + self.M @ x


class _QuadRows:
    """Rows const + L x + sum c x_i x_j, evaluated and differentiated in bulk."""

    def __init__(self, names: List[str], exprs: Sequence[QuadExpr], index: Dict[str, int], n: int):
        self.names = names
        self.m, self.n = len(exprs), n
        self.lin = _AffineRows([e.lin for e in exprs], index, n)
        qr, qi, qj, qc = [], [], [], []
        for r, e in enumerate(exprs):
            for (a, b), c in e.quad.items():
                qr.append(r)
                qi.append(_lookup(index, a))
                qj.append(_lookup(index, b))
                qc.append(c)
        self.qr = np.array(qr, dtype=int)
        self.qi = np.array(qi, dtype=int)
        self.qj = np.array(qj, dtype=int)
        self.qc = np.array(qc, dtype=float)

    def value(self, x: np.ndarray) -> np.ndarray:
        out = self.lin.value(x)
        if len(self.qc):
            out += np.bincount(self.qr, self.qc * x[self.qi] * x[self.qj], minlength=self.m)
        return out

    def jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        if not len(self.qc):
            return self.lin.M
        rows = np.concatenate((self.qr, self.qr))
        cols = np.concatenate((self.qi, self.qj))
        vals = np.concatenate((self.qc * x[self.qj], self.qc * x[self.qi]))
        return self.lin.M + sp.csr_matrix((vals, (rows, cols)), shape=(self.m, self.n))

    def hessian(self, weights: np.ndarray) -> sp.csr_matrix:
        if not len(self.qc):
            return _empty(self.n, self.n)
        vals = weights[self.qr] * self.qc
        return sp.csr_matrix((np.concatenate((vals, vals)),
                              (np.concatenate((self.qi, self.qj)), np.concatenate((self.qj, self.qi)))),
                             shape=(self.n, self.n))


class _ScalarSmoothing:
    """Scalar smoothed pairs sharing one kind and eps."""

    def __init__(self, kind: str, eps: float, names: List[str], xs: List[LinExpr], ys: List[LinExpr],
                 index: Dict[str, int], n: int):
        self.kind, self.eps, self.names = kind, eps, names
        self.X = _AffineRows(xs, index, n)
        self.Y = _AffineRows(ys, index, n)

    def value(self, x):
        r, _, _ = scalar_residuals(self.kind, self.X.value(x), self.Y.value(x), self.eps)
        return r

    def jacobian(self, x):
        _, dx, dy = scalar_residuals(self.kind, self.X.value(x), self.Y.value(x), self.eps)
        return _diag(dx) @ self.X.M + _diag(dy) @ self.Y.M

    def hessian(self, x, w):
        rxx, rxy, ryy = scalar_hessians(self.kind, self.X.value(x), self.Y.value(x), self.eps)
        X, Y = self.X.M, self.Y.M
        return (X.T @ _diag(w * rxx) @ X + X.T @ _diag(w * rxy) @ Y
                + Y.T @ _diag(w * rxy) @ X + Y.T @ _diag(w * ryy) @ Y)


class _ConeSmoothing:
    """One smoothed SOC pair; the Hessian is a forward difference of the analytic Jacobian."""

    def __init__(self, kind: str, eps: float, name: str, xs, ys, index: Dict[str, int], n: int):
        self.kind, self.eps, self.name = kind, eps, name
        self.d = len(xs)
        self.X = _AffineRows(xs, index, n)
        self.Y = _AffineRows(ys, index, n)
        self.stack = sp.vstack([self.X.M, self.Y.M]).tocsr()

    def value(self, x):
        return smoothing_residual(self.kind, self.X.value(x), self.Y.value(x), self.eps)

    def jacobian(self, x):
        jx, jy = smoothing_jacobian(self.kind, self.X.value(x), self.Y.value(x), self.eps)
        return sp.csr_matrix(jx) @ self.X.M + sp.csr_matrix(jy) @ self.Y.M

    def hessian(self, x, w):
        d = self.d
        u = np.concatenate((self.X.value(x), self.Y.value(x)))

        def weighted(v):
            jx, jy = smoothing_jacobian(self.kind, v[:d], v[d:], self.eps)
            return w @ np.hstack((jx, jy))

        base = weighted(u)
        H = np.zeros((2 * d, 2 * d))
        for k in range(2 * d):
            step = FD_STEP * max(1.0, abs(u[k]))
            shifted = u.copy()
            shifted[k] += step
            H[:, k] = (weighted(shifted) - base) / step
        H = 0.5 * (H + H.T)
        H[~np.isfinite(H)] = 0.0
        return self.stack.T @ sp.csr_matrix(H) @ self.stack


def _lookup(index: Dict[str, int], name: str) -> int:
    try:
        return index[name]
    except KeyError:
        raise ProgramBuildError(f"Unregistered symbol '{name}'")


class CompiledProblem:
    """Vectorized min -objective s.t. g(x) = 0, h(x) <= 0 of a reduced problem."""

    def __init__(self, problem: ReducedProblem):
        self.problem = problem
        self.names = list(problem.variables)
        self.index = {k: i for i, k in enumerate(self.names)}
        n = self.n = len(self.names)
        self.lb = np.array([-np.inf if v.lb is None else v.lb for v in problem.variables.values()])
        self.ub = np.array([np.inf if v.ub is None else v.ub for v in problem.variables.values()])
        self.integral = np.array([v.integral for v in problem.variables.values()], dtype=bool)

        self.objective = _QuadRows(["objective"], [-problem.objective], self.index, n)

        eq_names, eq_exprs, iq_names, iq_exprs = [], [], [], []
        for row in problem.rows:
            if row.sense == "==":
                eq_names.append(row.name)
                eq_exprs.append(row.expr - row.rhs)
            elif row.sense == "<=":
                iq_names.append(row.name)
                iq_exprs.append(row.expr - row.rhs)
            else:
                iq_names.append(row.name)
                iq_exprs.append(row.rhs - row.expr)
        for cone in problem.cones:
            head = cone.exprs[0]
            iq_names.append(f"{cone.name}.head")
            iq_exprs.append(QuadExpr.lift(-head))
            if len(cone.exprs) > 1:
                spread = -(head * head)
                for e in cone.exprs[1:]:
                    spread.accumulate(e * e)
                iq_names.append(cone.name)
                iq_exprs.append(spread)
        for i, name in enumerate(self.names):
            if np.isfinite(self.lb[i]):
                iq_names.append(f"{name}.lb")
                iq_exprs.append(QuadExpr.lift(float(self.lb[i]) - LinExpr.var(name)))
            if np.isfinite(self.ub[i]):
                iq_names.append(f"{name}.ub")
                iq_exprs.append(QuadExpr.lift(LinExpr.var(name) - float(self.ub[i])))
        self.eq = _QuadRows(eq_names, eq_exprs, self.index, n)
        self.iq = _QuadRows(iq_names, iq_exprs, self.index, n)

        groups = defaultdict(lambda: ([], [], []))
        self.cone_pairs: List[_ConeSmoothing] = []
        for pair in problem.smoothed:
            if len(pair.x) == 1:
                names, xs, ys = groups[(pair.kind, pair.eps)]
                names.append(pair.name)
                xs.append(pair.x[0])
                ys.append(pair.y[0])
            else:
                self.cone_pairs.append(_ConeSmoothing(pair.kind, pair.eps, pair.name, pair.x, pair.y, self.index, n))
        self.scalar_pairs = [_ScalarSmoothing(k, e, *parts, self.index, n) for (k, e), parts in groups.items()]

        self.eq_names = list(eq_names)
        for block in self.scalar_pairs:
            self.eq_names.extend(block.names)
        for block in self.cone_pairs:
            self.eq_names.extend(f"{block.name}[{j}]" for j in range(block.d))
        self.iq_names = iq_names

    # evaluation

    def f(self, x):
        return float(self.objective.value(x)[0])

    def grad_f(self, x):
        return np.asarray(self.objective.jacobian(x).todense()).ravel()

    def g(self, x):
        parts = [self.eq.value(x)] + [b.value(x) for b in self.scalar_pairs] + [b.value(x) for b in self.cone_pairs]
        return np.concatenate(parts)

    def jac_g(self, x):
        parts = [self.eq.jacobian(x)] + [b.jacobian(x) for b in self.scalar_pairs]
        parts += [b.jacobian(x) for b in self.cone_pairs]
        return sp.vstack(parts).tocsr()

    def h(self, x):
        return self.iq.value(x)

    def jac_h(self, x):
        return self.iq.jacobian(x)

    def hessian(self, x, sigma: float, lam: np.ndarray, mu: np.ndarray) -> sp.csr_matrix:
        """Hessian of sigma f + lam'g + mu'h."""
        H = self.objective.hessian(np.array([sigma])) + self.iq.hessian(mu) + self.eq.hessian(lam[:self.eq.m])
        start = self.eq.m
        for block in self.scalar_pairs:
            k = len(block.names)
            H = H + block.hessian(x, lam[start:start + k])
            start += k
        for block in self.cone_pairs:
            H = H + block.hessian(x, lam[start:start + block.d])
            start += block.d
        return H.tocsr()

    # points

    def vector(self, point: Mapping[str, float]) -> np.ndarray:
        x = np.array([point.get(k, 0.0) for k in self.names], dtype=float)
        return np.clip(x, self.lb, self.ub)

    def point(self, x: np.ndarray) -> Dict[str, float]:
        return dict(zip(self.names, x.tolist()))


class _ScaledProblem:
    """Variables scaled by max(1, |x0|); objective and rows by their gradient size at x0."""

    def __init__(self, cp: CompiledProblem, x0: np.ndarray):
        self.cp = cp
        self.D = np.maximum(1.0, np.abs(x0))
        Dm = _diag(self.D)
        self.Dm = Dm
        gf = self.cp.grad_f(x0) * self.D
        self.sf = 1.0 / max(1.0, float(np.max(np.abs(gf))) if len(gf) else 1.0)
        self.sg = self._row_scale(cp.jac_g(x0) @ Dm)
        self.sh = self._row_scale(cp.jac_h(x0) @ Dm)

    @staticmethod
    def _row_scale(J: sp.csr_matrix) -> np.ndarray:
        if J.shape[0] == 0:
            return np.ones(0)
        norms = np.asarray(abs(J).max(axis=1).todense()).ravel()
        return 1.0 / np.maximum(1.0, norms)

    def f(self, xs):
        return self.sf * self.cp.f(self.D * xs)

    def grad_f(self, xs):
        return self.sf * self.D * self.cp.grad_f(self.D * xs)

    def g(self, xs):
        return self.sg * self.cp.g(self.D * xs)

    def jac_g(self, xs):
        return (_diag(self.sg) @ self.cp.jac_g(self.D * xs) @ self.Dm).tocsr()

    def h(self, xs):
        return self.sh * self.cp.h(self.D * xs)

    def jac_h(self, xs):
        return (_diag(self.sh) @ self.cp.jac_h(self.D * xs) @ self.Dm).tocsr()

    def hessian(self, xs, lam, mu):
        H = self.cp.hessian(self.D * xs, self.sf, self.sg * lam, self.sh * mu)
        return (self.Dm @ H @ self.Dm).tocsr()


@dataclass
class InteriorPointTrace:
    """Merit values (before, after) of every accepted step and the final KKT measures."""
    merit: List[Tuple[float, float]] = field(default_factory=list)
    feasibility: float = np.inf
    stationarity: float = np.inf
    complementarity: float = np.inf
    # lowest-objective feasible iterate (x, lam, mu) seen so far; iteration 0 is the start
    best: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default=None, repr=False)
    best_iteration: Optional[int] = None
    best_f: float = np.inf

    def offer(self, iteration: int, f: float, violation: float, tol: float, x, lam, mu) -> None:
        if violation <= tol and f < self.best_f:
            self.best = (x.copy(), lam.copy(), mu.copy())
            self.best_iteration, self.best_f = iteration, f


def _solve_kkt(M: sp.csr_matrix, J: sp.csr_matrix, rhs_x: np.ndarray, rhs_g: np.ndarray,
               delta_w: float) -> Tuple[Optional[np.ndarray], Optional[np.ndarray], float]:
    """Newton step with the smallest regularization that passes the curvature test."""
    n, m = M.shape[0], J.shape[0]
    delta = delta_w / 3.0 if delta_w > 1e-20 else 0.0
    delta_c = 0.0
    for _ in range(16):
        Mr = M + delta * sp.identity(n, format="csr")
        if m:
            K = sp.bmat([[Mr, J.T], [J, -delta_c * sp.identity(m)]], format="csc")
            rhs = np.concatenate((rhs_x, rhs_g))
        else:
            K, rhs = Mr.tocsc(), rhs_x
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", MatrixRankWarning)
                sol = np.atleast_1d(spsolve(K, rhs))
        except (MatrixRankWarning, RuntimeError):
            sol = np.full(n + m, np.nan)
        if not np.all(np.isfinite(sol)):
            if m and delta_c == 0.0:
                delta_c = 1e-8
            else:
                delta = 1e-4 if delta == 0.0 else 10.0 * delta
            continue
        dx = sol[:n]
        if dx @ (Mr @ dx) >= CURVATURE * (dx @ dx):
            return dx, sol[n:], delta
        delta = 1e-4 if delta == 0.0 else 10.0 * delta
    return None, None, delta


def _unscaled_violation(prob: _ScaledProblem, g: np.ndarray, h: np.ndarray) -> float:
    worst = float(np.max(np.abs(g / prob.sg))) if len(g) else 0.0
    if len(h):
        worst = max(worst, float(np.max(h / prob.sh)))
    return max(worst, 0.0)


def _interior_point(prob: _ScaledProblem, x: np.ndarray, opts: SolveOptions, deadline: float):
    gamma = 1.0
    f, df = prob.f(x), prob.grad_f(x)
    g, h = prob.g(x), prob.h(x)
    dg, dh = prob.jac_g(x), prob.jac_h(x)
    neq, niq = len(g), len(h)
    # satisfied rows start with h + z = 0 so a feasible start stays feasible
    z = np.ones(niq)
    inside = h <= 0.0
    z[inside] = np.maximum(-h[inside], SLACK_FLOOR)
    mu = gamma / np.maximum(z, 1.0)
    lam = np.zeros(neq)
    rho, delta_w, stalls = 1.0, 0.0, 0
    trace = InteriorPointTrace()
    tol = acceptance_tolerance(opts)
    trace.offer(0, f, _unscaled_violation(prob, g, h), tol, x, lam, mu)
    outcome = "iteration-limit"
    iterations = 0

    for iterations in range(1, opts.max_iterations + 1):
        if time.perf_counter() > deadline:
            outcome = "time-limit"
            break
        zinv = 1.0 / z
        Lx = df + dg.T @ lam + dh.T @ mu
        M = prob.hessian(x, lam, mu) + (dh.T @ _diag(mu * zinv) @ dh)
        N = Lx + dh.T @ (zinv * (mu * h + gamma))
        dx, dlam, delta_w = _solve_kkt(M.tocsr(), dg, -N, -g, delta_w)
        if dx is None:
            outcome = "stalled"
            break
        dz = -h - z - dh @ dx
        dmu = -mu + zinv * (gamma - mu * dz)

        neg = dz < 0
        alpha_p = min(1.0, FRACTION_TO_BOUNDARY * float(np.min(-z[neg] / dz[neg]))) if np.any(neg) else 1.0
        neg = dmu < 0
        alpha_d = min(1.0, FRACTION_TO_BOUNDARY * float(np.min(-mu[neg] / dmu[neg]))) if np.any(neg) else 1.0

        violation = np.abs(g).sum() + np.abs(h + z).sum()
        barrier_slope = df @ dx - gamma * np.sum(dz * zinv)
        if violation > 0:
            curvature = max(float(dx @ (M @ dx)), 0.0)
            rho = max(rho, (barrier_slope + 0.5 * curvature) / (0.9 * violation) + 1e-3)
        phi0 = f - gamma * np.sum(np.log(z)) + rho * violation
        slope = min(barrier_slope - rho * violation, 0.0)

        alpha, accepted = alpha_p, False
        for _ in range(MAX_BACKTRACKS):
            xn, zn = x + alpha * dx, z + alpha * dz
            fn, gn, hn = prob.f(xn), prob.g(xn), prob.h(xn)
            phi = fn - gamma * np.sum(np.log(zn)) + rho * (np.abs(gn).sum() + np.abs(hn + zn).sum())
            if np.isfinite(phi) and phi <= phi0 + ARMIJO * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            stalls += 1
            delta_w = max(1e-4, 100.0 * delta_w)
            logger.debug(f"Line search failed at iteration {iterations}; regularization {delta_w:.1e}")
            if stalls >= MAX_STALLS:
                outcome = "stalled"
                break
            continue
        stalls = 0
        trace.merit.append((float(phi0), float(phi)))

        step_d = min(alpha_d, alpha)
        f_prev = f
        x, z = xn, zn
        lam = lam + step_d * dlam
        mu = mu + step_d * dmu
        f, g, h = fn, gn, hn
        trace.offer(iterations, f, _unscaled_violation(prob, g, h), tol, x, lam, mu)
        df, dg, dh = prob.grad_f(x), prob.jac_g(x), prob.jac_h(x)
        if niq:
            gamma = CENTERING * float(z @ mu) / niq

        xnorm = float(np.max(np.abs(x))) if len(x) else 0.0
        znorm = float(np.max(z)) if niq else 0.0
        feas = max(float(np.max(np.abs(g))) if neq else 0.0, float(np.max(h)) if niq else 0.0, 0.0)
        trace.feasibility = feas / (1.0 + max(xnorm, znorm))
        Lx = df + dg.T @ lam + dh.T @ mu
        mult = max(float(np.max(np.abs(lam))) if neq else 0.0, float(np.max(mu)) if niq else 0.0)
        trace.stationarity = float(np.max(np.abs(Lx))) / (1.0 + mult) if len(Lx) else 0.0
        trace.complementarity = float(z @ mu) / (1.0 + xnorm) if niq else 0.0
        cost = abs(f - f_prev) / (1.0 + abs(f_prev))
        logger.debug(
            f"iter={iterations} merit={phi:.8e} step={alpha:.3e} infeas={trace.feasibility:.3e} "
            f"stat={trace.stationarity:.3e} mu={gamma:.3e}"
        )
        if (trace.feasibility < opts.feasibility_tol and trace.stationarity < opts.optimality_tol
                and trace.complementarity < opts.optimality_tol and cost < opts.optimality_tol):
            outcome = "converged"
            break
    return x, lam, mu, iterations, outcome, trace


def kkt_residual(problem: ReducedProblem, solution: Solution) -> float:
    """Largest of the scaled feasibility, stationarity and complementarity measures at termination."""
    trace: InteriorPointTrace = solution.info.get("trace")
    if trace is None:
        raise ValueError(f"No interior-point trace attached to the solution of {problem.name}")
    return max(trace.feasibility, trace.stationarity, trace.complementarity)


def solve_nlp(problem: ReducedProblem, start: Mapping[str, float] = None, opts: SolveOptions = None,
              compiled: CompiledProblem = None, deadline: float = None) -> Solution:
    """Local solve of a (possibly nonconvex) reduced problem from `start`."""
    opts = opts or SolveOptions()
    began = time.perf_counter()
    deadline = deadline if deadline is not None else began + opts.time_limit
    cp = compiled or CompiledProblem(problem)
    x0 = cp.vector(start or {})
    prob = _ScaledProblem(cp, x0)
    xs, lam, mu, iterations, outcome, trace = _interior_point(prob, x0 / prob.D, opts, deadline)
    tol = acceptance_tolerance(opts)
    final = _solution(problem, cp, prob, xs, lam, mu, iterations, trace, outcome)
    feasible = final.infeasibility <= tol
    if outcome == "converged":
        final.status = SolveStatus.OPTIMAL if feasible else SolveStatus.INFEASIBLE_POINT
    elif outcome == "time-limit":
        final.status = SolveStatus.TIME_LIMIT
    elif outcome == "stalled":
        final.status = SolveStatus.FEASIBLE if feasible else SolveStatus.INFEASIBLE_POINT
    else:
        final.status = SolveStatus.FEASIBLE if feasible else SolveStatus.ITERATION_LIMIT

    if trace.best is not None and trace.best_iteration != iterations:
        origin = "warm-start" if trace.best_iteration == 0 else f"iterate {trace.best_iteration}"
        kept = _solution(problem, cp, prob, *trace.best, iterations, trace, origin)
        kept.status = SolveStatus.FEASIBLE
        if kept.infeasibility <= tol and _improves(kept, final, tol):
            logger.info(
                f"NLP {problem.name}: {outcome} at objective {final.objective:.8g} "
                f"({final.status.value}); returning the {origin} with objective {kept.objective:.8g}"
            )
            final = kept

    final.wall_time = time.perf_counter() - began
    logger.debug(
        f"NLP {problem.name}: {outcome} after {iterations} iterations, "
        f"objective {final.objective:.8g}, violation {final.infeasibility:.2e}"
    )
    return final


def _solution(problem: ReducedProblem, cp: CompiledProblem, prob: _ScaledProblem, xs: np.ndarray,
              lam: np.ndarray, mu: np.ndarray, iterations: int, trace: InteriorPointTrace,
              outcome: str) -> Solution:
    point = cp.point(prob.D * xs)
    objective, worst = problem.evaluate(point)
    duals = dict(zip(cp.eq_names, (lam * prob.sg / prob.sf).tolist()))
    duals.update(zip(cp.iq_names, (mu * prob.sh / prob.sf).tolist()))
    return Solution(point, objective, worst, SolveStatus.INFEASIBLE_POINT, iterations, 0.0, duals,
                    info={"trace": trace, "outcome": outcome})


def _improves(candidate: Solution, final: Solution, tol: float) -> bool:
    """A feasible candidate replaces a rejected final point, or an accepted one it clearly beats."""
    if not final.status.accepted:
        return True
    return candidate.objective > final.objective + tol * max(1.0, abs(final.objective))


def _better(candidate: Solution, best: Optional[Solution], names: List[str]) -> bool:
    if best is None:
        return True
    if candidate.status.accepted != best.status.accepted:
        return candidate.status.accepted
    if not candidate.status.accepted:
        rank_c, rank_b = STATUS_ORDER.index(candidate.status), STATUS_ORDER.index(best.status)
        if rank_c != rank_b:
            return rank_c > rank_b
        return candidate.infeasibility < best.infeasibility
    scale = 1e-9 * max(1.0, abs(best.objective))
    if abs(candidate.objective - best.objective) > scale:
        return candidate.objective > best.objective
    return [candidate.point[k] for k in names] < [best.point[k] for k in names]


def multistart(problem: ReducedProblem, start: Mapping[str, float] = None, opts: SolveOptions = None) -> Solution:
    """Best of `opts.multistart` local solves.

    The first start is the unperturbed warm start; every local solve also keeps its own start and its
    best feasible iterate as candidates, so a feasible warm start is never lost.
    """
    opts = opts or SolveOptions()
    began = time.perf_counter()
    deadline = began + opts.time_limit
    cp = CompiledProblem(problem)
    x0 = cp.vector(start or {})
    scale = np.maximum(1.0, np.abs(x0))
    rng = np.random.default_rng(opts.seed)
    best: Optional[Solution] = None
    statuses, total_iterations = [], 0
    for k in range(opts.multistart):
        if k and time.perf_counter() > deadline:
            logger.info(f"Multistart of {problem.name} stopped by the time limit after {k} starts")
            break
        xk = x0 if k == 0 else np.clip(x0 + scale * rng.uniform(-opts.radius, opts.radius, cp.n), cp.lb, cp.ub)
        sol = solve_nlp(problem, cp.point(xk), opts, compiled=cp, deadline=deadline)
        statuses.append(sol.status.value)
        total_iterations += sol.iterations
        if _better(sol, best, cp.names):
            best = sol
        logger.debug(f"Start {k + 1}/{opts.multistart}: {sol.status.value}, objective {sol.objective:.8g}")
    best.info["starts"] = statuses
    best.iterations = total_iterations
    best.wall_time = time.perf_counter() - began
    return best
