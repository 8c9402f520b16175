"""Interior-point solves of convex conic programs through cvxopt."""

import logging
import time
from typing import Mapping, Union

import numpy as np
import scipy.sparse as sp
from cvxopt import matrix, solvers, spmatrix

from .conic import ConicProgram, FrozenProgram, dual_name
from .problem import ReducedProblem
from .schemas import Solution, SolveOptions, SolveStatus

logger = logging.getLogger(__name__)


def _sparse(M: sp.spmatrix) -> spmatrix:
    coo = M.tocoo()
    return spmatrix(coo.data.astype(float).tolist(), coo.row.tolist(), coo.col.tolist(), size=M.shape)


def _dense(v: np.ndarray) -> matrix:
    values = np.asarray(v, dtype=float).ravel()
    return matrix(values.tolist(), (len(values), 1), "d")


def _status(result: dict, infeasibility: float, opts: SolveOptions) -> SolveStatus:
    raw = result.get("status")
    if raw == "optimal":
        return SolveStatus.OPTIMAL
    if raw == "primal infeasible":
        return SolveStatus.INFEASIBLE
    if raw == "dual infeasible":
        return SolveStatus.UNBOUNDED
    if result.get("x") is None:
        return SolveStatus.ITERATION_LIMIT
    if infeasibility <= opts.feasibility_tol * 100:
        return SolveStatus.FEASIBLE
    if result.get("iterations", 0) >= opts.conic_max_iterations:
        return SolveStatus.ITERATION_LIMIT
    return SolveStatus.INFEASIBLE_POINT


def solve_conic(program: Union[ConicProgram, FrozenProgram], opts: SolveOptions = None,
                parameters: Mapping[str, float] = None) -> Solution:
    """Solve a frozen program; duals are keyed nu[row], z[row], z[row][j] like `dualize` names them."""
    opts = opts or SolveOptions()
    f = program.freeze() if isinstance(program, ConicProgram) else program
    theta = f.theta(parameters)
    n = f.n
    start = time.perf_counter()

    options = {
        "show_progress": False,
        "maxiters": opts.conic_max_iterations,
        "abstol": opts.optimality_tol,
        "reltol": opts.optimality_tol,
        "feastol": opts.feasibility_tol,
    }
    dims = {"l": f.lp_count, "q": list(f.cone_dims[f.lp_count:]), "s": []}
    G, h = _sparse(f.G), _dense(f.h(theta))
    A = _sparse(f.A) if f.A.shape[0] else None
    b = _dense(f.b(theta)) if f.A.shape[0] else None
    c = _dense(f.c)
    try:
        if np.any(f.q > 0):
            P = spmatrix((2.0 * f.q).tolist(), list(range(n)), list(range(n)), size=(n, n))
            result = solvers.coneqp(P, c, G, h, dims, A, b, options=options)
        else:
            result = solvers.conelp(c, G, h, dims, A, b, options=options)
    except (ValueError, ArithmeticError) as e:
        logger.warning(f"cvxopt failed on '{f.name}': {e}")
        return Solution({}, float("nan"), float("inf"), SolveStatus.INFEASIBLE_POINT,
                        wall_time=time.perf_counter() - start, info={"message": str(e)})

    elapsed = time.perf_counter() - start
    if result.get("x") is None or result["status"] in ("primal infeasible", "dual infeasible"):
        status = _status(result, float("inf"), opts)
        logger.info(f"'{f.name}': {status.value} after {result.get('iterations', 0)} iterations")
        return Solution({}, float("nan"), float("inf"), status, result.get("iterations", 0), elapsed,
                        info={"message": result["status"]})

    x = np.array(result["x"]).ravel()
    infeasibility = f.infeasibility(x, theta)
    status = _status(result, infeasibility, opts)
    point = dict(zip(f.var_names, x.tolist()))

    duals = {}
    y = np.array(result["y"]).ravel() if f.A.shape[0] else np.zeros(0)
    for row, value in zip(f.eq_names, y):
        duals[dual_name("nu", row)] = float(value)
    z = np.array(result["z"]).ravel()
    for row, sl in zip(f.cone_names, f.cone_slices()):
        block = z[sl]
        if len(block) == 1:
            duals[dual_name("z", row)] = float(block[0])
        else:
            for j, value in enumerate(block):
                duals[dual_name("z", row, j)] = float(value)
    for j in np.flatnonzero(f.q > 0):
        duals[dual_name("xq", f.var_names[j])] = float(x[j])

    objective = f.objective_value(x)
    logger.debug(
        f"'{f.name}': {status.value}, objective {objective:.8g}, "
        f"infeasibility {infeasibility:.2e}, {result['iterations']} iterations"
    )
    return Solution(point, objective, infeasibility, status, int(result["iterations"]), elapsed, duals,
                    info={"theta": dict(zip(f.param_names, theta.tolist()))})


def solve_reduced_conic(problem: ReducedProblem, opts: SolveOptions = None) -> Solution:
    """Solve a convex reduced problem; the returned objective is the maximized one."""
    conic = problem.to_conic()
    sol = solve_conic(conic, opts)
    if not sol.point:
        return sol
    point = {k: sol.point[k] for k in problem.variables}
    objective, worst = problem.evaluate(point)
    status = sol.status
    tol = (opts or SolveOptions()).feasibility_tol
    if status == SolveStatus.OPTIMAL and worst > max(1e-6, 100 * tol):
        status = SolveStatus.FEASIBLE if worst <= 1e-4 else SolveStatus.INFEASIBLE_POINT
    return Solution(point, objective, worst, status, sol.iterations, sol.wall_time, sol.duals, info=sol.info)
