"""Best-first branch and bound for reductions with binary variables."""

import heapq
import itertools
import logging
import math
import time
from typing import Dict, Mapping, Optional, Tuple

from .conic_solver import solve_reduced_conic
from .nlp_solver import acceptance_tolerance, multistart
from .problem import ReducedProblem
from .schemas import Solution, SolveOptions, SolveStatus

logger = logging.getLogger(__name__)

INTEGRALITY_TOL = 1e-6

Bounds = Dict[str, Tuple[Optional[float], Optional[float]]]


def _relax(problem: ReducedProblem, bounds: Bounds, opts: SolveOptions, start: Mapping[str, float]) -> Solution:
    node = problem.relaxed().with_bounds(bounds)
    if node.is_convex():
        return solve_reduced_conic(node, opts)
    return multistart(node, start, opts)


def _branching_variable(problem: ReducedProblem, point: Mapping[str, float]) -> Optional[str]:
    """Most fractional integral variable; ties go to the first declared."""
    choice, worst = None, INTEGRALITY_TOL
    for name in problem.integral_names():
        frac = abs(point[name] - round(point[name]))
        if frac > worst + 1e-12:
            choice, worst = name, frac
    return choice


def branch_and_bound(problem: ReducedProblem, opts: SolveOptions = None,
                     start: Mapping[str, float] = None) -> Solution:
    """Maximize `problem` with its integrality marks enforced.

    Nodes are explored in order of their relaxation bound. With
    ``opts.exhaustive`` no node is pruned by bound, which enumerates the whole
    tree. On the time limit the incumbent is returned with its relative gap.
    """
    opts = opts or SolveOptions()
    began = time.perf_counter()
    deadline = began + opts.time_limit
    tol = acceptance_tolerance(opts)
    counter = itertools.count()

    root = _relax(problem, {}, opts, start or {})
    nodes = 1
    if not root.status.accepted:
        logger.info(f"Root relaxation of {problem.name} failed: {root.status.value}")
        root.nodes = nodes
        root.wall_time = time.perf_counter() - began
        if root.status not in (SolveStatus.UNBOUNDED, SolveStatus.TIME_LIMIT):
            root.status = SolveStatus.INFEASIBLE
        return root

    queue = [(-root.objective, next(counter), {}, root)]
    incumbent: Optional[Solution] = None
    timed_out = False
    iterations = root.iterations

    while queue:
        if time.perf_counter() > deadline:
            timed_out = True
            break
        neg_bound, _, bounds, sol = heapq.heappop(queue)
        if incumbent is not None and not opts.exhaustive and -neg_bound <= incumbent.objective + 1e-9 * max(1.0, abs(incumbent.objective)):
            continue
        name = _branching_variable(problem, sol.point)
        if name is None:
            point = dict(sol.point)
            for k in problem.integral_names():
                point[k] = float(round(point[k]))
            objective, worst = problem.evaluate(point)
            if worst <= tol and (incumbent is None or objective > incumbent.objective):
                incumbent = Solution(point, objective, worst, SolveStatus.FEASIBLE, duals=sol.duals)
                logger.debug(f"New incumbent {objective:.8g} at node {nodes}")
            continue
        value = sol.point[name]
        var = problem.variables[name]
        for lb, ub in ((var.lb, float(math.floor(value))), (float(math.ceil(value)), var.ub)):
            child_bounds = dict(bounds)
            child_bounds[name] = (lb, ub)
            if lb is not None and ub is not None and lb > ub:
                continue
            child = _relax(problem, child_bounds, opts, sol.point)
            nodes += 1
            iterations += child.iterations
            if not child.status.accepted:
                continue
            if incumbent is not None and not opts.exhaustive and child.objective <= incumbent.objective:
                continue
            heapq.heappush(queue, (-child.objective, next(counter), child_bounds, child))

    elapsed = time.perf_counter() - began
    if incumbent is None:
        status = SolveStatus.TIME_LIMIT if timed_out else SolveStatus.INFEASIBLE
        logger.info(f"Branch and bound on {problem.name}: no integral point after {nodes} nodes")
        return Solution({}, float("nan"), float("inf"), status, iterations, elapsed, nodes=nodes)

    bound = incumbent.objective
    if queue:
        bound = max(bound, max(-entry[0] for entry in queue))
    gap = max(0.0, bound - incumbent.objective) / max(1.0, abs(incumbent.objective))
    incumbent.status = SolveStatus.TIME_LIMIT if timed_out else SolveStatus.OPTIMAL
    incumbent.iterations = iterations
    incumbent.wall_time = elapsed
    incumbent.nodes = nodes
    incumbent.mip_gap = gap
    logger.info(
        f"Branch and bound on {problem.name}: {incumbent.status.value}, objective {incumbent.objective:.8g}, "
        f"{nodes} nodes, gap {gap:.2e}"
    )
    return incumbent
