"""
Joint local computing and transmission probability control.

The non-convex product objective is minimized by inner convex
approximation: each outer step minimizes the convex surrogate built at the
current point, moves towards its minimizer with a decaying step, and stops
once successive points barely move. H is relaxed to a real number during
the iteration and rounded at the end.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from core.errors import JcpDiagnosticError, SolverStallError
from jcp.problem import (
    JcpProblem,
    objective,
    surrogate,
    surrogate_gradient,
    surrogate_hessian,
    theta1_values,
    theta2_values,
)

MAX_ITERATIONS = 10_000
# Move tolerance of the p_b refinement on the rounded-H slice.
_REFINE_IOTA = 1e-12
# Armijo slack, in ulps of the current value.
_VALUE_ULPS = 4


def _projected_gradient(x, g, prob: JcpProblem) -> np.ndarray:
    return x - prob.clip(x - g)


def _free_mask(x, g, prob: JcpProblem) -> np.ndarray:
    at_lower = (x <= prob.lower) & (g > 0)
    at_upper = (x >= prob.upper) & (g < 0)
    return ~(at_lower | at_upper)


def _newton_direction(g, hess, free) -> np.ndarray:
    direction = np.zeros_like(g)
    if not np.any(free):
        return direction
    sub = hess[np.ix_(free, free)]
    try:
        np.linalg.cholesky(sub)
        direction[free] = np.linalg.solve(sub, -g[free])
    except np.linalg.LinAlgError:
        diag = np.diag(sub)
        direction[free] = -g[free] / np.where(diag > 0, diag, 1.0)
    return direction


def _line_search(x, g, direction, value, fn, prob: JcpProblem,
                 armijo: float = 1e-4, alpha_min: float = 1e-20):
    # A step that moves the point and keeps the value within a few ulps
    # counts as descent.
    slack = _VALUE_ULPS * np.finfo(np.float64).eps * max(1.0, abs(value))
    alpha = 1.0
    while alpha > alpha_min:
        x_new = prob.clip(x + alpha * direction)
        if np.array_equal(x_new, x):
            return None
        value_new = fn(x_new)
        if value_new <= value + armijo * g @ (x_new - x) + slack:
            return x_new, value_new
        alpha *= 0.5
    return None


def solve_surrogate(phi_k, prob: JcpProblem, tol: float = 1e-8,
                    max_iter: int = MAX_ITERATIONS) -> np.ndarray:
    """
    Minimizes the surrogate built at ``phi_k`` over the relaxed box.

    Projected Newton: coordinates held at a bound by an outward gradient
    are fixed, the rest take a Newton step (diagonally scaled gradient if
    the reduced Hessian is not positive definite) with Armijo backtracking
    along the projection. Starts from ``phi_k`` so the result never has a
    larger surrogate value than ``phi_k`` itself.

    Raises
    ------
    SolverStallError
        If the projected-gradient tolerance is not met within ``max_iter``
        iterations, or no step along the Newton or gradient direction
        descends before it is met.
    """
    phi_k = prob.clip(phi_k)

    def fn(phi):
        return surrogate(phi, phi_k, prob)

    x = phi_k.copy()
    value = fn(x)
    for iteration in range(max_iter):
        g = surrogate_gradient(x, phi_k, prob)
        if np.linalg.norm(_projected_gradient(x, g, prob)) <= tol * max(1.0, abs(value)):
            return x
        free = _free_mask(x, g, prob)
        direction = _newton_direction(g, surrogate_hessian(x, phi_k, prob), free)
        step = _line_search(x, g, direction, value, fn, prob)
        if step is None:
            steepest = np.where(free, -g, 0.0)
            step = _line_search(x, g, steepest, value, fn, prob)
        if step is None:
            raise SolverStallError(
                f'Surrogate line search exhausted after {iteration} iterations '
                f'with projected gradient norm '
                f'{np.linalg.norm(_projected_gradient(x, g, prob)):.3g}.')
        x, value = step
    raise SolverStallError(
        f'Surrogate solver did not converge in {max_iter} iterations.')


@dataclass
class JcpSolution:
    p_b: float
    local_iterations: int
    objective: float
    iterations: int
    converged: bool
    relaxed: tuple[float, float] = (math.nan, math.nan)
    trace: list[tuple[float, float]] = field(default_factory=list)
    objectives: list[float] = field(default_factory=list)

    @property
    def phi(self) -> np.ndarray:
        return np.array([self.p_b, float(self.local_iterations)])

    def to_dict(self) -> dict:
        record = asdict(self)
        record['relaxed'] = list(self.relaxed)
        record['trace'] = [list(point) for point in self.trace]
        return record


def round_local_iterations(h: float, prob: JcpProblem) -> int:
    """Nearest admissible integer; halves go to the smaller H."""
    return int(min(max(math.ceil(h - 0.5), prob.h_min), prob.h_max))


def _iterate(prob: JcpProblem, start: np.ndarray, gamma0: float, xi: float,
             iota: float, max_iter: int):
    phi = prob.clip(start)
    value = objective(phi, prob)
    trace = [tuple(phi)]
    objectives = [value]
    gamma = gamma0
    for iteration in range(1, max_iter + 1):
        try:
            target = solve_surrogate(phi, prob)
        except SolverStallError as exc:
            logging.warning(f'JCP iteration {iteration}: {exc}')
            return phi, trace, objectives, iteration, False
        new_phi = prob.clip(phi + gamma * (target - phi))
        new_value = objective(new_phi, prob)
        if new_value > value * (1.0 + 1e-12) + 1e-15:
            raise JcpDiagnosticError(
                f'Objective increased from {value:.12g} to {new_value:.12g} '
                f'at iteration {iteration}.')
        moved = float(np.sum((new_phi - phi) ** 2))
        phi, value = new_phi, new_value
        trace.append(tuple(phi))
        objectives.append(value)
        logging.debug(f'JCP iteration {iteration}: p_b={phi[0]:.6f}, '
                      f'H={phi[1]:.4f}, objective={value:.6g}')
        if moved <= iota:
            return phi, trace, objectives, iteration, True
        gamma = gamma * (1.0 - xi * gamma)
    return phi, trace, objectives, max_iter, False


def solve_jcp(prob: JcpProblem, gamma0: float = 1.0, xi: float = 1e-5,
              iota: float = 1e-5, max_iter: int = MAX_ITERATIONS,
              start=None, refine_p: bool = True) -> JcpSolution:
    """
    Runs the inner convex approximation loop and rounds H.

    Parameters
    ----------
    prob : JcpProblem
        Objective constants and the feasible box.
    gamma0 : float
        Initial step in (0, 1].
    xi : float
        Step decay: gamma <- gamma (1 - xi gamma).
    iota : float
        Stop once the squared move between iterates is at most ``iota``.
    start : optional
        Initial point; the centre of the box by default.
    refine_p : bool
        Re-optimize p_b on the slice of the rounded H.

    Returns
    -------
    JcpSolution
        Rounded optimum, the relaxed optimum and the iterate trace.
    """
    if not 0.0 < gamma0 <= 1.0:
        raise ValueError(f'gamma0 must lie in (0, 1], got {gamma0}.')
    if xi <= 0 or iota <= 0:
        raise ValueError('xi and iota must be positive.')
    if start is None:
        start = (prob.lower + prob.upper) / 2.0

    phi, trace, objectives, iterations, converged = _iterate(
        prob, np.asarray(start, dtype=np.float64), gamma0, xi, iota, max_iter)
    if not converged:
        logging.warning(f'JCP did not converge within {max_iter} iterations')

    h_star = round_local_iterations(phi[1], prob)
    p_star = float(phi[0])
    if refine_p:
        sliced = prob.model_copy(update={'h_min': h_star, 'h_max': h_star})
        refined = solve_jcp(sliced, gamma0, xi, min(iota, _REFINE_IOTA), max_iter,
                            start=(p_star, h_star), refine_p=False)
        p_star = refined.p_b
        converged = converged and refined.converged
    value = objective((p_star, h_star), prob)
    logging.info(f'JCP solution: p_b={p_star:.4f}, H={h_star}, '
                 f'objective={value:.6g} after {iterations} iterations')
    return JcpSolution(p_b=p_star, local_iterations=h_star, objective=value,
                       iterations=iterations, converged=converged,
                       relaxed=(float(phi[0]), float(phi[1])),
                       trace=[(float(p), float(h)) for p, h in trace],
                       objectives=objectives)


@dataclass(frozen=True)
class GridResult:
    p_b: float
    local_iterations: int
    objective: float

    @property
    def phi(self) -> np.ndarray:
        return np.array([self.p_b, float(self.local_iterations)])


def p_grid(prob: JcpProblem, resolution: float) -> np.ndarray:
    """p_max, p_max - r, p_max - 2r, ... down to p_min."""
    if resolution <= 0:
        raise ValueError(f'Resolution must be positive, got {resolution}.')
    count = int(math.floor((prob.p_max - prob.p_min) / resolution + 1e-9)) + 1
    return prob.p_max - np.arange(count) * resolution


def grid_search(prob: JcpProblem, resolution: float = 1e-3) -> GridResult:
    """
    Exhaustive minimum of the objective over the p_b grid and every integer
    H in the box; the first grid index wins ties.
    """
    ps = p_grid(prob, resolution)
    hs = np.arange(prob.h_min, prob.h_max + 1)
    p_mesh, h_mesh = np.meshgrid(ps, hs.astype(np.float64), indexing='ij')
    values = theta1_values(p_mesh, h_mesh, prob) * theta2_values(p_mesh, h_mesh, prob)
    i, j = np.unravel_index(int(np.argmin(values)), values.shape)
    return GridResult(p_b=float(ps[i]), local_iterations=int(hs[j]),
                      objective=float(values[i, j]))


def optimized_energy_ratio(prob: JcpProblem, solution: JcpSolution) -> float:
    """Predicted energy at (p*, H*) over predicted energy at (p_max, H*)."""
    at_max = objective((prob.p_max, solution.local_iterations), prob)
    return solution.objective / at_max
