"""
Least-squares fit of the round-count model to simulated round counts.

The model is linear in (A0, B0, C0) once q is fixed, but A0 and B0 are
constrained non-negative, so the fit runs projected Gauss-Newton on the free
constants with an Armijo line search from the fixed start (1, 1, 1).
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from convergence.bounds import RoundModelConstants, effective_load
from core.errors import IllPosedFitError

MIN_SAMPLES = 6

# A bounded constant at or below this value counts as sitting on its bound.
_ACTIVE_TOL = 1e-12


@dataclass(frozen=True)
class FitSample:
    local_iterations: int
    p_b: float
    rounds: float
    seed: int = 0
    eps: float = math.nan


@dataclass
class FitResult:
    constants: RoundModelConstants
    residual_norm: float
    iterations: int
    residual_history: list[float] = field(default_factory=list)


def _project(x: np.ndarray) -> np.ndarray:
    projected = x.copy()
    projected[:2] = np.maximum(projected[:2], 0.0)
    return projected


def _design(samples: Sequence[FitSample], q: float) -> np.ndarray:
    H = np.array([s.local_iterations for s in samples], dtype=np.float64)
    p = np.array([s.p_b for s in samples], dtype=np.float64)
    u = effective_load(H, p, q)
    return np.column_stack([u, np.sqrt(u), np.ones_like(u)])


def _at_bound(x: np.ndarray) -> np.ndarray:
    bounded = np.zeros_like(x, dtype=bool)
    bounded[:2] = x[:2] <= _ACTIVE_TOL
    return bounded


def _projected_gradient(x: np.ndarray, gradient: np.ndarray) -> np.ndarray:
    return np.where(_at_bound(x) & (gradient > 0.0), 0.0, gradient)


def _newton_direction(jacobian: np.ndarray, residual: np.ndarray, x: np.ndarray,
                      gradient: np.ndarray) -> np.ndarray:
    # Constants on their bound stay fixed when the gradient or the step
    # would push them below it.
    at_bound = _at_bound(x)
    free = ~(at_bound & (gradient > 0.0))
    while True:
        direction = np.zeros_like(x)
        direction[free] = np.linalg.lstsq(jacobian[:, free], -residual, rcond=None)[0]
        outward = free & at_bound & (direction < 0.0)
        if not outward.any():
            return direction
        free &= ~outward


def _search(objective, x, f, gradient, direction, alpha, armijo, alpha_min):
    while alpha > alpha_min:
        x_new = _project(x + alpha * direction)
        f_new = objective(x_new)
        if f_new <= min(f, f + armijo * gradient @ (x_new - x)) \
                and not np.allclose(x_new, x, rtol=0.0, atol=1e-15):
            return x_new, f_new
        alpha *= 0.5
    return None


def fit_constants(samples: Sequence[FitSample], q: float, max_iter: int = 200,
                  gtol: float = 1e-12, armijo: float = 1e-4,
                  alpha_min: float = 1e-16) -> FitResult:
    """
    Fits ``rounds_model`` to observed (H, p_b, R) triples.

    Each Gauss-Newton step is solved over the free constants only; a
    projected gradient step takes over when that step cannot descend.

    Parameters
    ----------
    samples : Sequence[FitSample]
        At least six observations over two or more distinct H and p_b.
    q : float
        Quantizer constant, held fixed.

    Returns
    -------
    FitResult
        Fitted constants, final residual norm and the residual norm after
        every accepted iteration (non-increasing).

    Raises
    ------
    IllPosedFitError
        If the samples cannot identify the three constants.
    """
    if len(samples) < MIN_SAMPLES:
        raise IllPosedFitError(
            f'Need at least {MIN_SAMPLES} samples, got {len(samples)}.')
    if len({s.local_iterations for s in samples}) < 2:
        raise IllPosedFitError('Samples must span at least two distinct H.')
    if len({s.p_b for s in samples}) < 2:
        raise IllPosedFitError('Samples must span at least two distinct p_b.')

    jacobian = _design(samples, q)
    if np.linalg.matrix_rank(jacobian) < 3:
        raise IllPosedFitError('Sample design is rank-deficient.')
    observed = np.array([s.rounds for s in samples], dtype=np.float64)

    def objective(x):
        return float(np.sum((jacobian @ x - observed) ** 2))

    x = np.ones(3)
    f = objective(x)
    history = [math.sqrt(f)]
    iterations = 0
    for iterations in range(1, max_iter + 1):
        residual = jacobian @ x - observed
        gradient = 2.0 * jacobian.T @ residual
        steepest = -_projected_gradient(x, gradient)
        if np.linalg.norm(steepest) <= gtol * max(1.0, f):
            break
        direction = _newton_direction(jacobian, residual, x, gradient)
        step = _search(objective, x, f, gradient, direction, 1.0, armijo, alpha_min)
        if step is None:
            curvature = float(np.sum((jacobian @ steepest) ** 2))
            alpha = float(steepest @ steepest) / (2.0 * curvature)
            step = _search(objective, x, f, gradient, steepest, alpha, armijo, alpha_min)
            if step is None:
                break
            logging.debug(f'Fit iteration {iterations}: projected gradient step')
        x, f = step
        history.append(math.sqrt(f))
        logging.debug(f'Fit iteration {iterations}: residual {history[-1]:.6g}')

    constants = RoundModelConstants(a0=float(x[0]), b0=float(x[1]),
                                    c0=float(x[2]), q=q)
    logging.info(f'Fitted A0={constants.a0:.4g}, B0={constants.b0:.4g}, '
                 f'C0={constants.c0:.4g} (residual {history[-1]:.4g})')
    return FitResult(constants=constants, residual_norm=history[-1],
                     iterations=iterations, residual_history=history)
