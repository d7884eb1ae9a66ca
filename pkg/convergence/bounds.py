"""
Convergence bound of ESOAFL and the round-count model derived from it.

``theorem1_bound`` bounds the average squared gradient norm after R rounds
in terms of smoothness, gradient variance, receiver noise and the two
compression knobs (quantizer constant q and transmission probability p_b).
``rounds_model`` is the three-constant parametric family the energy
optimizer works with.
"""
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core.errors import DomainError, NotApplicableError

# Absolute slack on the learning-rate condition so the equality case passes.
_CONDITION_SLACK = 1e-12


class BoundParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    smoothness: float = Field(ge=0)
    grad_variance: float = Field(ge=0)
    noise_var: float = Field(ge=0)
    gap: float = Field(ge=0)
    learning_rate: float = Field(ge=0)
    server_scale: float = Field(gt=0)
    local_iterations: int = Field(ge=1)
    rounds: float = Field(gt=0)
    n_clients: int = Field(ge=1)
    p_b: float = Field(gt=0, le=1)
    q: float = Field(ge=0)


class RoundModelConstants(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    a0: float = Field(ge=0)
    b0: float = Field(ge=0)
    c0: float
    q: float = Field(ge=0)

    def as_array(self) -> np.ndarray:
        return np.array([self.a0, self.b0, self.c0])


def chi(p_b: float, q: float) -> float:
    return math.sqrt((p_b + q) / p_b)


def condition_lhs(bp: BoundParams) -> float:
    L, eta, H = bp.smoothness, bp.learning_rate, bp.local_iterations
    K, p = bp.n_clients, bp.p_b
    compression = (bp.q * (2.0 - p) + K * p) / (K * p)
    return L ** 2 * eta ** 2 * H ** 2 + H * L * bp.server_scale * eta * compression


def lr_condition(bp: BoundParams) -> bool:
    """Whether the learning rates are small enough for the bound to hold."""
    return condition_lhs(bp) <= 1.0 + _CONDITION_SLACK


def theorem1_bound(bp: BoundParams) -> float:
    """
    Upper bound on the average squared global gradient norm over R rounds.

    Raises
    ------
    NotApplicableError
        If ``lr_condition`` fails.
    DomainError
        If the learning rate is zero.
    """
    if not lr_condition(bp):
        raise NotApplicableError(
            f'Learning-rate condition fails: {condition_lhs(bp):.6g} > 1.')
    if bp.learning_rate == 0:
        raise DomainError('The bound needs a positive learning rate.')
    L, eta, theta = bp.smoothness, bp.learning_rate, bp.server_scale
    H, R, K, p = bp.local_iterations, bp.rounds, bp.n_clients, bp.p_b
    optimization = 2.0 * bp.gap / (eta * theta * H * R)
    compression = eta * theta * L / K * (p + bp.q) / p * bp.grad_variance
    drift = eta ** 2 * L ** 2 * H * bp.grad_variance
    noise = theta * eta * L / (H * K ** 2 * p ** 2) * bp.noise_var
    return optimization + compression + drift + noise


def linear_speedup_rate(bp: BoundParams) -> float:
    """
    Explicit rate under the linear-speedup learning-rate choice: decays as
    chi / sqrt(K R H) plus K / R.
    """
    L, theta = bp.smoothness, bp.server_scale
    H, R, K, p = bp.local_iterations, bp.rounds, bp.n_clients, bp.p_b
    c = chi(p, bp.q)
    root = math.sqrt(K * R * H)
    return (2.0 * L * bp.gap * c / root
            + c * bp.grad_variance / root
            + K * bp.grad_variance / (R * theta ** 2)
            + bp.noise_var / math.sqrt(K ** 3 * R * H ** 3 * (p + bp.q) * p ** 3))


def round_complexity(bp: BoundParams, target: float) -> float:
    """
    Rounds needed for the average squared gradient norm to reach ``target``,
    before the constants are absorbed into the three-term model.
    """
    if target <= 0:
        raise DomainError(f'Target must be positive, got {target}.')
    H, K, theta = bp.local_iterations, bp.n_clients, bp.server_scale
    c = chi(bp.p_b, bp.q)
    spread = 2.0 * bp.smoothness * bp.gap + bp.grad_variance
    base = c ** 2 * spread ** 2 * theta ** 2
    variance_term = target * bp.grad_variance * H * K ** 2
    numerator = (2.0 * variance_term + base
                 + c * spread * theta * math.sqrt(4.0 * variance_term + base))
    return numerator / (2.0 * target ** 2 * theta ** 2 * H * K)


def effective_load(local_iterations, p_b, q):
    """(p_b + q) / (p_b H), the quantity the round model is built on."""
    return (p_b + q) / (p_b * local_iterations)


def rounds_model(local_iterations, p_b, c: RoundModelConstants):
    """Predicted rounds to target; accepts scalars or arrays."""
    if np.any(np.asarray(local_iterations) < 1):
        raise DomainError('H must be >= 1.')
    if np.any(np.asarray(p_b) <= 0) or np.any(np.asarray(p_b) > 1):
        raise DomainError('p_b must lie in (0, 1].')
    u = effective_load(np.asarray(local_iterations, dtype=np.float64),
                       np.asarray(p_b, dtype=np.float64), c.q)
    rounds = c.a0 * u + c.b0 * np.sqrt(u) + c.c0
    return float(rounds) if np.ndim(rounds) == 0 else rounds
