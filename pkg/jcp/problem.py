"""
Total-energy objective over the transmission probability p_b and the
number of local iterations H.

The objective is the product of the predicted round count
Theta1(p_b, H) = A0 u + B0 sqrt(u) + C0 with u = (p_b + q) / (p_b H) and
the per-round energy Theta2(p_b, H) = rho lambda p_b^2 ln(1 - 1/ln p_b) T + H E.
Both factors are positive and convex on the feasible box, which is what
the inner convex approximation relies on. Points are arrays ``(p_b, H)``.
"""
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from convergence.bounds import RoundModelConstants
from core.decorators import finite_result
from core.errors import DomainError
from energy.models import CommParams, CompParams, comm_time, comp_energy

P_FLOOR = 1e-4


class JcpProblem(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    a0: float = Field(ge=0)
    b0: float = Field(ge=0)
    c0: float = Field(ge=0)
    q: float = Field(ge=0)
    tx_scale: float = Field(gt=0)
    rate: float = Field(gt=0)
    comm_time: float = Field(gt=0)
    comp_energy: float = Field(gt=0)
    p_max: float = Field(gt=0, lt=1)
    h_min: int = Field(default=1, ge=1)
    h_max: int = Field(default=50, ge=1)
    p_min: float = Field(default=P_FLOOR, gt=0)

    @model_validator(mode='after')
    def _non_empty_box(self):
        if self.h_max < self.h_min:
            raise ValueError(f'h_max={self.h_max} is below h_min={self.h_min}')
        if self.p_max < self.p_min:
            raise ValueError(f'p_max={self.p_max} is below p_min={self.p_min}')
        return self

    @classmethod
    def from_models(cls, constants: RoundModelConstants, comm: CommParams,
                    cp: CompParams, p_max: float, h_min: int = 1,
                    h_max: int = 50) -> 'JcpProblem':
        return cls(a0=constants.a0, b0=constants.b0, c0=max(constants.c0, 0.0),
                   q=constants.q, tx_scale=comm.tx_scale, rate=comm.rate,
                   comm_time=comm_time(comm.dimension, comm.parallel_symbols,
                                       comm.effective_symbol_time),
                   comp_energy=comp_energy(cp), p_max=p_max,
                   h_min=h_min, h_max=h_max)

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.p_min, float(self.h_min)])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.p_max, float(self.h_max)])

    def clip(self, phi) -> np.ndarray:
        return np.clip(np.asarray(phi, dtype=np.float64), self.lower, self.upper)

    def is_feasible(self, phi, slack: float = 1e-12) -> bool:
        phi = np.asarray(phi, dtype=np.float64)
        return bool(np.all(phi >= self.lower - slack) and np.all(phi <= self.upper + slack))


def _load(p, h, q):
    return (p + q) / (p * h)


def _log_term(p):
    return np.log(1.0 - 1.0 / np.log(p))


def _check_point(phi):
    p, h = float(phi[0]), float(phi[1])
    if not 0.0 < p < 1.0:
        raise DomainError(f'p_b must lie in (0, 1), got {p}.')
    if h <= 0:
        raise DomainError(f'H must be positive, got {h}.')
    return p, h


def theta1_values(p, h, prob: JcpProblem):
    """Vectorized round-count factor."""
    u = _load(p, h, prob.q)
    return prob.a0 * u + prob.b0 * np.sqrt(u) + prob.c0


def theta2_values(p, h, prob: JcpProblem):
    """Vectorized per-round energy factor."""
    comm = prob.tx_scale * prob.rate * p ** 2 * _log_term(p) * prob.comm_time
    return comm + h * prob.comp_energy


def theta1(phi, prob: JcpProblem) -> float:
    p, h = _check_point(phi)
    return float(theta1_values(p, h, prob))


def theta2(phi, prob: JcpProblem) -> float:
    p, h = _check_point(phi)
    return float(theta2_values(p, h, prob))


@finite_result(DomainError, 'objective')
def objective(phi, prob: JcpProblem) -> float:
    return theta1(phi, prob) * theta2(phi, prob)


def energy_at(phi, prob: JcpProblem) -> float:
    """Predicted total training energy in joules: rounds times energy per round."""
    return objective(phi, prob)


def _load_partials(p, h, q):
    u = _load(p, h, q)
    first = np.array([-q / (p ** 2 * h), -u / h])
    second = np.array([
        [2.0 * q / (p ** 3 * h), q / (p ** 2 * h ** 2)],
        [q / (p ** 2 * h ** 2), 2.0 * u / h ** 2],
    ])
    return u, first, second


def _comm_shape_partials(p):
    """First and second derivative of p^2 ln(1 - 1/ln p)."""
    log_p = math.log(p)
    s = math.log(1.0 - 1.0 / log_p)
    denom = log_p * (log_p - 1.0)
    first = 2.0 * p * s + p / denom
    second = 2.0 * s + 3.0 / denom - (2.0 * log_p - 1.0) / denom ** 2
    return first, second


def gradients(phi, prob: JcpProblem) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form gradients of Theta1 and Theta2."""
    p, h = _check_point(phi)
    u, du, _ = _load_partials(p, h, prob.q)
    grad1 = (prob.a0 + prob.b0 / (2.0 * math.sqrt(u))) * du
    slope, _ = _comm_shape_partials(p)
    grad2 = np.array([prob.tx_scale * prob.rate * prob.comm_time * slope,
                      prob.comp_energy])
    return grad1, grad2


def hessians(phi, prob: JcpProblem) -> tuple[np.ndarray, np.ndarray]:
    """
    Closed-form Hessians of Theta1 and Theta2. Theta2 is linear in H, so
    only its p_b diagonal entry is non-zero.
    """
    p, h = _check_point(phi)
    u, du, d2u = _load_partials(p, h, prob.q)
    hess1 = ((prob.a0 + prob.b0 / (2.0 * math.sqrt(u))) * d2u
             - prob.b0 / (4.0 * u ** 1.5) * np.outer(du, du))
    _, curvature = _comm_shape_partials(p)
    hess2 = np.zeros((2, 2))
    hess2[0, 0] = prob.tx_scale * prob.rate * prob.comm_time * curvature
    return hess1, hess2


def objective_gradient(phi, prob: JcpProblem) -> np.ndarray:
    grad1, grad2 = gradients(phi, prob)
    return theta2(phi, prob) * grad1 + theta1(phi, prob) * grad2


def surrogate(phi, phi_k, prob: JcpProblem) -> float:
    """Convex upper model Theta1(phi) Theta2(phi_k) + Theta1(phi_k) Theta2(phi)."""
    return (theta1(phi, prob) * theta2(phi_k, prob)
            + theta1(phi_k, prob) * theta2(phi, prob))


def surrogate_gradient(phi, phi_k, prob: JcpProblem) -> np.ndarray:
    grad1, grad2 = gradients(phi, prob)
    return theta2(phi_k, prob) * grad1 + theta1(phi_k, prob) * grad2


def surrogate_hessian(phi, phi_k, prob: JcpProblem) -> np.ndarray:
    hess1, hess2 = hessians(phi, prob)
    return theta2(phi_k, prob) * hess1 + theta1(phi_k, prob) * hess2
