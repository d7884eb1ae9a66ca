"""
Closed-form per-device energy of one training round.

Communication energy is the average transmit power of the truncated channel
inversion policy times the time needed to send the model over ``M_s``
parallel subcarriers; computation energy is the runtime power of the
accelerator times its execution time per local iteration.
"""
import math
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.decorators import finite_result, probability_argument
from core.errors import DomainError
from energy.special import e1

# Default LTE-like resource block: 12 subcarriers over 180 kHz.
RESOURCE_BLOCK_HZ = 180e3
SUBCARRIERS = 12
MAX_TX_POWER_W = 0.2
# 64QAM with code rate 0.8525 carries 5.115 information bits per resource element.
BITS_PER_RESOURCE_ELEMENT = 5.115


class CommParams(BaseModel):
    """
    Communication constants. ``symbol_time`` defaults to
    ``parallel_symbols / bandwidth_hz`` (one OFDM symbol of the block).
    """
    model_config = ConfigDict(frozen=True, extra='forbid')

    tx_scale: float = Field(gt=0)
    rate: float = Field(default=1.0, gt=0)
    bandwidth_hz: float = Field(default=RESOURCE_BLOCK_HZ, gt=0)
    parallel_symbols: int = Field(default=SUBCARRIERS, ge=1)
    dimension: int = Field(ge=0)
    symbol_time: Optional[float] = Field(default=None, gt=0)

    @property
    def effective_symbol_time(self) -> float:
        if self.symbol_time is not None:
            return self.symbol_time
        return self.parallel_symbols / self.bandwidth_hz


class CompParams(BaseModel):
    """Fitted GPU power and runtime coefficients at one DVFS operating point (GHz)."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    static_power: float = Field(ge=0)
    mem_power_coef: float = Field(ge=0)
    core_power_coef: float = Field(ge=0)
    static_time: float = Field(ge=0)
    mem_time_coef: float = Field(ge=0)
    core_time_coef: float = Field(ge=0)
    f_core: float = Field(gt=0)
    v_core: float = Field(gt=0)
    f_mem: float = Field(gt=0)

    @model_validator(mode='after')
    def _positive_at_operating_point(self):
        if comp_power(self) <= 0 or comp_time(self) <= 0:
            raise ValueError('power and time must be positive at the operating point')
        return self


@probability_argument('p_b', allow_one=False)
@finite_result(DomainError, 'communication power')
def comm_power(p_b: float, rho: float, rate: float, exact: bool = True) -> float:
    """
    Average transmit power per device for transmission probability ``p_b``.

    The exact form uses E1; the approximation replaces E1 with its
    elementary upper bound and is what the JCP objective optimizes.
    """
    if exact:
        return p_b * rho * rate * e1(-math.log(p_b))
    return rho * rate * p_b ** 2 * math.log(1.0 - 1.0 / math.log(p_b))


def comm_time(dimension: int, parallel_symbols: int, symbol_time: float) -> float:
    """Two elements ride each symbol; odd dimensions are padded."""
    n_symbols = math.ceil(dimension / 2)
    return n_symbols * symbol_time / parallel_symbols


def _comm_time(comm: CommParams) -> float:
    return comm_time(comm.dimension, comm.parallel_symbols,
                     comm.effective_symbol_time)


def comm_energy(p_b: float, comm: CommParams) -> float:
    if comm.dimension == 0:
        return 0.0
    return comm_power(p_b, comm.tx_scale, comm.rate) * _comm_time(comm)


def orthogonal_comm_energy(bits_per_value: float, comm: CommParams,
                           power: float = MAX_TX_POWER_W) -> float:
    """
    Energy of sending the model over a dedicated 64QAM link at fixed power,
    the transport of the FedAvg and FedPAQ baselines.
    """
    elements = comm.dimension * bits_per_value / BITS_PER_RESOURCE_ELEMENT
    return power * elements * comm.effective_symbol_time / comm.parallel_symbols


def comp_power(cp: CompParams) -> float:
    return (cp.static_power + cp.mem_power_coef * cp.f_mem
            + cp.core_power_coef * cp.v_core ** 2 * cp.f_core)


def comp_time(cp: CompParams) -> float:
    return cp.static_time + cp.mem_time_coef / cp.f_mem + cp.core_time_coef / cp.f_core


def comp_energy(cp: CompParams) -> float:
    return comp_power(cp) * comp_time(cp)


def round_energy(p_b: float, local_iterations: int, comm: CommParams,
                 cp: CompParams) -> float:
    """Energy of one round: one upload plus ``local_iterations`` SGD steps."""
    if local_iterations < 0:
        raise DomainError(
            f'Local iterations must be >= 0, got {local_iterations}.')
    return comm_energy(p_b, comm) + local_iterations * comp_energy(cp)
