"""Per-round spectrum and energy cost of each transport scheme."""
import math

from channel.channel import ChannelMode, max_probability
from energy.models import (
    BITS_PER_RESOURCE_ELEMENT,
    CommParams,
    CompParams,
    comp_energy,
    orthogonal_comm_energy,
    round_energy,
)
from fl.config import FlConfig, Scheme

FULL_PRECISION_BITS = 32


def bits_per_value(scheme: Scheme, bits: int) -> int:
    if scheme is Scheme.FEDAVG:
        return FULL_PRECISION_BITS
    return bits


def comm_units(scheme: Scheme, n_clients: int, dimension: int, bits: int) -> float:
    """
    Communication resource units of one round.

    One unit is the ``ceil(d/2)`` resource elements an over-the-air round
    occupies. Baselines send every client's payload on its own 64QAM link.
    """
    if scheme is Scheme.ESOAFL:
        return 1.0
    elements = dimension * bits_per_value(scheme, bits) / BITS_PER_RESOURCE_ELEMENT
    return n_clients * elements / math.ceil(dimension / 2)


class RoundAccountant:
    """Constant per-round cost of one configured run."""

    def __init__(self, cfg: FlConfig, comm: CommParams, cp: CompParams):
        self.cfg = cfg
        self.comm = comm
        self.cp = cp
        self.units = comm_units(cfg.scheme, cfg.n_clients, comm.dimension, cfg.bits)
        self.energy_j = self._round_energy()

    def _round_energy(self) -> float:
        cfg = self.cfg
        if cfg.scheme is not Scheme.ESOAFL:
            upload = orthogonal_comm_energy(
                bits_per_value(cfg.scheme, cfg.bits), self.comm)
            return upload + cfg.local_iterations * comp_energy(self.cp)
        p_b = cfg.p_b
        if cfg.channel.mode is ChannelMode.IDEAL:
            p_b = min(p_b, max_probability(cfg.channel))
        return round_energy(p_b, cfg.local_iterations, self.comm, self.cp)
