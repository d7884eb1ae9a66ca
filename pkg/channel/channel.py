"""
Rayleigh-faded multi-access channel with threshold power control.

Every client inverts its channel for the gradient elements whose gain
clears the threshold and stays silent otherwise; the receiver sums what
arrives, adds noise and rescales by ``1 / (sqrt(rho) * p_b)``.
"""
import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core.decorators import probability_argument
from core.errors import DomainError, ShapeError
from energy.special import e1

# Relative slack when comparing a probability with the policy ceiling.
_CEILING_SLACK = 1e-12


class ChannelMode(str, enum.Enum):
    IDEAL = 'ideal'
    STATISTICAL = 'statistical'
    SYMBOL = 'symbol'


class ChannelConfig(BaseModel):
    """
    Channel statistics and transmitter constants.

    ``rate`` is the rate of the exponential channel gain |h|^2 (mean
    1/rate), ``noise_var`` the raw receiver noise variance, ``tx_scale``
    the inversion target rho and ``power_budget`` the average power P0.
    """
    model_config = ConfigDict(frozen=True, extra='forbid')

    rate: float = Field(default=1.0, gt=0)
    noise_var: float = Field(ge=0)
    tx_scale: float = Field(gt=0)
    power_budget: float = Field(default=0.2, gt=0)
    mode: ChannelMode = ChannelMode.STATISTICAL

    @property
    def effective_noise_var(self) -> float:
        return self.noise_var / self.tx_scale

    @property
    def snr_db(self) -> float:
        if self.noise_var == 0:
            return math.inf
        return 10.0 * math.log10(self.tx_scale / self.noise_var)

    @classmethod
    def from_operating_point(cls, snr_db: float = 15.0,
                             max_probability: float = 0.77,
                             power_budget: float = 0.2, rate: float = 1.0,
                             mode: ChannelMode = ChannelMode.STATISTICAL
                             ) -> 'ChannelConfig':
        """
        Back-solves rho from the policy ceiling and noise from the SNR.
        """
        if not 0.0 < max_probability < 1.0:
            raise DomainError(
                f'max_probability must lie in (0, 1), got {max_probability}.')
        tx_scale = -math.log(max_probability) * power_budget / rate
        return cls(rate=rate, tx_scale=tx_scale, power_budget=power_budget,
                   noise_var=tx_scale / 10.0 ** (snr_db / 10.0), mode=mode)


@dataclass(frozen=True)
class PowerPolicy:
    threshold: float
    probability: float

    def __post_init__(self):
        if self.threshold < 0:
            raise DomainError(f'Threshold must be >= 0, got {self.threshold}.')
        if not 0.0 < self.probability <= 1.0:
            raise DomainError(
                f'Transmission probability must lie in (0, 1], got '
                f'{self.probability}.')

    @classmethod
    def for_probability(cls, p_b: float, cfg: ChannelConfig) -> 'PowerPolicy':
        """
        Builds the policy for ``p_b``, enforcing the power-budget ceiling
        outside ideal mode.
        """
        if cfg.mode is ChannelMode.IDEAL:
            return cls(threshold=0.0, probability=1.0)
        _check_ceiling(p_b, cfg)
        return cls(threshold=threshold_from_probability(p_b, cfg.rate),
                   probability=p_b)

    @classmethod
    def for_threshold(cls, g_th: float, cfg: ChannelConfig) -> 'PowerPolicy':
        return cls(threshold=g_th,
                   probability=probability_from_threshold(g_th, cfg.rate))


def _check_ceiling(p_b: float, cfg: ChannelConfig) -> None:
    ceiling = max_probability(cfg)
    if p_b > ceiling * (1.0 + _CEILING_SLACK):
        raise DomainError(
            f'p_b={p_b} exceeds the power-budget ceiling {ceiling:.6f}.')


def probability_from_threshold(g_th: float, rate: float) -> float:
    if g_th < 0 or rate <= 0:
        raise DomainError(
            f'Need g_th >= 0 and rate > 0, got g_th={g_th}, rate={rate}.')
    return math.exp(-rate * g_th)


@probability_argument('p_b')
def threshold_from_probability(p_b: float, rate: float) -> float:
    return -math.log(p_b) / rate


def max_probability(cfg: ChannelConfig) -> float:
    return math.exp(-cfg.rate * cfg.tx_scale / cfg.power_budget)


def draw_gain(rate: float, rng: np.random.Generator, size=None):
    """Channel gain |h|^2 ~ Exponential(rate)."""
    return rng.exponential(1.0 / rate, size)


def draw_coefficient(rate: float, rng: np.random.Generator, size=None):
    """Circularly symmetric Gaussian h whose gain |h|^2 has rate ``rate``."""
    scale = math.sqrt(0.5 / rate)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def tx_scale(h, g_th: float, rho: float):
    """
    Truncated channel inversion: sqrt(rho) * conj(h) / |h|^2 above the
    threshold, zero below it (and for h = 0).
    """
    h = np.asarray(h, dtype=np.complex128)
    gain = np.abs(h) ** 2
    selected = (gain >= g_th) & (gain > 0)
    scaled = np.divide(math.sqrt(rho) * np.conj(h), gain,
                       out=np.zeros_like(h), where=selected)
    return scaled if scaled.ndim else complex(scaled)


@probability_argument('p_b', allow_one=False)
def policy_power(p_b: float, rho: float, rate: float) -> float:
    """Expected |p_k|^2 of the truncated inversion policy."""
    return rho * rate * e1(-math.log(p_b))


def _stack(inputs: Sequence[np.ndarray]) -> np.ndarray:
    if len(inputs) == 0:
        raise ShapeError('Aggregation needs at least one input.')
    stacked = np.asarray(np.stack([np.asarray(x, dtype=np.float64)
                                   for x in inputs]))
    if stacked.ndim != 2:
        raise ShapeError('Every input must be a flat vector.')
    return stacked


def exact_average(inputs: Sequence[np.ndarray]) -> np.ndarray:
    """Arithmetic mean, reduced in client-index order."""
    stacked = _stack(inputs)
    total = np.zeros(stacked.shape[1])
    for row in stacked:
        total += row
    return total / stacked.shape[0]


def _aggregate_block(block: np.ndarray, cfg: ChannelConfig,
                     policy: PowerPolicy,
                     rng: np.random.Generator) -> np.ndarray:
    n_clients, width = block.shape
    gains = draw_gain(cfg.rate, rng, (n_clients, width))
    selected = gains >= policy.threshold
    total = np.zeros(width)
    for k in range(n_clients):
        total += np.where(selected[k], block[k], 0.0)
    noise = rng.normal(0.0, math.sqrt(cfg.noise_var), width)
    return (total + noise / math.sqrt(cfg.tx_scale)) / (
        policy.probability * n_clients)


def air_aggregate(inputs: Sequence[np.ndarray], cfg: ChannelConfig,
                  policy: PowerPolicy, rng: np.random.Generator,
                  block_size: Optional[int] = None,
                  threads: int = 1) -> np.ndarray:
    """
    Over-the-air average of the client inputs.

    In ideal mode this is the exact mean. Otherwise every (client,
    coordinate) pair gets its own gain draw; pairs above the threshold are
    summed, receiver noise is added and the result is rescaled to an
    unbiased estimate of the mean. Symbol mode shares these statistics.

    Parameters
    ----------
    inputs : Sequence[np.ndarray]
        K vectors of equal dimension d.
    cfg : ChannelConfig
        Channel statistics.
    policy : PowerPolicy
        Threshold and the transmission probability it induces.
    rng : np.random.Generator
        Stream for gains and noise.
    block_size : Optional[int]
        When set, coordinates are processed in blocks of this width, each
        with its own child stream, so results do not depend on ``threads``.
    threads : int
        Worker threads for block processing.

    Returns
    -------
    np.ndarray
        Aggregate of dimension d.

    Raises
    ------
    ShapeError
        If ``inputs`` is empty or the vectors differ in length.
    DomainError
        If the policy transmits more often than the power budget allows.
    """
    stacked = _stack(inputs)
    if cfg.mode is ChannelMode.IDEAL:
        return exact_average(stacked)
    _check_ceiling(policy.probability, cfg)

    if block_size is None:
        return _aggregate_block(stacked, cfg, policy, rng)

    starts = list(range(0, stacked.shape[1], block_size))
    children = rng.spawn(len(starts))
    blocks = [stacked[:, s:s + block_size] for s in starts]
    logging.debug(f'Aggregating {len(blocks)} coordinate blocks '
                  f'on {threads} threads')
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        parts = list(pool.map(
            lambda pair: _aggregate_block(pair[0], cfg, policy, pair[1]),
            zip(blocks, children)))
    return np.concatenate(parts)


@probability_argument('p_b')
def air_variance(inputs: Sequence[np.ndarray], p_b: float,
                 cfg: ChannelConfig) -> np.ndarray:
    """Closed-form per-coordinate variance of ``air_aggregate``."""
    stacked = _stack(inputs)
    n_clients = stacked.shape[0]
    selection = (1.0 / p_b - 1.0) * (stacked ** 2).sum(axis=0) / n_clients ** 2
    return selection + cfg.effective_noise_var / (n_clients ** 2 * p_b ** 2)
