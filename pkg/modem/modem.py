"""
Symbol-level path of the multi-bit over-the-air aggregation.

Two quantized gradient elements ride one square QAM symbol: the I axis
carries the first level index and the Q axis the second, each as a
zero-centred MASK amplitude with unit spacing. Symbols of all clients
superpose on the channel, the receiver samples them with a high-resolution
ADC and rescales the digital samples into the aggregate.
"""
import logging
import math
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from channel.channel import ChannelConfig, PowerPolicy, draw_gain
from core.errors import InvalidSpecError, ShapeError
from quantizer.quantizer import QuantizedUpdate, QuantScale

DEFAULT_ADC_BITS = 16


def max_amplitude(bits: int) -> float:
    return (2 ** bits - 1) / 2.0


def amplitude(indices, bits: int):
    """Zero-centred MASK amplitude of a level index."""
    return np.asarray(indices, dtype=np.float64) - max_amplitude(bits)


@dataclass(frozen=True)
class IqSymbol:
    """A vector of QAM symbols of one transmitter, one entry per symbol."""
    i: np.ndarray
    q: np.ndarray
    bits: int

    def __post_init__(self):
        if self.i.shape != self.q.shape:
            raise ShapeError('I and Q amplitudes differ in shape.')
        for axis in (self.i, self.q):
            offset = axis + max_amplitude(self.bits)
            if np.any(offset < 0) or np.any(offset > 2 ** self.bits - 1) \
                    or np.any(offset != np.rint(offset)):
                raise InvalidSpecError(
                    f'Amplitudes are off the {2 ** self.bits}-level MASK grid.')

    def __len__(self):
        return len(self.i)

    @property
    def constellation_size(self) -> int:
        return 4 ** self.bits


@dataclass(frozen=True)
class ReceivedSample:
    i: np.ndarray
    q: np.ndarray


class AdcConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    resolution: int = Field(default=DEFAULT_ADC_BITS, ge=2, le=32)
    reference: float = Field(gt=0)

    @property
    def mid_code(self) -> int:
        return 2 ** (self.resolution - 1)

    @property
    def top_code(self) -> int:
        return 2 ** self.resolution - 1

    @property
    def step(self) -> float:
        return self.reference / (self.mid_code - 1)


@dataclass(frozen=True)
class AdcCodes:
    i: np.ndarray
    q: np.ndarray
    saturated: np.ndarray

    @property
    def any_saturated(self) -> bool:
        return bool(np.any(self.saturated))


@dataclass(frozen=True)
class DecodedAggregate:
    i: np.ndarray
    q: np.ndarray
    saturated: np.ndarray


def adc_for(n_clients: int, bits: int, rho: float, noise_std: float,
            resolution: int = DEFAULT_ADC_BITS) -> AdcConfig:
    """
    Sizes the ADC for K superposed symbols: the reference is the largest
    noise-free superposed amplitude plus a 4-sigma noise margin.
    """
    needed = bits + math.ceil(math.log2(max(n_clients, 1)))
    if resolution < needed:
        raise InvalidSpecError(
            f'A {resolution}-bit ADC cannot resolve {n_clients} superposed '
            f'{bits}-bit symbols (needs {needed} bits).')
    reference = n_clients * max_amplitude(bits) * math.sqrt(rho) + 4.0 * noise_std
    return AdcConfig(resolution=resolution, reference=reference)


def map_to_symbol(idx_a, idx_b, bits: int) -> IqSymbol:
    """
    Maps two level-index vectors onto the I and Q axes of QAM symbols.

    Raises
    ------
    InvalidSpecError
        If an index lies outside ``[0, 2**bits - 1]``.
    """
    idx_a = np.atleast_1d(np.asarray(idx_a))
    idx_b = np.atleast_1d(np.asarray(idx_b))
    for indices in (idx_a, idx_b):
        if np.any(indices < 0) or np.any(indices > 2 ** bits - 1):
            raise InvalidSpecError(
                f'Level index outside [0, {2 ** bits - 1}].')
    return IqSymbol(i=amplitude(idx_a, bits), q=amplitude(idx_b, bits),
                    bits=bits)


def superpose(symbols: Sequence[IqSymbol], noise_std: float,
              rng: np.random.Generator,
              weights: Optional[Sequence[np.ndarray]] = None) -> ReceivedSample:
    """
    Sums the symbols of all transmitters and adds Gaussian noise per axis.

    ``weights`` holds, per transmitter, the amplitude each symbol arrives
    with (sqrt(rho) when the transmitter inverted its channel, zero when
    it stayed silent); without weights every symbol arrives as sent.
    """
    if len(symbols) == 0:
        raise ShapeError('Nothing to superpose.')
    if len({s.bits for s in symbols}) != 1:
        raise InvalidSpecError('All symbols must share one modulation order.')
    total_i = np.zeros(len(symbols[0]))
    total_q = np.zeros(len(symbols[0]))
    for k, symbol in enumerate(symbols):
        factor = 1.0 if weights is None else weights[k]
        total_i += factor * symbol.i
        total_q += factor * symbol.q
    return ReceivedSample(
        i=total_i + rng.normal(0.0, noise_std, total_i.shape),
        q=total_q + rng.normal(0.0, noise_std, total_q.shape),
    )


def _sample_axis(values: np.ndarray, adc: AdcConfig):
    saturated = np.abs(values) > adc.reference
    codes = np.clip(np.rint(values / adc.step) + adc.mid_code, 0, adc.top_code)
    return codes.astype(np.int64), saturated


def adc_sample(sample: ReceivedSample, adc: AdcConfig) -> AdcCodes:
    """Mid-tread uniform sampling of both axes; overrange is clamped and flagged."""
    codes_i, sat_i = _sample_axis(np.asarray(sample.i), adc)
    codes_q, sat_q = _sample_axis(np.asarray(sample.q), adc)
    saturated = sat_i | sat_q
    if np.any(saturated):
        logging.warning(f'ADC saturated on {int(saturated.sum())} samples')
    return AdcCodes(i=codes_i, q=codes_q, saturated=saturated)


def code_to_amplitude(codes: np.ndarray, adc: AdcConfig) -> np.ndarray:
    return (np.asarray(codes) - adc.mid_code) * adc.step


def decode_aggregate(codes: AdcCodes, n_clients: int, p_b: float,
                     scale: QuantScale, adc: AdcConfig,
                     rho: float) -> DecodedAggregate:
    """
    Digital Rx scaling of ADC codes into the averaged gradient values.

    The amplitude-to-value map of the zero-centred grid is linear with the
    quantizer step as slope, so the mean of dequantized values is recovered
    by scaling the superposed amplitude with step / (sqrt(rho) * p_b * K).
    """
    if not 0.0 < p_b <= 1.0:
        raise InvalidSpecError(f'p_b must lie in (0, 1], got {p_b}.')
    factor = scale.step / (math.sqrt(rho) * p_b * n_clients)
    return DecodedAggregate(
        i=code_to_amplitude(codes.i, adc) * factor,
        q=code_to_amplitude(codes.q, adc) * factor,
        saturated=codes.saturated,
    )


@dataclass(frozen=True)
class LinkResult:
    aggregate: np.ndarray
    received: Optional[ReceivedSample]
    saturated: int


class ModemLink:
    """
    End-to-end symbol path: pair, map, gate by channel gain, superpose,
    sample and decode. Odd dimensions are padded with one dummy element
    that is dropped after decoding.
    """

    def __init__(self, cfg: ChannelConfig, adc_resolution: int = DEFAULT_ADC_BITS):
        self.cfg = cfg
        self.adc_resolution = adc_resolution

    def aggregate(self, payloads: Sequence[QuantizedUpdate], policy: PowerPolicy,
                  rng: np.random.Generator) -> LinkResult:
        if len(payloads) == 0:
            raise ShapeError('Aggregation needs at least one payload.')
        dimension = payloads[0].dimension
        if any(p.dimension != dimension for p in payloads):
            raise ShapeError('Payloads differ in dimension.')
        if payloads[0].is_zero_payload:
            return LinkResult(np.zeros(dimension), None, 0)
        scale = payloads[0].scale
        if any(p.scale != scale for p in payloads):
            raise InvalidSpecError('Superposed payloads need one common scale.')

        n_clients = len(payloads)
        n_symbols = (dimension + 1) // 2
        rho = self.cfg.tx_scale
        symbols = []
        for payload in payloads:
            indices = np.zeros(2 * n_symbols, dtype=np.int64)
            indices[:dimension] = payload.indices
            symbols.append(map_to_symbol(indices[0::2], indices[1::2], scale.bits))

        gains = draw_gain(self.cfg.rate, rng, (n_clients, n_symbols))
        weights = np.where(gains >= policy.threshold, math.sqrt(rho), 0.0)
        noise_std = math.sqrt(self.cfg.noise_var) / scale.step
        received = superpose(symbols, noise_std, rng, weights)

        adc = adc_for(n_clients, scale.bits, rho, noise_std, self.adc_resolution)
        decoded = decode_aggregate(adc_sample(received, adc), n_clients,
                                   policy.probability, scale, adc, rho)
        values = np.empty(2 * n_symbols)
        values[0::2] = decoded.i
        values[1::2] = decoded.q
        return LinkResult(aggregate=values[:dimension], received=received,
                          saturated=int(decoded.saturated.sum()))


def constellation_rows(round_index: int,
                       received: ReceivedSample) -> Iterator[tuple]:
    for coord, (i, q) in enumerate(zip(received.i, received.q)):
        yield round_index, coord, float(i), float(q)
