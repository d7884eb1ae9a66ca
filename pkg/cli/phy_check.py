"""
Monte Carlo self-checks of the physical layer: aggregation statistics,
noise-free symbol-path exactness, policy power and the E1 bound.
"""
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from channel.channel import (
    ChannelConfig,
    ChannelMode,
    PowerPolicy,
    air_aggregate,
    air_variance,
    draw_gain,
    threshold_from_probability,
)
from core.rng import RngStreams
from energy.models import comm_power
from energy.special import e1, e1_upper_bound
from modem.modem import ModemLink, adc_for
from quantizer.quantizer import QuantizedUpdate, QuantScale, dequantize

# Largest standardized deviation of the coordinate-averaged aggregate error
# that still passes.
MEAN_Z_LIMIT = 3.0
VARIANCE_TOLERANCE = 0.05
POWER_TOLERANCE = 0.02


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    limit: float
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def check_aggregation(cfg: ChannelConfig, p_b: float, n_clients: int,
                      dimension: int, trials: int,
                      rng: np.random.Generator) -> list[CheckResult]:
    """Mean and variance of ``air_aggregate`` against their closed forms."""
    cfg = cfg.model_copy(update={'mode': ChannelMode.STATISTICAL})
    policy = PowerPolicy.for_probability(p_b, cfg)
    inputs = rng.normal(size=(n_clients, dimension))
    tiled = np.tile(inputs, (1, trials))
    draws = air_aggregate(list(tiled), cfg, policy, rng).reshape(trials, dimension)

    errors = (draws - inputs.mean(axis=0)).mean(axis=1)
    z = float(abs(errors.mean()) / (errors.std(ddof=1) / math.sqrt(trials)))
    expected = air_variance(list(inputs), p_b, cfg)
    rel = float(np.max(np.abs(draws.var(axis=0, ddof=1) / expected - 1.0)))
    return [
        CheckResult(f'aggregate_mean_z[p_b={p_b}]', z, MEAN_Z_LIMIT, z <= MEAN_Z_LIMIT),
        CheckResult(f'aggregate_variance_rel[p_b={p_b}]', rel, VARIANCE_TOLERANCE,
                    rel <= VARIANCE_TOLERANCE),
    ]


def check_modem_exact(cfg: ChannelConfig, n_clients: int, bits: int,
                      rng: np.random.Generator) -> CheckResult:
    """Noise-free symbol path over every combination of client levels."""
    levels = 2 ** bits
    indices = np.indices((levels,) * n_clients).reshape(n_clients, -1)
    scale = QuantScale(half_range=1.0, bits=bits)
    payloads = [QuantizedUpdate(indices=row, scale=scale, bits=bits) for row in indices]
    quiet = cfg.model_copy(update={'noise_var': 0.0, 'mode': ChannelMode.SYMBOL})
    result = ModemLink(quiet).aggregate(payloads, PowerPolicy(0.0, 1.0), rng)
    expected = np.mean([dequantize(p) for p in payloads], axis=0)
    adc = adc_for(n_clients, bits, quiet.tx_scale, 0.0)
    quantum = adc.step * scale.step / (math.sqrt(quiet.tx_scale) * n_clients)
    error = float(np.max(np.abs(result.aggregate - expected)))
    return CheckResult(f'modem_noise_free_error[K={n_clients},b={bits}]',
                       error, quantum, error <= quantum)


def check_policy_power(cfg: ChannelConfig, p_b: float, draws: int,
                       rng: np.random.Generator) -> CheckResult:
    """p_b times the mean |p_k|^2 of simulated inversion against the E1 closed form."""
    gains = draw_gain(cfg.rate, rng, draws)
    threshold = threshold_from_probability(p_b, cfg.rate)
    safe = np.where(gains >= threshold, gains, 1.0)
    power = np.where(gains >= threshold, cfg.tx_scale / safe, 0.0)
    simulated = p_b * float(power.mean())
    exact = comm_power(p_b, cfg.tx_scale, cfg.rate)
    rel = abs(simulated / exact - 1.0)
    return CheckResult(f'policy_power_rel[p_b={p_b}]', rel, POWER_TOLERANCE,
                       rel <= POWER_TOLERANCE)


def check_e1_bound(points: int = 100) -> CheckResult:
    grid = np.logspace(-2, 1, points)
    gap = float(np.min(e1_upper_bound(grid) - e1(grid)))
    return CheckResult('e1_bound_min_gap', gap, 0.0, gap > 0.0)


def run_phy_check(cfg: ChannelConfig, streams: RngStreams, n_clients: int,
                  dimension: int, trials: int, p_values, modem_clients: int,
                  modem_bits: int, power_draws: int) -> list[CheckResult]:
    results = []
    for index, p_b in enumerate(p_values):
        results.extend(check_aggregation(cfg, p_b, n_clients, dimension, trials,
                                         streams.generator('phy-aggregate', index)))
        if p_b < 1.0:
            results.append(check_policy_power(cfg, p_b, power_draws,
                                              streams.generator('phy-power', index)))
    results.append(check_modem_exact(cfg, modem_clients, modem_bits,
                                     streams.generator('phy-modem')))
    results.append(check_e1_bound())
    for result in results:
        level = logging.INFO if result.passed else logging.WARNING
        logging.log(level, f'{result.name}: {result.value:.6g} '
                           f'(limit {result.limit:.6g}) '
                           f'{"ok" if result.passed else "FAILED"}')
    return results
