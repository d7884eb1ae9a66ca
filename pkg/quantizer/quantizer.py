"""
Unbiased stochastic uniform quantization on a symmetric grid.

A ``b``-bit grid has ``2**b`` levels spread evenly over ``[-c, c]``. Each
coordinate is rounded to one of its two neighbouring levels at random so
that the expected output equals the input.
"""
import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from core.errors import (
    ClippingForbiddenError,
    DegenerateScaleError,
    InvalidSpecError,
)

MAX_BITS = 16

# Positions this close to a grid level are treated as lying on it.
_ON_GRID_TOLERANCE = 1e-9


class ScaleRegime(str, enum.Enum):
    SELF = 'self'
    COMMON = 'common'


@dataclass(frozen=True)
class QuantScale:
    half_range: float
    bits: int

    def __post_init__(self):
        if not self.half_range > 0:
            raise DegenerateScaleError(
                f'Half range must be positive, got {self.half_range}.')
        if not 1 <= self.bits <= MAX_BITS:
            raise InvalidSpecError(
                f'Bit width must lie in [1, {MAX_BITS}], got {self.bits}.')

    @property
    def levels(self) -> int:
        return 2 ** self.bits

    @property
    def step(self) -> float:
        return 2.0 * self.half_range / (self.levels - 1)


@dataclass(frozen=True)
class QuantizedUpdate:
    """
    Level indices sharing one scale. ``scale=None`` marks the reserved zero
    payload sent when every update of a round is zero.
    """
    indices: np.ndarray
    scale: Optional[QuantScale]
    bits: int

    def __post_init__(self):
        if self.scale is None:
            return
        if np.any(self.indices < 0) or np.any(self.indices >= self.scale.levels):
            raise InvalidSpecError(
                f'Level indices must lie in [0, {self.scale.levels - 1}].')

    @property
    def is_zero_payload(self) -> bool:
        return self.scale is None

    @property
    def dimension(self) -> int:
        return len(self.indices)


def zero_payload(dimension: int, bits: int) -> QuantizedUpdate:
    return QuantizedUpdate(indices=np.zeros(dimension, dtype=np.int64),
                           scale=None, bits=bits)


def fit_common_scale(updates: Sequence[np.ndarray], bits: int) -> QuantScale:
    """
    Picks the shared half range as the largest magnitude over all updates.

    Parameters
    ----------
    updates : Sequence[np.ndarray]
        Accumulated updates of every participating client.
    bits : int
        Bit width of the grid.

    Returns
    -------
    QuantScale
        Scale under which no coordinate of any update needs clipping.

    Raises
    ------
    DegenerateScaleError
        If the list is empty or every coordinate is zero.
    """
    if len(updates) == 0:
        raise DegenerateScaleError('No updates to fit a scale to.')
    half_range = max(float(np.max(np.abs(u))) if u.size else 0.0
                     for u in updates)
    if half_range == 0.0:
        raise DegenerateScaleError('All updates are zero.')
    return QuantScale(half_range=half_range, bits=bits)


def self_scale(x: np.ndarray, bits: int) -> QuantScale:
    return fit_common_scale([x], bits)


def _grid_position(x: np.ndarray, scale: QuantScale) -> np.ndarray:
    position = (x + scale.half_range) / scale.step
    nearest = np.rint(position)
    on_grid = np.abs(position - nearest) <= _ON_GRID_TOLERANCE
    return np.where(on_grid, nearest, position)


def quantize(x: np.ndarray, scale: QuantScale,
             rng: np.random.Generator) -> QuantizedUpdate:
    """
    Stochastically rounds every coordinate of ``x`` to the grid of ``scale``.

    Raises
    ------
    ClippingForbiddenError
        If any coordinate lies outside ``[-c, c]``.
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.abs(x) > scale.half_range):
        worst = float(np.max(np.abs(x)))
        raise ClippingForbiddenError(
            f'Coordinate magnitude {worst} exceeds half range '
            f'{scale.half_range}.')
    position = _grid_position(x, scale)
    lower = np.floor(position)
    up = rng.random(x.shape) < (position - lower)
    indices = np.clip(lower + up, 0, scale.levels - 1).astype(np.int64)
    return QuantizedUpdate(indices=indices, scale=scale, bits=scale.bits)


def dequantize(qu: QuantizedUpdate) -> np.ndarray:
    if qu.is_zero_payload:
        return np.zeros(qu.dimension)
    return -qu.scale.half_range + qu.indices * qu.scale.step


def rounding_variance(x: np.ndarray, scale: QuantScale) -> np.ndarray:
    """Per-coordinate variance of ``quantize`` at ``x``."""
    position = _grid_position(np.asarray(x, dtype=np.float64), scale)
    fraction = position - np.floor(position)
    return scale.step ** 2 * fraction * (1.0 - fraction)


@dataclass(frozen=True)
class QEstimate:
    q: float
    stderr: float
    n_trials: int


def estimate_q(bits: int, regime: ScaleRegime, n_trials: int,
               rng: np.random.Generator, dimension: int = 32,
               n_clients: int = 10) -> QEstimate:
    """
    Monte Carlo estimate of the quantization constant q.

    Each trial draws Gaussian updates, fixes the scale the way ``regime``
    prescribes (own max-abs, or max-abs over ``n_clients`` updates) and
    records the exact rounding variance of the first update divided by its
    squared norm. q is the mean ratio, reported with its standard error.
    """
    if n_trials < 10_000:
        raise InvalidSpecError(f'Need at least 10^4 trials, got {n_trials}.')
    regime = ScaleRegime(regime)
    group = n_clients if regime is ScaleRegime.COMMON else 1
    draws = rng.standard_normal((n_trials, group, dimension))
    x = draws[:, 0, :]
    half_range = np.abs(draws).max(axis=(1, 2))
    step = 2.0 * half_range / (2 ** bits - 1)

    position = (x + half_range[:, None]) / step[:, None]
    fraction = position - np.floor(position)
    variance = (step[:, None] ** 2 * fraction * (1.0 - fraction)).sum(axis=1)
    ratios = variance / (x ** 2).sum(axis=1)

    return QEstimate(q=float(ratios.mean()),
                     stderr=float(ratios.std(ddof=1) / np.sqrt(n_trials)),
                     n_trials=n_trials)
