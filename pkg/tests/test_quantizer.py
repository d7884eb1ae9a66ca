import numpy as np
import pytest

from core.errors import ClippingForbiddenError, DegenerateScaleError, InvalidSpecError
from quantizer.quantizer import (
    QuantScale,
    ScaleRegime,
    dequantize,
    estimate_q,
    fit_common_scale,
    quantize,
    rounding_variance,
    self_scale,
    zero_payload,
)

TRIALS = 100_000


class TestScale:

    def test_common_scale_is_max_abs_over_all_updates(self):
        scale = fit_common_scale([np.array([0.5, -2.0]), np.array([1.5, 0.1])], 3)
        assert scale.half_range == 2.0
        assert scale.levels == 8
        assert scale.step == pytest.approx(4.0 / 7.0)

    def test_all_zero_updates_have_no_scale(self):
        with pytest.raises(DegenerateScaleError):
            fit_common_scale([np.zeros(3), np.zeros(3)], 4)

    def test_bit_width_bounds(self):
        with pytest.raises(InvalidSpecError):
            QuantScale(half_range=1.0, bits=0)
        with pytest.raises(InvalidSpecError):
            QuantScale(half_range=1.0, bits=17)


class TestQuantize:

    def test_indices_stay_on_the_grid(self, rng):
        x = rng.normal(size=1000)
        qu = quantize(x, self_scale(x, 3), rng)
        assert qu.indices.min() >= 0 and qu.indices.max() <= 7

    def test_clipping_is_forbidden(self, rng):
        with pytest.raises(ClippingForbiddenError):
            quantize(np.array([1.5]), QuantScale(half_range=1.0, bits=2), rng)

    def test_grid_points_are_reproduced_exactly(self, rng):
        scale = QuantScale(half_range=1.5, bits=2)
        levels = np.array([-1.5, -0.5, 0.5, 1.5])
        np.testing.assert_array_equal(dequantize(quantize(levels, scale, rng)), levels)

    def test_zero_payload_dequantizes_to_zeros(self):
        np.testing.assert_array_equal(dequantize(zero_payload(5, 4)), np.zeros(5))

    @pytest.mark.parametrize('bits', [1, 2, 4, 8])
    def test_unbiased(self, bits, rng):
        x = rng.normal(size=16)
        scale = self_scale(x, bits)
        draws = dequantize(quantize(np.tile(x, TRIALS), scale, rng)).reshape(TRIALS, 16)
        errors = (draws - x).mean(axis=1)
        stderr = errors.std(ddof=1) / np.sqrt(TRIALS)
        assert abs(errors.mean()) <= 3 * stderr

    @pytest.mark.parametrize('bits', [1, 4])
    def test_empirical_variance_matches_rounding_variance(self, bits, rng):
        x = rng.normal(size=16)
        scale = self_scale(x, bits)
        draws = dequantize(quantize(np.tile(x, TRIALS), scale, rng)).reshape(TRIALS, 16)
        expected = rounding_variance(x, scale).sum()
        assert draws.var(axis=0, ddof=1).sum() == pytest.approx(expected, rel=0.03)

    def test_midpoint_of_one_bit_grid_splits_evenly(self, rng):
        values = dequantize(quantize(np.zeros(TRIALS), QuantScale(half_range=1.0, bits=1), rng))
        assert set(np.unique(values)) == {-1.0, 1.0}
        stderr = np.sqrt(0.25 / TRIALS)
        assert abs(np.mean(values == 1.0) - 0.5) <= 3 * stderr


class TestQuantizerConstant:

    def test_q_decreases_with_bit_width(self, rng):
        estimates = [estimate_q(b, ScaleRegime.SELF, 10_000, rng).q for b in (1, 2, 4, 8)]
        assert all(a > b for a, b in zip(estimates, estimates[1:]))

    def test_common_scale_costs_more_than_self_scale(self):
        own = estimate_q(4, ScaleRegime.SELF, 10_000, np.random.default_rng(1))
        common = estimate_q(4, ScaleRegime.COMMON, 10_000, np.random.default_rng(1))
        assert common.q > own.q

    @pytest.mark.parametrize('bits', [1, 2, 4, 8])
    def test_squared_error_stays_within_q_of_the_squared_norm(self, bits):
        q = estimate_q(bits, ScaleRegime.SELF, 10_000, np.random.default_rng(3), dimension=16).q
        rng = np.random.default_rng(4)
        ratios = []
        for _ in range(5000):
            x = rng.standard_normal(16)
            error = dequantize(quantize(x, self_scale(x, bits), rng)) - x
            ratios.append(np.sum(error ** 2) / np.sum(x ** 2))
        assert np.mean(ratios) <= 1.05 * q

    def test_sixteen_bits_are_nearly_lossless(self, rng):
        assert estimate_q(16, ScaleRegime.SELF, 10_000, rng).q <= 1e-6

    def test_needs_enough_trials(self, rng):
        with pytest.raises(InvalidSpecError):
            estimate_q(4, ScaleRegime.SELF, 100, rng)
