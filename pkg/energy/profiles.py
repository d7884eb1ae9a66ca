"""
Named computation profiles.

The coefficients are calibrated to published per-iteration costs at a
1.3 GHz core / 1.866 GHz memory operating point: about 0.03 J per
iteration for a small convolutional learner and 130 ms at roughly 4 W
(about 0.5 J) for a residual network. They are not hardware measurements.
"""
from core.errors import InvalidSpecError
from energy.models import CompParams

_OPERATING_POINT = dict(f_core=1.3, v_core=1.0, f_mem=1.866)

PROFILES = {
    'small-learner': CompParams(
        static_power=1.2, mem_power_coef=0.3, core_power_coef=0.8,
        static_time=0.0027, mem_time_coef=0.0075, core_time_coef=0.0055,
        **_OPERATING_POINT),
    'large-learner': CompParams(
        static_power=1.5, mem_power_coef=0.6, core_power_coef=1.0,
        static_time=0.02, mem_time_coef=0.0933, core_time_coef=0.078,
        **_OPERATING_POINT),
}


def comp_profile(name: str) -> CompParams:
    try:
        return PROFILES[name]
    except KeyError:
        raise InvalidSpecError(
            f'Unknown computation profile {name!r}; known: '
            f'{", ".join(sorted(PROFILES))}.') from None
