import numpy as np
import scipy.special as sc

from core.errors import DomainError


def e1(x):
    """
    Exponential integral E1(x) = integral from x to infinity of exp(-t)/t.

    Accepts scalars or arrays; raises ``DomainError`` for x <= 0, where
    E1 is either singular or complex.
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(~(x > 0)):
        raise DomainError(f'E1 is defined for x > 0, got {x.min() if x.size else x}.')
    value = sc.exp1(x)
    return float(value) if value.ndim == 0 else value


def e1_upper_bound(x):
    """Elementary bound exp(-x) * ln(1 + 1/x), strictly above E1(x)."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(~(x > 0)):
        raise DomainError('The E1 bound is defined for x > 0.')
    bound = np.exp(-x) * np.log1p(1.0 / x)
    return float(bound) if bound.ndim == 0 else bound
