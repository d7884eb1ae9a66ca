import inspect
from functools import wraps

import numpy as np

from core.errors import DomainError


def probability_argument(name: str, allow_one: bool = True):
    """
    Rejects calls whose probability argument ``name`` is outside (0, 1].

    With ``allow_one=False`` the open interval (0, 1) is enforced instead,
    which is what the closed forms singular at p_b = 1 need.
    """
    def decorator(func):
        signature = inspect.signature(func)

        @wraps(func)
        def wrapped(*args, **kwargs):
            bound = signature.bind(*args, **kwargs)
            value = float(bound.arguments[name])
            upper_ok = value <= 1.0 if allow_one else value < 1.0
            if not (value > 0.0 and upper_ok):
                interval = '(0, 1]' if allow_one else '(0, 1)'
                raise DomainError(
                    f'{func.__name__}: {name}={value} is outside {interval}.')
            return func(*args, **kwargs)
        return wrapped
    return decorator


def finite_result(error_cls, what: str):
    """
    Raises ``error_cls`` when the wrapped function returns non-finite values.
    """
    def decorator(func):
        @wraps(func)
        def wrapped(*args, **kwargs):
            result = func(*args, **kwargs)
            if not np.all(np.isfinite(result)):
                raise error_cls(f'{func.__name__}: non-finite {what}.')
            return result
        return wrapped
    return decorator
