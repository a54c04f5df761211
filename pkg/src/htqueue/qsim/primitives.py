"""Unit-mean renewal primitives with a prescribed squared coefficient of variation.

Every distribution is parameterized so that its mean is exactly 1 and its
C^2 equals the target; the n-th system applies the rates as time scalings
(interarrival IA / lambda^n, service requirement ST / mu^n).
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from ..errors import UnsupportedPrimitives

EXPONENTIAL, ERLANG, HYPEREXP2, GAMMA, LOGNORMAL, UNIFORM = range(6)
CODES = {"exponential": EXPONENTIAL, "erlang": ERLANG, "hyperexp2": HYPEREXP2,
         "gamma": GAMMA, "lognormal": LOGNORMAL, "uniform": UNIFORM}


def dist_params(name: str, C2: float) -> tuple[int, float, float]:
    """(code, p1, p2) for the unit-mean distribution ``name`` with SCV C2."""
    if name not in CODES:
        raise UnsupportedPrimitives(f"unknown distribution {name!r}")
    if not (C2 > 0 and math.isfinite(C2)):
        raise UnsupportedPrimitives(f"C2 must lie in (0, inf), got {C2}")
    code = CODES[name]
    if code == EXPONENTIAL:
        if abs(C2 - 1.0) > 1e-12:
            raise UnsupportedPrimitives(f"exponential has C2 = 1, requested {C2}")
        return code, 1.0, 0.0
    if code == ERLANG:
        k = round(1.0 / C2)
        if k < 1 or abs(k * C2 - 1.0) > 1e-9:
            raise UnsupportedPrimitives(f"Erlang needs C2 = 1/k for integer k, got {C2}")
        return code, float(k), 1.0 / k
    if code == HYPEREXP2:
        if C2 < 1.0:
            raise UnsupportedPrimitives(f"hyperexponential needs C2 >= 1, got {C2}")
        # balanced means: p/r1 = (1-p)/r2 = 1/2
        p = 0.5 * (1.0 + math.sqrt((C2 - 1.0) / (C2 + 1.0)))
        return code, p, 0.0
    if code == GAMMA:
        return code, 1.0 / C2, C2
    if code == LOGNORMAL:
        s2 = math.log1p(C2)
        return code, -0.5 * s2, math.sqrt(s2)
    # uniform on [1-w, 1+w]
    w = math.sqrt(3.0 * C2)
    if w > 1.0:
        raise UnsupportedPrimitives(f"uniform on a nonnegative support needs C2 <= 1/3, got {C2}")
    return code, w, 0.0


def dist_moments(code: int, p1: float, p2: float) -> tuple[float, float]:
    """Analytic (mean, C2) of the parameterized distribution."""
    if code == EXPONENTIAL:
        return 1.0 / p1, 1.0
    if code in (ERLANG, GAMMA):
        mean = p1 * p2
        return mean, p1 * p2 * p2 / mean**2
    if code == HYPEREXP2:
        p = p1
        r1, r2 = 2.0 * p, 2.0 * (1.0 - p)
        mean = p / r1 + (1.0 - p) / r2
        m2 = 2.0 * p / r1**2 + 2.0 * (1.0 - p) / r2**2
        return mean, m2 / mean**2 - 1.0
    if code == LOGNORMAL:
        mean = math.exp(p1 + 0.5 * p2 * p2)
        return mean, math.expm1(p2 * p2)
    if code == UNIFORM:
        return 1.0, p1 * p1 / 3.0
    raise UnsupportedPrimitives(f"unknown distribution code {code}")


@njit(cache=True)
def draw(gen, code, p1, p2):
    if code == EXPONENTIAL:
        return gen.exponential()
    if code == ERLANG or code == GAMMA:
        return gen.gamma(p1, p2)
    if code == HYPEREXP2:
        if gen.random() < p1:
            return gen.exponential() / (2.0 * p1)
        return gen.exponential() / (2.0 * (1.0 - p1))
    if code == LOGNORMAL:
        return gen.lognormal(p1, p2)
    return 1.0 - p1 + 2.0 * p1 * gen.random()


def primitive_table(names, C2s) -> np.ndarray:
    """Array of shape (I, 3): code, p1, p2 per class."""
    return np.array([dist_params(nm, float(c)) for nm, c in zip(names, C2s)], dtype=float)
