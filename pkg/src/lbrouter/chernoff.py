"""Chernoff tail bounds for sums of independent indicators, in log space.

Two forms are provided.  With ``mu`` an upper bound on the mean and
``delta > 0`` the excess factor, ``Pr[X >= (1 + delta) mu]`` is at most

* tight: ``(e^delta / (1 + delta)^(1 + delta))^mu``
* loose: ``exp(-min(delta^2, delta) mu / 3)``

The tight form never exceeds the loose one.  The vectorised helpers take
the threshold ``x = (1 + delta) mu`` rather than ``delta`` because the
bound derivations produce thresholds directly, and because ``mu = 0`` with
a positive threshold is a legitimate limit there.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


class ChernoffDomainError(ValueError):
    pass


class ChernoffForm(str, Enum):
    TIGHT = "tight"
    LOOSE = "loose"


@dataclass(frozen=True)
class ChernoffParams:
    mu: float
    delta: float

    def __post_init__(self):
        if not self.mu >= 0:
            raise ChernoffDomainError(f"mu must be >= 0, got {self.mu}")
        if not self.delta > -1:
            raise ChernoffDomainError(f"delta must be > -1, got {self.delta}")


def _check(p: ChernoffParams) -> None:
    if not p.delta > 0:
        raise ChernoffDomainError(f"Chernoff bound needs delta > 0, got {p.delta}")


def chernoff_tight(p: ChernoffParams) -> float:
    _check(p)
    d = p.delta
    return math.exp(p.mu * (d - (1.0 + d) * math.log1p(d)))


def chernoff_loose(p: ChernoffParams) -> float:
    _check(p)
    d = p.delta
    return math.exp(-min(d * d, d) * p.mu / 3.0)


def log_tight(mu, x):
    """Log of the tight bound on ``Pr[X >= x]`` given mean bound ``mu``.

    Returns 0 (probability 1) wherever ``x <= mu``; ``-inf`` where ``mu = 0``
    and ``x > 0``.
    """
    mu = np.asarray(mu, dtype=float)
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        val = (x - mu) - x * np.log(x / mu)
    val = np.where(mu > 0, val, -np.inf)
    return np.where(x > mu, val, 0.0)


def log_loose(mu, x):
    """Log of the loose bound on ``Pr[X >= x]``; same conventions as :func:`log_tight`."""
    mu = np.asarray(mu, dtype=float)
    x = np.asarray(x, dtype=float)
    excess = x - mu
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        # delta >= 1  <=>  x >= 2 mu; covers mu == 0 as well
        val = np.where(x >= 2.0 * mu, excess / -3.0, excess * excess / (-3.0 * mu))
    return np.where(excess > 0, val, 0.0)


def log_bound(form: ChernoffForm, mu, x):
    if ChernoffForm(form) is ChernoffForm.TIGHT:
        return log_tight(mu, x)
    return log_loose(mu, x)


def log_decay_rate(form: ChernoffForm, delta: float) -> float:
    """``-log(bound) / mu`` for a fixed excess factor, i.e. decay per unit mean."""
    if delta <= 0:
        return 0.0
    if ChernoffForm(form) is ChernoffForm.TIGHT:
        return (1.0 + delta) * math.log1p(delta) - delta
    return min(delta * delta, delta) / 3.0


def geom_sum(z: float, a: int = 0) -> float:
    """``sum_{i >= a} z**i``."""
    _check_ratio(z)
    return z**a / (1.0 - z)


def geom_weighted_sum(z: float, a: int = 0) -> float:
    """``sum_{i >= a} i * z**i``."""
    _check_ratio(z)
    return z * (a * z ** (a - 1) - (a - 1) * z**a) / (1.0 - z) ** 2


def _check_ratio(z: float) -> None:
    if z >= 1:
        raise ChernoffDomainError(f"geometric series diverges for z={z}")
    if z <= 0:
        raise ChernoffDomainError(f"geometric ratio must be positive, got {z}")
