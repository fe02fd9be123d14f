"""Router geometry, traffic description and the power model.

Everything here is immutable once built; the bound evaluators and the
simulator only ever read these objects.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ADMISSIBILITY_TOL = 1e-9


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration values."""


@dataclass(frozen=True)
class RouterConfig:
    """An ``n x m x n`` load-balanced router with ``m_active`` middle nodes lit.

    Mesh links run at ``alpha / m`` (input side) and ``beta / m`` (output
    side) packets per slot; output links run at one packet per slot.
    """

    n: int
    m: int
    m_active: int | None = None
    alpha: float = 2.0
    beta: float = 2.0
    epsilon: float = 0.05

    def __post_init__(self):
        if self.m_active is None:
            object.__setattr__(self, "m_active", self.m)
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if self.m < 1:
            raise ConfigError(f"m must be >= 1, got {self.m}")
        if not 1 <= self.m_active <= self.m:
            raise ConfigError(f"m_active must lie in [1, m={self.m}], got {self.m_active}")
        if not self.alpha > 0 or not self.beta > 0:
            raise ConfigError(f"speedups must be positive, got alpha={self.alpha}, beta={self.beta}")
        if not 0 < self.epsilon <= 1:
            raise ConfigError(f"epsilon must lie in (0, 1], got {self.epsilon}")

    @property
    def input_link_rate(self) -> float:
        return self.alpha / self.m

    @property
    def output_link_rate(self) -> float:
        return self.beta / self.m

    def with_active(self, m_active: int) -> RouterConfig:
        return RouterConfig(self.n, self.m, m_active, self.alpha, self.beta, self.epsilon)


@dataclass(frozen=True)
class TrafficSpec:
    """Per-pair rates ``r_ik`` plus the burst allowances of the shaper.

    ``pair_bursts`` defaults to all zeros.  No cross-constraint between the
    per-pair bursts and the aggregate burst is imposed.
    """

    rates: np.ndarray
    pair_bursts: np.ndarray | None = None
    aggregate_burst: float = 0.0

    def __post_init__(self):
        rates = np.array(self.rates, dtype=float)
        if rates.ndim != 2 or rates.shape[0] != rates.shape[1]:
            raise ConfigError(f"rate matrix must be square, got shape {rates.shape}")
        if np.any(~np.isfinite(rates)) or np.any(rates < 0):
            raise ConfigError("rates must be finite and non-negative")
        if self.pair_bursts is None:
            bursts = np.zeros_like(rates)
        else:
            bursts = np.array(self.pair_bursts, dtype=float)
            if bursts.ndim == 0:
                bursts = np.full_like(rates, float(bursts))
        if bursts.shape != rates.shape:
            raise ConfigError(f"pair_bursts shape {bursts.shape} != rates shape {rates.shape}")
        if np.any(bursts < 0):
            raise ConfigError("pair bursts must be non-negative")
        if self.aggregate_burst < 0:
            raise ConfigError("aggregate burst must be non-negative")
        rates.setflags(write=False)
        bursts.setflags(write=False)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "pair_bursts", bursts)

    @classmethod
    def uniform(cls, n: int, load: float, pair_burst: float = 0.0, aggregate_burst: float = 0.0) -> TrafficSpec:
        """Every input and output carries ``load``, split evenly over pairs."""
        return cls(np.full((n, n), load / n), np.full((n, n), pair_burst), aggregate_burst)

    @property
    def n(self) -> int:
        return self.rates.shape[0]

    @property
    def input_loads(self) -> np.ndarray:
        # exact summation, so n copies of load / n add back up to load
        return np.array([math.fsum(row) for row in self.rates])

    @property
    def output_loads(self) -> np.ndarray:
        return np.array([math.fsum(col) for col in self.rates.T])


def max_load(spec: TrafficSpec) -> float:
    """Largest row or column sum of the rate matrix."""
    if spec.rates.size == 0:
        return 0.0
    return float(max(spec.input_loads.max(), spec.output_loads.max()))


@dataclass(frozen=True)
class Violation:
    side: str  # "input" or "output"
    index: int
    load: float
    limit: float


@dataclass(frozen=True)
class AdmissibilityReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self):
        if self.ok:
            return "admissible"
        return "; ".join(f"{v.side} {v.index}: load {v.load:.6g} > {v.limit:.6g}" for v in self.violations)


def validate_admissible(spec: TrafficSpec, cfg: RouterConfig) -> AdmissibilityReport:
    """Check ``r_i <= 1`` for every input and ``r_k <= 1 - eps`` for every output."""
    if spec.n != cfg.n:
        raise ConfigError(f"rate matrix is {spec.n}x{spec.n} but router has n={cfg.n}")
    violations = []
    for i, load in enumerate(spec.input_loads):
        if load > 1.0 + ADMISSIBILITY_TOL:
            violations.append(Violation("input", i, float(load), 1.0))
    out_limit = 1.0 - cfg.epsilon
    for k, load in enumerate(spec.output_loads):
        if load > out_limit + ADMISSIBILITY_TOL:
            violations.append(Violation("output", k, float(load), out_limit))
    return AdmissibilityReport(tuple(violations))


@dataclass(frozen=True)
class PowerModel:
    """Power drawn as a function of the number of active middle nodes.

    Either a table indexed by ``m_active`` (length ``m + 1``) or the affine
    form ``w0 + w1 * m_active``.  Units are arbitrary.
    """

    table: tuple[float, ...] | None = None
    w0: float = 0.0
    w1: float = 1.0
    m: int | None = field(default=None)

    def __post_init__(self):
        if self.table is not None:
            table = tuple(float(w) for w in self.table)
            if not table:
                raise ConfigError("power table must not be empty")
            if table[0] < 0:
                raise ConfigError("w(0) must be non-negative")
            if any(b < a for a, b in zip(table, table[1:])):
                raise ConfigError("power table must be non-decreasing")
            object.__setattr__(self, "table", table)
            if self.m is None:
                object.__setattr__(self, "m", len(table) - 1)
            elif len(table) != self.m + 1:
                raise ConfigError(f"power table needs m+1={self.m + 1} entries, got {len(table)}")
        else:
            if self.w0 < 0 or self.w1 < 0:
                raise ConfigError("affine power model needs w0 >= 0 and w1 >= 0")

    @classmethod
    def affine(cls, w0: float = 0.0, w1: float = 1.0, m: int | None = None) -> PowerModel:
        return cls(None, w0, w1, m)

    @classmethod
    def tabulated(cls, values: Sequence[float]) -> PowerModel:
        return cls(tuple(values))


def power(model: PowerModel, m_active: int) -> float:
    """``w(m_active)``."""
    if m_active < 0 or (model.m is not None and m_active > model.m):
        raise ConfigError(f"m_active={m_active} outside [0, {model.m}]")
    if model.table is not None:
        return model.table[m_active]
    return model.w0 + model.w1 * m_active


def snap_ceil(x: float, tol: float = 1e-9) -> int:
    """Ceiling that treats values within ``tol`` of an integer as that integer."""
    r = round(x)
    if abs(x - r) <= tol:
        return int(r)
    return math.ceil(x)
