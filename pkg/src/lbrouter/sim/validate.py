"""Compare simulated tails against the analytic bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..bounds import CanonicalParams, EvalPolicy, canonicalize, log_tail_values
from ..model import RouterConfig, TrafficSpec, max_load
from .core import TailStats, empirical_tail, run

# simulated quantity -> (bound kind, extra arguments)
MONITORED = {
    "q1": ("input_q", {}),
    "q2": ("middle_q", {}),
    "d1": ("input_d", {"union": False}),
    "d2": ("middle_d", {}),
    "e2e": ("e2e_d", {}),
}
MAX_THRESHOLD = 1 << 12


def shaper_burst(spec: TrafficSpec, epsilon: float) -> float:
    """Burst ``s`` such that every input and output sees at most ``s + rbar * L`` packets in ``L`` slots.

    The simulator's buckets let a pair through at most ``sigma_ik + 1 +
    r_ik L`` packets per window, an input ``sigma + 1 + L`` and an output
    ``sigma + 1 + (1 - eps) L``; the aggregate is the smaller of the port
    bucket and the sum over its pairs.
    """
    rbar = max_load(spec)
    sigma = float(spec.aggregate_burst)
    pair = np.asarray(spec.pair_bursts) + 1.0
    sides = [
        (sigma + 1.0, 1.0, pair.sum(axis=1), spec.input_loads),
        (sigma + 1.0, 1.0 - epsilon, pair.sum(axis=0), spec.output_loads),
    ]
    worst = 0.0
    for a, b, cs, ds in sides:
        for c, d in zip(cs, ds):
            worst = max(worst, _peak_excess(a, b, float(c), float(d), rbar))
    return worst


def _peak_excess(a, b, c, d, rbar):
    # sup over L >= 0 of min(a + b L, c + d L) - rbar L, with d <= rbar <= b
    best = min(a, c)
    if b > d and c > a:
        L = (c - a) / (b - d)
        best = max(best, a + (b - rbar) * L)
    elif c > a and b == d:
        best = max(best, a)
    return best


def sim_params(cfg: RouterConfig, spec: TrafficSpec, reading: str = "theorem") -> CanonicalParams:
    """Canonical bound parameters matching what the simulator actually lets through."""
    return canonicalize(cfg, max_load(spec), shaper_burst(spec, cfg.epsilon), reading)


@dataclass(frozen=True)
class Check:
    quantity: str
    threshold: float
    bound: float
    empirical: float
    std_error: float
    samples: int
    z: float

    @property
    def passed(self) -> bool:
        return self.empirical <= self.bound + self.z * self.std_error


@dataclass
class DominationReport:
    params: CanonicalParams
    checks: list = field(default_factory=list)

    @property
    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    @property
    def ok(self) -> bool:
        return not self.failures

    def for_quantity(self, quantity: str) -> list:
        return [c for c in self.checks if c.quantity == quantity]

    def summary(self) -> str:
        lines = []
        for q in MONITORED:
            rows = self.for_quantity(q)
            bad = sum(not c.passed for c in rows)
            lines.append(f"{q}: {len(rows)} thresholds with bound < 1, {bad} failed")
        return "\n".join(lines)


def dominate(
    stats: TailStats,
    params: CanonicalParams,
    policy: EvalPolicy = EvalPolicy(),
    *,
    z: float = 3.0,
    quantities=tuple(MONITORED),
    scale: float = 1.0,
) -> DominationReport:
    """Check ``empirical <= bound + z * SE`` wherever the bound is below 1.

    Thresholds run over the integers from 0 until past both the largest
    sample and the first threshold with a non-trivial bound.  ``scale``
    multiplies every bound; values below 1 make a deliberately wrong bound,
    which is how the checker itself is tested.
    """
    report = DominationReport(params)
    for q in quantities:
        kind, extra = MONITORED[q]
        top = stats.maximum(q) + 2
        while True:
            x = np.arange(top, dtype=float)
            raw = log_tail_values(kind, x, params, policy, **extra) + math.log(scale)
            if np.any(raw < 0) or top >= MAX_THRESHOLD:
                break
            top *= 2
        curve = empirical_tail(stats, q, x)
        n = int(curve.counts[0])
        p = curve.probabilities
        se = np.sqrt(p * (1 - p) / n)
        bound = np.exp(np.minimum(raw, 0.0))
        for xi, b, e, s in zip(x, bound, p, se):
            if b < 1:
                report.checks.append(Check(q, float(xi), float(b), float(e), float(s), n, z))
    return report


def validate(
    cfg: RouterConfig,
    spec: TrafficSpec,
    seed: int,
    horizon: int,
    warmup: int | None = None,
    policy: EvalPolicy = EvalPolicy(),
    z: float = 3.0,
) -> tuple[TailStats, DominationReport]:
    stats = run(cfg, spec, seed, horizon, warmup)
    return stats, dominate(stats, sim_params(cfg, spec), policy, z=z)
