"""Energy against delay as the number of active middle nodes varies."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .bounds import EvalPolicy, OverloadError, canonicalize, log_end_to_end, log_middle_queue
from .model import ConfigError, PowerModel, RouterConfig, power, snap_ceil

SEARCH_CAP = 10**6


class NoFeasibleConfiguration(ValueError):
    pass


def min_active_nodes(rbar: float, m: int) -> int:
    """Fewest middle nodes that keep the mesh from overloading: ``ceil(rbar * m)``."""
    if rbar < 0:
        raise ConfigError(f"load must be non-negative, got {rbar}")
    if rbar > 1 + 1e-9:
        raise ConfigError(f"load {rbar} > 1 is not admissible")
    return snap_ceil(rbar * m)


def first_feasible(cfg: RouterConfig, rbar: float) -> int:
    """Smallest ``m_active`` with both effective speedups above 1."""
    need = rbar * cfg.m / min(cfg.alpha, cfg.beta)
    # strict inequality: an exact integer boundary is still overloaded
    r = round(need)
    m_min = r + 1 if abs(need - r) <= 1e-9 else math.ceil(need)
    return max(1, m_min)


@dataclass(frozen=True)
class FrontierPoint:
    m_active: int
    power: float
    feasible: bool
    delay_bound: int | None = None
    queue_bound: int | None = None

    @property
    def meets_cap(self) -> bool:
        return self.delay_bound is not None


def smallest_meeting(log_tail: Callable[[float], float], log_target: float, cap: int = SEARCH_CAP) -> int | None:
    """Smallest integer ``x`` in ``[0, cap]`` with ``log_tail(x) <= log_target``.

    ``log_tail`` must be non-increasing.  Doubles an upper bracket first, so
    cheap answers stay cheap.
    """
    if log_tail(0) <= log_target:
        return 0
    lo, hi = 0, 1
    while log_tail(hi) > log_target:
        lo = hi
        if hi >= cap:
            return None
        hi = min(2 * hi, cap)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if log_tail(mid) <= log_target:
            hi = mid
        else:
            lo = mid
    return hi


def frontier_point(
    cfg: RouterConfig, rbar: float, model: PowerModel, target: float, policy: EvalPolicy, sigma: float = 0.0
) -> FrontierPoint:
    w = power(model, cfg.m_active)
    try:
        p = canonicalize(cfg, rbar, sigma)
    except OverloadError:
        return FrontierPoint(cfg.m_active, w, False)
    lt = math.log(target)
    delay = smallest_meeting(lambda d: float(np.logaddexp(*log_end_to_end(d, p, policy))), lt)
    queue = smallest_meeting(lambda q: log_middle_queue(q, p, policy), lt)
    return FrontierPoint(cfg.m_active, w, True, delay, queue)


def frontier(
    cfg: RouterConfig,
    rbar: float,
    model: PowerModel,
    target: float,
    policy: EvalPolicy = EvalPolicy(),
    *,
    sigma: float = 0.0,
    m_values: Sequence[int] | None = None,
) -> list[FrontierPoint]:
    """Power and bound at target probability for each candidate ``m_active``.

    By default the sweep starts at the last overloaded count (shown as an
    infeasible row) and runs to ``m``.
    """
    if not 0 < target < 1:
        raise ValueError(f"target probability must lie in (0, 1), got {target}")
    if not 0 < rbar <= 1 + 1e-9:
        raise ConfigError(f"load must lie in (0, 1], got {rbar}")
    if m_values is None:
        start = max(1, min(first_feasible(cfg, rbar) - 1, min_active_nodes(rbar, cfg.m)))
        m_values = range(start, cfg.m + 1)
    points = [frontier_point(cfg.with_active(int(k)), rbar, model, target, policy, sigma) for k in sorted(m_values)]
    if not any(pt.feasible for pt in points):
        raise NoFeasibleConfiguration(f"no feasible number of active middle nodes at load {rbar}")
    return points


@dataclass(frozen=True)
class LookupRow:
    rbar: float
    m_active: int | None
    adjusted: bool
    delay_bound: int | None

    @property
    def met(self) -> bool:
        return self.m_active is not None


def lookup_table(
    cfg: RouterConfig,
    model: PowerModel,
    loads: Sequence[float],
    target: float,
    budget: float = math.inf,
    policy: EvalPolicy = EvalPolicy(),
    *,
    sigma: float = 0.0,
) -> list[LookupRow]:
    """Recommended ``m_active`` per load: the fewest nodes meeting ``budget`` slots at ``target``.

    The search starts at ``min_active_nodes`` and is raised, with
    ``adjusted`` set, when that count would leave a speedup at or below 1.
    Rows where even all ``m`` nodes miss the budget come back with
    ``m_active=None``.
    """
    rows = []
    for rbar in loads:
        if not 0 < rbar <= 1 + 1e-9:
            raise ConfigError(f"loads must lie in (0, 1], got {rbar}")
        base = min_active_nodes(rbar, cfg.m)
        start = max(base, first_feasible(cfg, rbar))
        pick = None
        delay = None
        if start <= cfg.m:
            if math.isinf(budget):
                pick = start
            else:
                pick, delay = _fewest_meeting(cfg, rbar, start, budget, target, policy, sigma)
        rows.append(LookupRow(float(rbar), pick, start > base, delay))
    return rows


def _fewest_meeting(cfg, rbar, start, budget, target, policy, sigma):
    # delay bounds fall as nodes are added, so bisect on m_active
    def delay_at(k):
        pt = frontier_point(cfg.with_active(k), rbar, PowerModel.affine(m=cfg.m), target, policy, sigma)
        return pt.delay_bound

    def ok(d):
        return d is not None and d <= budget

    top = delay_at(cfg.m)
    if not ok(top):
        return None, None
    lo, hi, best = start - 1, cfg.m, top
    while hi - lo > 1:
        mid = (lo + hi) // 2
        d = delay_at(mid)
        if ok(d):
            hi, best = mid, d
        else:
            lo = mid
    return hi, best
