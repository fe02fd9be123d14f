import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lbrouter.bounds import EvalPolicy, canonicalize
from lbrouter.model import ConfigError, PowerModel, RouterConfig
from lbrouter.tradeoff import (
    NoFeasibleConfiguration,
    first_feasible,
    frontier,
    lookup_table,
    min_active_nodes,
    smallest_meeting,
)

CLOSED = EvalPolicy(form="loose", path="closed")
BIG = RouterConfig(20, 80)


def test_min_active_nodes_examples():
    assert min_active_nodes(0.5, 80) == 40
    assert min_active_nodes(0.3, 10) == 3  # 0.3 * 10 is 3.0000000000000004
    assert min_active_nodes(0.31, 10) == 4
    assert min_active_nodes(1.0, 80) == 80
    with pytest.raises(ConfigError):
        min_active_nodes(1.2, 80)


def test_first_feasible_is_strict():
    # alpha = 2 at full load: m_active = 40 gives alpha_eff exactly 1
    assert first_feasible(BIG, 1.0) == 41
    assert first_feasible(BIG, 0.5) == 21
    assert first_feasible(RouterConfig(4, 8, alpha=2.0, beta=3.0), 0.9) == 4


def test_smallest_meeting():
    assert smallest_meeting(lambda x: -x, -37.0) == 37
    assert smallest_meeting(lambda x: -x, 1.0) == 0
    assert smallest_meeting(lambda x: -0.5 * x, -10.2) == 21
    assert smallest_meeting(lambda x: 0.0, -1.0, cap=1000) is None


def test_closed_frontier_full_load():
    pts = frontier(BIG, 1.0, PowerModel.affine(m=80), 1e-6, CLOSED)
    assert [p.m_active for p in pts] == list(range(40, 81))
    assert not pts[0].feasible and pts[0].delay_bound is None
    assert all(p.feasible for p in pts[1:])
    queues = [p.queue_bound for p in pts[1:]]
    assert all(b <= a for a, b in zip(queues, queues[1:]))
    # near alpha_eff = 1 the delay lies beyond the search cap and is reported as missing
    capped = [p.m_active for p in pts[1:] if not p.meets_cap]
    assert capped == list(range(41, 41 + len(capped)))
    delays = [p.delay_bound for p in pts if p.meets_cap]
    assert all(b <= a for a, b in zip(delays, delays[1:]))
    assert pts[-1].delay_bound == 8152 and pts[-1].queue_bound == 102


def test_frontier_half_load_starts_at_first_feasible():
    pts = frontier(BIG, 0.5, PowerModel.affine(m=80), 1e-6, CLOSED, m_values=range(19, 26))
    assert [p.feasible for p in pts] == [False, False] + [True] * 5
    assert pts[2].m_active == 21


def test_affine_power_strictly_increasing_along_frontier():
    pts = frontier(BIG, 1.0, PowerModel.affine(5.0, 2.0, 80), 1e-6, CLOSED, m_values=[50, 60, 70, 80])
    powers = [p.power for p in pts]
    assert powers == [105.0, 125.0, 145.0, 165.0]


def test_frontier_point_meets_target():
    pts = frontier(BIG, 1.0, PowerModel.affine(m=80), 1e-6, CLOSED, m_values=[60])
    pt = pts[0]
    p = canonicalize(BIG.with_active(60), 1.0)
    from lbrouter.bounds import end_to_end_delay_tail

    assert end_to_end_delay_tail(pt.delay_bound, p, CLOSED) <= 1e-6
    assert end_to_end_delay_tail(pt.delay_bound - 1, p, CLOSED) > 1e-6


def test_frontier_errors():
    with pytest.raises(NoFeasibleConfiguration):
        frontier(BIG, 1.0, PowerModel.affine(m=80), 1e-6, CLOSED, m_values=[10, 20, 40])
    with pytest.raises(ValueError):
        frontier(BIG, 1.0, PowerModel.affine(m=80), 1.5, CLOSED)
    with pytest.raises(ConfigError):
        frontier(BIG, 0.0, PowerModel.affine(m=80), 1e-6, CLOSED)


def test_numeric_frontier_small_router():
    cfg = RouterConfig(4, 16)
    pts = frontier(cfg, 0.5, PowerModel.affine(m=16), 1e-3, EvalPolicy())
    feas = [p for p in pts if p.feasible]
    assert feas[0].m_active == first_feasible(cfg, 0.5) == 5
    delays = [p.delay_bound for p in feas]
    assert all(b <= a for a, b in zip(delays, delays[1:]))


def test_lookup_unbounded_budget_is_min_active():
    loads = [0.25, 0.5, 0.75, 1.0]
    rows = lookup_table(RouterConfig(4, 16), PowerModel.affine(m=16), loads, 1e-3)
    assert [r.m_active for r in rows] == [4, 8, 12, 16]
    assert not any(r.adjusted for r in rows)
    # unit speedup: ceil(rbar m) nodes leave alpha_eff at exactly 1, so one more is needed
    rows = lookup_table(RouterConfig(4, 16, alpha=1.0, beta=1.0), PowerModel.affine(m=16), loads, 1e-3)
    assert [r.m_active for r in rows] == [5, 9, 13, None]
    assert all(r.adjusted for r in rows)


def test_lookup_with_budget_is_monotone_in_load():
    cfg = RouterConfig(4, 16, alpha=3.0, beta=3.0)
    rows = lookup_table(cfg, PowerModel.affine(m=16), [0.25, 0.5, 0.75, 1.0], 1e-3, budget=200, policy=EvalPolicy(form="loose"))
    picks = [r.m_active for r in rows if r.met]
    assert picks == sorted(picks)
    for r in rows:
        if r.met:
            assert r.delay_bound <= 200
            assert r.m_active >= min_active_nodes(r.rbar, 16)


def test_lookup_fig_loads_keep_speedup_above_one():
    loads = [k / 80 for k in range(20, 81, 10)]
    rows = lookup_table(BIG, PowerModel.affine(m=80), loads, 1e-6)
    assert all(r.met and 20 <= r.m_active <= 80 for r in rows)
    for r in rows:
        if r.met:
            p = canonicalize(BIG.with_active(r.m_active), r.rbar)
            assert p.alpha_eff > 1 and p.beta_eff > 1


def test_lookup_rejects_bad_load():
    with pytest.raises(ConfigError):
        lookup_table(BIG, PowerModel.affine(m=80), [0.0], 1e-6)


@given(st.floats(0.01, 1.0), st.integers(1, 200))
def test_min_active_covers_load(rbar, m):
    k = min_active_nodes(rbar, m)
    assert k >= rbar * m - 1e-9 and k - 1 < rbar * m + 1e-9


@given(st.floats(0.05, 1.0), st.integers(2, 100), st.floats(1.05, 4.0))
def test_first_feasible_boundary(rbar, m, a):
    cfg = RouterConfig(2, m, alpha=a, beta=a)
    k = first_feasible(cfg, rbar)
    assert a * k / (m * rbar) > 1
    if k > 1:
        assert a * (k - 1) / (m * rbar) <= 1 + 1e-9
    assert not math.isnan(k)
