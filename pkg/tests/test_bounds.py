import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from lbrouter._series import TruncationCapWarning
from lbrouter.bounds import (
    CURVE_KINDS,
    CanonicalParams,
    ClosedFormUnavailable,
    EvalPolicy,
    NoTrafficError,
    OverloadError,
    canonicalize,
    end_to_end_delay_tail,
    input_delay_tail,
    input_queue_tail,
    log_end_to_end,
    log_input_queue,
    log_middle_queue,
    log_middle_queue_corrected,
    log_output_queue,
    middle_delay_tail,
    middle_queue_tail,
    middle_queue_tail_corrected,
    output_delay_tail,
    output_queue_tail,
    tail_curve,
)
from lbrouter.model import RouterConfig

CLOSED = EvalPolicy(form="loose", path="closed")
LOOSE = EvalPolicy(form="loose")
TIGHT = EvalPolicy()

# natural-log values from the brute-force oracles in tests/oracles.py, frozen
MIDDLE_LOOSE_Q40 = 6.115279584254445
MIDDLE_TIGHT = {5: 13.682406554995907, 40: -26.887167224716304, 100: -100.53098526116001}
MIDDLE_LOOSE = {5: 17.93301508987618, 40: 6.115279584254445, 100: -13.88943560693041}
CORRECTED = {1: 18.368639308107504, 10: 13.732753628618475, 40: -4.657571330910479, 50: -10.801302466539957}
# n=4, m=8, alpha=beta=3, eps=0.1, q=20 (the raw bound exceeds 1 here)
OUTPUT_Q20 = 5.423277585321843
# mpmath, 30 digits
INPUT_CLOSED_A2 = 1.60158534102592059700072571766e-4
INPUT_CLOSED_A15 = 8.45668531787145355075650120382e-2
INPUT_DELAY_2400 = 9.91416323749214398714639070017e-6


def fig2(speedup=2.0, n=20, m=80):
    return CanonicalParams(m, speedup, speedup, n)


def test_canonicalize_examples():
    p = canonicalize(RouterConfig(20, 80, 80, 2, 2), 1.0)
    assert (p.m_eff, p.alpha_eff, p.beta_eff, p.time_scale) == (80, 2.0, 2.0, 1.0)
    p = canonicalize(RouterConfig(20, 80, 60, 2, 3), 0.75)
    assert p.m_eff == 60
    assert p.alpha_eff == pytest.approx(2.0, rel=1e-15)
    assert p.beta_eff == pytest.approx(3.0, rel=1e-15)
    with pytest.raises(OverloadError) as err:
        canonicalize(RouterConfig(20, 80, 40, 2, 2), 1.0)
    assert err.value.params is None or err.value.params.alpha_eff == pytest.approx(1.0)


def test_canonicalize_display_reading_and_errors():
    p = canonicalize(RouterConfig(20, 80, 60, 2, 3), 0.75, reading="display")
    assert p.m_eff == 80
    with pytest.raises(NoTrafficError):
        canonicalize(RouterConfig(2, 2), 0.0)
    with pytest.raises(ValueError):
        canonicalize(RouterConfig(2, 2), 1.0, reading="other")


def test_burst_is_not_rescaled():
    assert canonicalize(RouterConfig(4, 8), 0.5, sigma=3.0).sigma == 3.0


@given(st.integers(1, 100), st.floats(1.01, 8), st.floats(1.01, 8))
def test_canonicalize_identity(m, a, b):
    p = canonicalize(RouterConfig(3, m, m, a, b), 1.0)
    assert (p.alpha_eff, p.beta_eff, p.m_eff) == (a, b, m)


# -- input stage


def test_input_closed_examples():
    assert input_queue_tail(30, CanonicalParams(1, 2.0, 2.0, 1), CLOSED) == pytest.approx(INPUT_CLOSED_A2, rel=1e-12)
    assert input_queue_tail(30, CanonicalParams(1, 1.5, 1.5, 1), CLOSED) == pytest.approx(INPUT_CLOSED_A15, rel=1e-12)


def test_input_closed_against_direct_geometric_sum():
    # sum over window lengths u of exp(-u (alpha-1) / (3m) - q/3)
    m, a, q = 5, 2.5, 17.0
    u = np.arange(200_000)
    direct = math.fsum(np.exp(-u * (a - 1) / (3 * m) - q / 3))
    assert input_queue_tail(q, CanonicalParams(m, a, a, 1), CLOSED) == pytest.approx(direct, rel=1e-10)


def test_input_zero_threshold():
    for pol in (CLOSED, LOOSE, TIGHT):
        assert input_queue_tail(0, fig2(), pol) == 1.0
        assert input_delay_tail(0, fig2(), pol) == 1.0


def test_input_delay_examples():
    p1 = CanonicalParams(1, 2.0, 2.0, 1)
    assert input_delay_tail(15, p1, CLOSED) == pytest.approx(input_queue_tail(30, p1, CLOSED), rel=1e-14)
    assert input_delay_tail(2400, fig2(), CLOSED) == pytest.approx(INPUT_DELAY_2400, rel=1e-12)


@pytest.mark.parametrize("tight", [True, False])
@pytest.mark.parametrize("q", [0.5, 3.0, 12.0, 40.0])
def test_input_numeric_matches_oracle(q, tight):
    pol = TIGHT if tight else LOOSE
    got = log_input_queue(q, CanonicalParams(8, 1.7, 1.7, 4, sigma=2.0), pol)
    assert got == pytest.approx(oracles.log_input(q, 8, 1.7, 2.0, tight), abs=1e-10)


@given(st.floats(0.0, 60.0), st.floats(0.0, 60.0))
def test_input_closed_is_log_linear_for_alpha_at_least_2(q1, q2):
    p = CanonicalParams(12, 2.4, 2.4, 3)
    d = log_input_queue(q2, p, CLOSED) - log_input_queue(q1, p, CLOSED)
    assert d == pytest.approx(-(q2 - q1) / 3, abs=1e-9)


# -- middle stage


def test_middle_loose_numeric_matches_oracle_at_40():
    assert log_middle_queue(40, fig2(), LOOSE) == pytest.approx(MIDDLE_LOOSE_Q40, abs=1e-9)


def test_middle_closed_dominates_numeric_at_40():
    assert log_middle_queue(40, fig2(), CLOSED) >= log_middle_queue(40, fig2(), LOOSE)


@pytest.mark.parametrize("q", [1.0, 7.5, 25.0])
@pytest.mark.parametrize("tight", [True, False])
def test_middle_numeric_small_system_matches_oracle(q, tight):
    pol = TIGHT if tight else LOOSE
    got = log_middle_queue(q, CanonicalParams(8, 1.6, 1.8, 4, sigma=1.0), pol)
    want = oracles.log_middle(q, 4, 8, 1.6, 1.8, sigma=1.0, tight=tight)
    assert got == pytest.approx(want, abs=1e-9)


def test_middle_zero_threshold_and_delay_identity():
    assert middle_queue_tail(0, fig2(), TIGHT) == 1.0
    assert middle_delay_tail(0, fig2(), TIGHT) == 1.0
    p = fig2()
    assert middle_delay_tail(1600, p, LOOSE) == pytest.approx(middle_queue_tail(40, p, LOOSE), rel=1e-14)
    assert middle_delay_tail(3200, p, LOOSE) <= middle_delay_tail(1600, p, LOOSE)


def test_closed_middle_rejects_large_speedup():
    with pytest.raises(ClosedFormUnavailable):
        log_middle_queue(10, fig2(3.0), CLOSED)


def test_closed_path_needs_loose_form():
    with pytest.raises(ValueError):
        EvalPolicy(form="tight", path="closed")


def test_overloaded_params_are_refused():
    with pytest.raises(OverloadError):
        middle_queue_tail(5, CanonicalParams(8, 1.0, 2.0, 4), TIGHT)


small_params = st.builds(
    CanonicalParams,
    m_eff=st.integers(2, 10),
    alpha_eff=st.floats(1.3, 3.0),
    beta_eff=st.floats(1.3, 2.0),
    n=st.integers(1, 6),
)


@settings(max_examples=25)
@given(small_params, st.floats(0.5, 40))
def test_closed_dominates_numeric_property(p, q):
    assert log_middle_queue(q, p, CLOSED) >= log_middle_queue(q, p, LOOSE) - 1e-9
    assert log_input_queue(q, p, CLOSED) >= log_input_queue(q, p, LOOSE) - 1e-9


@settings(max_examples=25)
@given(small_params, st.floats(0.5, 40))
def test_tight_below_loose_property(p, q):
    assert log_middle_queue(q, p, TIGHT) <= log_middle_queue(q, p, LOOSE) + 1e-9
    assert log_input_queue(q, p, TIGHT) <= log_input_queue(q, p, LOOSE) + 1e-9


@settings(max_examples=20)
@given(small_params, st.floats(0.0, 30), st.floats(0.1, 10))
def test_middle_non_increasing(p, q, step):
    assert log_middle_queue(q + step, p, TIGHT) <= log_middle_queue(q, p, TIGHT) + 1e-9


# -- end to end


def test_e2e_is_sum_of_parts_from_oracles():
    p = CanonicalParams(8, 2.0, 2.0, 4)
    d = 60
    f = oracles.log_input(d * 2.0 / 16, 8, 2.0)
    g = oracles.log_middle(d * 2.0 / 16, 4, 8, 2.0, 2.0)
    assert end_to_end_delay_tail(d, p, TIGHT) == pytest.approx(min(1.0, math.exp(f) + math.exp(g)), rel=1e-9)


def test_e2e_total_is_sum_of_parts_below_clamp():
    # both parts well below 1, so the clamp is inactive
    p = CanonicalParams(8, 2.0, 2.0, 4)
    f, g = log_end_to_end(215, p, TIGHT)
    total = end_to_end_delay_tail(215, p, TIGHT)
    assert total == pytest.approx(math.exp(f) + math.exp(g), rel=1e-12)
    assert 1e-12 < total < 1e-6


def test_e2e_zero_delay():
    assert end_to_end_delay_tail(0, fig2(), TIGHT) == 1.0


@settings(max_examples=15)
@given(small_params, st.floats(0, 200), st.floats(1, 50))
def test_e2e_parts_non_increasing(p, d, step):
    f1, g1 = log_end_to_end(d, p, TIGHT)
    f2, g2 = log_end_to_end(d + step, p, TIGHT)
    assert f2 <= f1 + 1e-9 and g2 <= g1 + 1e-9
    assert end_to_end_delay_tail(d, p, TIGHT) <= math.exp(f1) + math.exp(g1) + 1e-15


# -- dependence-corrected


def test_corrected_zero_and_oracle():
    p = fig2()
    assert middle_queue_tail_corrected(0, p, TIGHT) == 1.0
    assert log_middle_queue_corrected(40, p, TIGHT) == pytest.approx(CORRECTED[40], abs=1e-9)


def test_corrected_non_increasing_over_grid():
    p = fig2()
    vals = [log_middle_queue_corrected(q, p, TIGHT) for q in range(10, 81, 10)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_corrected_rejects_small_n():
    with pytest.raises(OverloadError):
        log_middle_queue_corrected(5, CanonicalParams(8, 2.0, 1.2, 6), TIGHT)


def test_corrected_has_no_closed_form():
    with pytest.raises(ClosedFormUnavailable):
        log_middle_queue_corrected(5, fig2(), CLOSED)


# -- output stage


def test_output_examples():
    p = CanonicalParams(8, 3.0, 3.0, 4)
    assert output_queue_tail(0, p, 0.1) == 1.0
    assert output_delay_tail(0, p, 0.1) == 1.0
    assert output_delay_tail(7, p, 1.0) == 1.0
    assert output_queue_tail(400, p, 0.1) < 1e-100


def test_output_matches_oracle():
    p = CanonicalParams(8, 3.0, 3.0, 4)
    assert log_output_queue(20, p, 0.1, 0.0, TIGHT) == pytest.approx(OUTPUT_Q20, abs=1e-9)


def test_output_delay_monotone():
    p = CanonicalParams(8, 3.0, 3.0, 4)
    vals = [output_delay_tail(d, p, 0.1) for d in range(0, 400, 25)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))


# -- curves


def test_tail_curve_zero_threshold():
    c = tail_curve("middle_q", [0], fig2(), TIGHT)
    assert c.thresholds.tolist() == [0.0] and c.probabilities.tolist() == [1.0]


@pytest.mark.parametrize("kind", [k for k in CURVE_KINDS if not k.startswith("output")])
def test_every_curve_kind_non_increasing(kind):
    c = tail_curve(kind, np.arange(0, 60, 3.0), CanonicalParams(8, 2.0, 2.0, 20), TIGHT)
    assert np.all(np.diff(c.probabilities) <= 1e-15)
    assert np.all((c.probabilities >= 0) & (c.probabilities <= 1))


def test_output_curve_kinds_need_epsilon():
    with pytest.raises(ValueError):
        tail_curve("output_q", [1.0], CanonicalParams(8, 3.0, 3.0, 4), TIGHT)
    c = tail_curve("output_d", [0.0, 50.0, 100.0], CanonicalParams(8, 3.0, 3.0, 4), TIGHT, epsilon=0.1)
    assert c.probabilities[0] == 1.0


def test_unknown_kind_and_bad_thresholds():
    with pytest.raises(ValueError):
        tail_curve("nope", [1.0], fig2(), TIGHT)
    with pytest.raises(ValueError):
        tail_curve("input_q", [2.0, 1.0], fig2(), TIGHT)


def test_raw_log_kept_below_clamp():
    c = tail_curve("middle_q", [1.0, 100.0], fig2(), TIGHT)
    assert c.log10_raw[0] > 0  # the raw union bound exceeds 1 at q = 1
    assert c.log10_probabilities[0] == 0.0
    assert c.log10_raw[1] == pytest.approx(MIDDLE_TIGHT[100] / math.log(10), abs=1e-9)


def test_truncation_cap_warns():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        log_input_queue(5.0, CanonicalParams(80, 1.05, 1.05, 1), EvalPolicy(max_terms=64))
    assert any(issubclass(w.category, TruncationCapWarning) for w in caught)
