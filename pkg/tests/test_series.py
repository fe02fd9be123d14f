import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lbrouter import _series
from lbrouter._series import TruncationCapWarning, flat_prefix, log_sum_blocks, sum_rows


def geometric_terms(rates):
    rates = np.asarray(rates, dtype=float)

    def terms(rows, pos):
        u = pos[:, None] + np.arange(_series.BLOCK)[None, :]
        return -rates[rows, None] * u

    return terms


@given(st.lists(st.floats(0.01, 3.0), min_size=1, max_size=6))
def test_sum_rows_geometric(rates):
    out, capped = sum_rows(geometric_terms(rates), len(rates), log_tol=math.log(1e-13), asym=-0.01, cap=10**7)
    want = [-math.log(-math.expm1(-r)) for r in rates]
    assert capped == 0
    np.testing.assert_allclose(out, want, rtol=0, atol=1e-11)


def test_sum_rows_weights_and_known_prefix():
    rates = np.array([0.5, 1.0])
    lw = np.array([math.log(3.0), -math.inf])
    out, _ = sum_rows(geometric_terms(rates), 2, log_tol=math.log(1e-14), asym=-0.5, cap=10**6, log_w=lw)
    assert out[1] == -math.inf
    assert math.exp(out[0]) == pytest.approx(3.0 / (1 - math.exp(-0.5)), rel=1e-12)


def test_sum_rows_first_terms_counted_as_one():
    # terms are 1 for u < 5 and then fall geometrically; skip the flat part
    def terms(rows, pos):
        u = pos[:, None] + np.arange(_series.BLOCK)[None, :]
        return np.where(u < 5, 0.0, -0.3 * (u - 4))

    out, _ = sum_rows(terms, 1, log_tol=math.log(1e-14), asym=-0.3, cap=10**6, first=[5])
    direct = 5 + math.fsum(math.exp(-0.3 * k) for k in range(1, 400))
    assert math.exp(out[0]) == pytest.approx(direct, rel=1e-12)


def test_sum_rows_reports_cap():
    out, capped = sum_rows(geometric_terms([1e-6]), 1, log_tol=math.log(1e-14), asym=-1e-6, cap=256)
    assert capped == 1
    assert np.isfinite(out[0])


@given(st.floats(0.0, 20.0), st.floats(0.05, 0.9), st.floats(0.0, 20.0), st.floats(1.0, 3.0))
def test_flat_prefix_counts_terms_below_mean(mu0, mu_step, x0, x_step):
    k = int(flat_prefix(np.array([mu0]), mu_step, np.array([x0]), x_step)[0])
    assert k >= 0
    # every counted term has threshold at or below the mean
    for u in range(k):
        assert x0 + u * x_step <= mu0 + u * mu_step + 1e-9


def test_log_sum_blocks_matches_direct_sum():
    def block(d, _floor):
        return -0.02 * d + np.log1p(d)

    got = log_sum_blocks(block, tol=1e-13, cap=10**6)
    d = np.arange(20000)
    want = math.log(math.fsum(np.exp(-0.02 * d) * (1 + d)))
    assert got == pytest.approx(want, abs=1e-11)


def test_log_sum_blocks_start_and_cap():
    got = log_sum_blocks(lambda d, _f: -0.5 * d, tol=1e-14, cap=10**6, start=10)
    assert got == pytest.approx(-5.0 - math.log(-math.expm1(-0.5)), abs=1e-12)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        log_sum_blocks(lambda d, _f: -1e-7 * d, tol=1e-14, cap=512)
    assert any(issubclass(w.category, TruncationCapWarning) for w in caught)


def test_chernoff_block_rows_match_scalar_forms():
    from lbrouter.chernoff import log_loose, log_tight

    pos = np.array([0, 100])
    mu0, x0 = np.array([0.5, 2.0]), np.array([3.0, 1.0])
    for tight, fn in ((True, log_tight), (False, log_loose)):
        blk = _series.chernoff_block(tight, pos, mu0, 0.1, x0, 0.25)
        u = pos[:, None] + np.arange(blk.shape[1])[None, :]
        want = fn(mu0[:, None] + 0.1 * u, x0[:, None] + 0.25 * u)
        np.testing.assert_allclose(blk, want, rtol=1e-12, atol=1e-12)
