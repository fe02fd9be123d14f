"""Truncated evaluation of non-negative series, accumulated in log space.

A series stops once its log terms have been non-increasing over the last
``RUN`` steps and a geometric estimate of the remaining tail is below
``tol`` times the running sum.  Inner series know their limiting per-step
log ratio and use ``max(last step, limit)`` as the tail ratio, which
over-estimates the tail whether the log terms bend up or down.  Outer
series, where no limit is known, use the flattest step of the last block.

Inner series are advanced together, ``BLOCK`` terms per row at a time.
Each row always sees the same blocks, so its value does not depend on which
other rows were evaluated alongside it.
"""
from __future__ import annotations

import math
import warnings

import numpy as np
from numba import njit

RUN = 16
BLOCK = 64
# inner series of a double sum may each leave tol * total / SPREAD behind
LOG_SPREAD = math.log(1e4)


class TruncationCapWarning(RuntimeWarning):
    """A series hit its hard term cap before meeting the tolerance."""


def warn_capped(count: int, cap: int) -> None:
    if count:
        warnings.warn(
            f"truncation cap reached: {count} series still above tolerance after {cap} terms",
            TruncationCapWarning,
            stacklevel=3,
        )


@njit(cache=True)
def _fill_tight(pos, mu0, mu_step, x0, x_step, lin, xx, ratio):
    # lt = lin - xx * log(ratio); the log is taken by the caller
    rows, width = lin.shape
    for r in range(rows):
        for j in range(width):
            u = pos[r] + j
            mu = mu0[r] + u * mu_step
            x = x0[r] + u * x_step
            if x <= mu:
                lin[r, j] = 0.0
                xx[r, j] = 0.0
                ratio[r, j] = 1.0
            else:
                lin[r, j] = x - mu
                xx[r, j] = x
                ratio[r, j] = x / mu if mu > 0.0 else np.inf


@njit(cache=True)
def _fill_loose(pos, mu0, mu_step, x0, x_step, out):
    rows, width = out.shape
    for r in range(rows):
        for j in range(width):
            u = pos[r] + j
            mu = mu0[r] + u * mu_step
            x = x0[r] + u * x_step
            e = x - mu
            if e <= 0.0:
                out[r, j] = 0.0
            elif x >= 2.0 * mu:
                out[r, j] = -e / 3.0
            else:
                out[r, j] = -e * e / (3.0 * mu)


def chernoff_block(tight, pos, mu0, mu_step, x0, x_step, width=None):
    """Log Chernoff bounds for rows with mean ``mu0 + u mu_step`` and threshold ``x0 + u x_step``.

    Row ``r`` covers ``u = pos[r] .. pos[r] + width - 1``.
    """
    shape = (pos.size, width or BLOCK)
    if not tight:
        out = np.empty(shape)
        _fill_loose(pos, mu0, mu_step, x0, x_step, out)
        return out
    lin, xx, ratio = np.empty(shape), np.empty(shape), np.empty(shape)
    _fill_tight(pos, mu0, mu_step, x0, x_step, lin, xx, ratio)
    np.log(ratio, out=ratio)
    with np.errstate(invalid="ignore"):
        ratio *= xx
    lin -= ratio
    return lin


def flat_prefix(mu0, mu_step, x0, x_step):
    """Number of leading terms with threshold at or below the mean, less one for rounding."""
    with np.errstate(divide="ignore", invalid="ignore"):
        flat = (np.asarray(mu0, dtype=float) - x0) / (x_step - mu_step)
    return np.where(flat >= 1.0, np.floor(flat), 0.0).astype(np.int64)


@njit(cache=True)
def _weigh_and_shift(lt, lw, ref, peak, tail_lt):
    # lt <- lt + w - peak, where peak is the running maximum of each row;
    # the last RUN + 1 weighted values are kept unshifted in tail_lt
    rows, width = lt.shape
    keep = tail_lt.shape[1]
    for r in range(rows):
        top = ref[r]
        for j in range(width):
            lt[r, j] += lw[r]
            if lt[r, j] > top:
                top = lt[r, j]
        for j in range(keep):
            tail_lt[r, j] = lt[r, width - keep + j]
        peak[r] = top
        shift = top if top > -np.inf else 0.0
        for j in range(width):
            lt[r, j] -= shift


@njit(cache=True)
def _accumulate(scaled, ref, acc, peak):
    rows, width = scaled.shape
    for r in range(rows):
        total = 0.0
        for j in range(width):
            total += scaled[r, j]
        if acc[r] > 0.0:
            total += acc[r] * math.exp(ref[r] - peak[r])
        acc[r] = total
        ref[r] = peak[r]


@njit(cache=True)
def _tail_check(tail_lt, ref, acc, asym, log_tol, log_floor, done):
    rows, width = tail_lt.shape
    for r in range(rows):
        done[r] = False
        last = tail_lt[r, width - 1]
        if last == -np.inf:
            # nothing left to add once a whole stretch is zero
            zero = acc[r] > 0.0
            for j in range(width):
                if tail_lt[r, j] > -np.inf:
                    zero = False
            done[r] = zero
            continue
        falling = True
        for j in range(1, width):
            if tail_lt[r, j] > tail_lt[r, j - 1]:
                falling = False
                break
        if not falling:
            continue
        slope = max(last - tail_lt[r, width - 2], asym)
        if slope >= 0.0:
            continue
        tail = last + slope - math.log(-math.expm1(slope))
        done[r] = tail < max(ref[r] + math.log(acc[r]) + log_tol, log_floor)


def sum_rows(terms, n_rows, *, log_tol, asym, cap, log_w=None, first=None, log_floor=-np.inf):
    """Log of ``w_r * sum_{u >= 0} t_r(u)`` for each row ``r``.

    ``terms(rows, pos)`` returns the unweighted log terms of ``rows`` for
    ``u = pos .. pos + BLOCK - 1``.  ``first[r]`` leading terms are known to
    equal 1 and are counted without evaluation.  A row stops when its
    weighted tail estimate is below ``max(tol * own sum, exp(log_floor))``.
    Returns the values and the number of rows that hit ``cap``.
    """
    out = np.full(n_rows, -np.inf)
    lw = np.zeros(n_rows) if log_w is None else np.array(log_w, dtype=float)
    start = np.zeros(n_rows, dtype=np.int64) if first is None else np.asarray(first, dtype=np.int64)
    rows = np.flatnonzero(lw > -np.inf)
    lw = lw[rows]
    pos = start[rows].copy()
    begin = pos.copy()
    ref = np.where(pos > 0, lw, -np.inf)
    acc = pos.astype(float)
    capped = 0
    while rows.size:
        lt = terms(rows, pos)
        peak = np.empty(rows.size)
        tail_lt = np.empty((rows.size, RUN + 1))
        _weigh_and_shift(lt, lw, ref, peak, tail_lt)
        np.exp(lt, out=lt)
        _accumulate(lt, ref, acc, peak)
        pos += lt.shape[1]
        done = np.empty(rows.size, dtype=np.bool_)
        _tail_check(tail_lt, ref, acc, asym, log_tol, log_floor, done)
        hit = ~done & (pos - begin >= cap)
        capped += int(hit.sum())
        done |= hit
        if done.any():
            with np.errstate(divide="ignore"):
                out[rows[done]] = ref[done] + np.log(acc[done])
            keep = ~done
            rows, pos, begin, ref, acc, lw = rows[keep], pos[keep], begin[keep], ref[keep], acc[keep], lw[keep]
    return out, capped


def _logsumexp(L):
    peak = np.max(L)
    if not np.isfinite(peak):
        return float(peak)
    return float(peak + np.log(np.sum(np.exp(L - peak))))


def log_sum_blocks(log_terms_block, *, tol, cap, start=0, block=256):
    """Log of ``sum_{d >= start} exp(log_terms_block(d, floor))``, a block at a time.

    Used for the outer sums, where each term is itself an inner series.
    ``floor`` is the log of the absolute error each inner series may leave
    behind: ``tol`` times the running total divided by ``SPREAD``.
    """
    total = -np.inf
    pos = start
    log_tol = math.log(tol)
    while True:
        if pos - start >= cap:
            warn_capped(1, cap)
            return total
        idx = np.arange(pos, pos + block)
        L = np.asarray(log_terms_block(idx, total + log_tol - LOG_SPREAD), dtype=float)
        total = np.logaddexp(total, _logsumexp(L))
        pos += block
        half = L[block // 2 :]
        if not np.isfinite(half[-1]):
            if not np.any(np.isfinite(half)) and np.isfinite(total):
                return total
            continue
        steps = np.diff(half)
        steps = steps[~np.isnan(steps)]
        if steps.size == 0 or not np.all(steps <= 0):
            continue
        slope = float(np.max(steps))
        if slope >= 0:
            continue
        if slope + half[-1] - math.log(-math.expm1(slope)) < total + log_tol:
            return total
