"""Tail bounds on queue sizes and delays of the load-balanced router.

All evaluators work on a *canonical* system: full load (``rbar = 1``) and
all ``m_eff`` middle nodes active, obtained from a real configuration by
:func:`canonicalize`.  Queue thresholds are in packets and carry over
unchanged; delay thresholds are given in slots of the original system and
multiplied by ``time_scale`` (= ``rbar``) before use.

Two evaluation paths exist:

``closed``
    The published geometric majorisations, built on the loose Chernoff
    form.  Only defined for ``1 < beta_eff <= 2`` at the middle stage.
``numeric``
    Direct union-bound sums with either Chernoff form, truncated once the
    remaining tail is below ``tol`` relative to the running sum.

Raw bound values are kept unclamped (and in log space) while summing; the
public per-point functions and :func:`tail_curve` clamp to ``[0, 1]``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from . import _series
from ._series import log_sum_blocks
from .chernoff import ChernoffForm, log_bound, log_decay_rate
from .model import RouterConfig

#: multiplier of a single flow's fair share used to split arrivals in the
#: dependence-corrected middle-stage bound
DEPENDENCE_SPLIT = 5.0


class OverloadError(ValueError):
    """Effective speedup at or below 1: the bounds have no finite value."""

    def __init__(self, message, params=None):
        super().__init__(message)
        self.params = params


class NoTrafficError(ValueError):
    pass


class ClosedFormUnavailable(ValueError):
    pass


@dataclass(frozen=True)
class CanonicalParams:
    m_eff: int
    alpha_eff: float
    beta_eff: float
    n: int
    sigma: float = 0.0
    time_scale: float = 1.0

    def require_finite(self) -> None:
        if not self.alpha_eff > 1:
            raise OverloadError(f"effective input speedup {self.alpha_eff:.6g} <= 1", self)
        if not self.beta_eff > 1:
            raise OverloadError(f"effective output speedup {self.beta_eff:.6g} <= 1", self)
        if self.m_eff < 1:
            raise ValueError(f"m_eff must be >= 1, got {self.m_eff}")


class EvalPath(str, Enum):
    NUMERIC = "numeric"
    CLOSED = "closed"


@dataclass(frozen=True)
class EvalPolicy:
    form: ChernoffForm = ChernoffForm.TIGHT
    path: EvalPath = EvalPath.NUMERIC
    tol: float = 1e-12
    max_terms: int = 10**7

    def __post_init__(self):
        object.__setattr__(self, "form", ChernoffForm(self.form))
        object.__setattr__(self, "path", EvalPath(self.path))
        if not self.tol > 0:
            raise ValueError(f"tolerance must be positive, got {self.tol}")
        if self.path is EvalPath.CLOSED and self.form is not ChernoffForm.LOOSE:
            raise ValueError("closed-form bounds are derived from the loose Chernoff form; use form='loose'")


def canonicalize(cfg: RouterConfig, rbar: float, sigma: float = 0.0, reading: str = "theorem") -> CanonicalParams:
    """Rescale time so the maximum load becomes 1.

    ``reading="theorem"`` keeps ``m_eff = m_active``; ``reading="display"``
    uses ``m_eff = m`` instead.  Only
    time is rescaled, so a burst of ``sigma`` packets carries over unchanged.
    Raises :class:`OverloadError` (carrying the params) when an effective
    speedup is not above 1.
    """
    if not rbar > 0:
        raise NoTrafficError("maximum load is zero: nothing to bound")
    if reading not in ("theorem", "display"):
        raise ValueError(f"unknown reading {reading!r}")
    scale = cfg.m_active / (cfg.m * rbar)
    params = CanonicalParams(
        m_eff=cfg.m_active if reading == "theorem" else cfg.m,
        alpha_eff=cfg.alpha * scale,
        beta_eff=cfg.beta * scale,
        n=cfg.n,
        sigma=float(sigma),
        time_scale=rbar,
    )
    params.require_finite()
    return params


# -- input stage -------------------------------------------------------------


def _log1m_exp(x):
    """log(1 - exp(-x)) for x > 0."""
    return np.log(-np.expm1(-np.asarray(x, dtype=float)))


def _log_input_closed(q, p: CanonicalParams):
    q = np.asarray(q, dtype=float)
    a, m = p.alpha_eff, p.m_eff
    first = -q / 3.0 - _log1m_exp((a - 1) / (3 * m))
    if a >= 2:
        return first
    k = (a - 1) ** 2
    second = -k * q / (3 * (2 - a)) - _log1m_exp(k / (3 * m))
    return np.logaddexp(first, second)


def _log_input_numeric(q, p: CanonicalParams, policy: EvalPolicy):
    q = np.atleast_1d(np.asarray(q, dtype=float))
    m, a = p.m_eff, p.alpha_eff
    mu0 = np.full(q.size, p.sigma / m)
    tight = _tight(policy)

    def terms(rows, pos):
        return _series.chernoff_block(tight, pos, mu0[rows], 1 / m, q[rows], a / m)

    out, capped = _series.sum_rows(
        terms,
        q.size,
        log_tol=math.log(policy.tol),
        asym=-log_decay_rate(policy.form, a - 1) / m,
        cap=policy.max_terms,
        first=_series.flat_prefix(mu0, 1 / m, q, a / m),
    )
    _series.warn_capped(capped, policy.max_terms)
    return out


def _tight(policy: EvalPolicy) -> bool:
    return policy.form is ChernoffForm.TIGHT


def log_input_queue(q, p: CanonicalParams, policy: EvalPolicy):
    """Unclamped natural log of the per-queue input bound ``f(q)``."""
    p.require_finite()
    scalar = np.ndim(q) == 0
    if policy.path is EvalPath.CLOSED:
        out = np.atleast_1d(_log_input_closed(q, p))
    else:
        out = _log_input_numeric(q, p, policy)
    return float(out[0]) if scalar else out


def input_queue_tail(q: float, p: CanonicalParams, policy: EvalPolicy = EvalPolicy()) -> float:
    """Bound on ``Pr[Q1_ij >= q]``."""
    return _clamp(log_input_queue(q, p, policy))


def input_delay_tail(d: float, p: CanonicalParams, policy: EvalPolicy = EvalPolicy(), union: bool = True) -> float:
    """Bound on the head-of-line delay at one input link reaching ``d`` slots.

    With ``union`` the bound covers every input feeding a middle node
    (factor ``n``).
    """
    q = d * p.time_scale * p.alpha_eff / p.m_eff
    extra = math.log(p.n) if union else 0.0
    return _clamp(log_input_queue(q, p, policy) + extra)


# -- middle stage ------------------------------------------------------------


class _InputDelayTable:
    """Lazily extended ``log(n f(d alpha / m))`` over integer delays ``d``."""

    chunk = 1024

    def __init__(self, p: CanonicalParams, policy: EvalPolicy):
        self.p = p
        self.policy = policy
        self.values = np.empty(0)

    def __call__(self, d_idx):
        need = int(np.max(d_idx)) + 1
        if need > self.values.size:
            upto = -(-need // self.chunk) * self.chunk
            d = np.arange(self.values.size, upto, dtype=float)
            new = log_input_queue(d * self.p.alpha_eff / self.p.m_eff, self.p, self.policy)
            self.values = np.concatenate([self.values, math.log(self.p.n) + np.atleast_1d(new)])
        return self.values[d_idx]


@functools.lru_cache(maxsize=64)
def _input_delay_table(p: CanonicalParams, policy: EvalPolicy) -> _InputDelayTable:
    return _InputDelayTable(p, policy)


def _log_middle_numeric(q: float, p: CanonicalParams, policy: EvalPolicy) -> float:
    table = _input_delay_table(p, policy)
    m, b = p.m_eff, p.beta_eff
    asym = -log_decay_rate(policy.form, b - 1) / m
    tight = _tight(policy)

    def outer(d_idx, log_floor):
        mu0 = (d_idx + p.sigma) / m
        x0 = np.full(d_idx.size, float(q))

        def terms(rows, pos):
            return _series.chernoff_block(tight, pos, mu0[rows], 1 / m, x0[rows], b / m)

        out, capped = _series.sum_rows(
            terms,
            d_idx.size,
            log_tol=math.log(policy.tol),
            asym=asym,
            cap=policy.max_terms,
            log_w=table(d_idx),
            first=_series.flat_prefix(mu0, 1 / m, x0, b / m),
            log_floor=log_floor,
        )
        _series.warn_capped(capped, policy.max_terms)
        return out

    return float(log_sum_blocks(outer, tol=policy.tol, cap=policy.max_terms))


def _log_geom(rate: float, lo: float, hi: float = math.inf) -> float:
    """log of sum_{d = floor(lo)}^{ceil(hi)} exp(-rate d).

    Converging tails (``rate > 0``) use the infinite sum, as the published
    closed forms do; otherwise the finite range is summed exactly.
    """
    lo = math.floor(lo)
    if rate > 0:
        return -rate * lo - float(_log1m_exp(rate))
    if math.isinf(hi):
        return math.inf
    hi = math.ceil(hi)
    if hi < lo:
        return -math.inf
    count = hi - lo + 1
    if rate == 0:
        return math.log(count)
    # rate < 0: growing geometric series
    return -rate * lo + _log_expm1(-rate * count) - _log_expm1(-rate)


def _log_expm1(x: float) -> float:
    """log(exp(x) - 1) for x > 0 without overflow."""
    return x + math.log(-math.expm1(-x))


def _middle_case_terms(q: float, m: int, b: float, log_c: float, lam: float) -> list[float]:
    """The six case terms for an input-delay factor ``exp(log_c - d lam / (3m))``.

    Returns natural logs in the order 1a, 1b, 2, 3a, 3b, 3c.
    """
    b1 = b - 1.0
    k = b1 * b1
    qm = q * m
    log_b = float(_log1m_exp(b1 / (3 * m)))
    log_c2 = float(_log1m_exp(k / (3 * m)))
    log_c12 = float(_log1m_exp(k / (12 * m)))

    t1a = log_c - q / 3.0 - log_b + _log_geom((lam - 1) / (3 * m), 0, qm / 2)
    t1b = log_c - k * q / 3.0 - log_c2 + _log_geom((lam - k) / (3 * m), 0, qm / 2)
    t2 = log_c - log_c2 + _log_geom((lam + k) / (3 * m), qm / 2, qm / b)
    t3a = log_c - log_c12 + _log_geom((4 * lam + k) / (12 * m), qm / b, 2 * qm / (b + 1))
    d0 = 2 * qm / (b + 1)
    t3b = log_c - log_c12 + b1 * q / 6.0 + _log_geom((2 * lam + b * b1) / (6 * m), d0)
    # sum_{d >= d0} d z^d, z = exp(-lam / 3m): counts the trivially bounded windows
    z_log = -lam / (3 * m)
    a = math.floor(d0)
    log_1mz = float(_log1m_exp(-z_log))
    # log(a (1 - z) + z) without underflow when z is tiny and a = 0
    log_a = math.log(a) if a > 0 else -math.inf
    weighted = z_log * a + float(np.logaddexp(log_a + log_1mz, z_log)) - 2 * log_1mz
    t3c = log_c + math.log((b + 1) / b1) + weighted
    return [t1a, t1b, t2, t3a, t3b, t3c]


def _input_factor_pieces(p: CanonicalParams) -> list[tuple[float, float]]:
    """(log prefactor, decay) pairs making up ``n f(d alpha / m)`` in closed form."""
    a, m = p.alpha_eff, p.m_eff
    pieces = [(math.log(p.n) - float(_log1m_exp((a - 1) / (3 * m))), a)]
    if a < 2:
        k = (a - 1) ** 2
        pieces.append((math.log(p.n) - float(_log1m_exp(k / (3 * m))), a * k / (2 - a)))
    return pieces


def middle_case_terms(q: float, p: CanonicalParams) -> np.ndarray:
    """Natural logs of the closed-form case terms, one row per input-factor piece."""
    if p.beta_eff > 2:
        raise ClosedFormUnavailable("closed forms cover 1 < beta_eff <= 2 only; use the numeric path")
    return np.array([_middle_case_terms(q, p.m_eff, p.beta_eff, c, lam) for c, lam in _input_factor_pieces(p)])


def _log_middle_closed(q: float, p: CanonicalParams) -> float:
    terms = middle_case_terms(q, p).ravel()
    peak = np.max(terms)
    if not np.isfinite(peak):
        return float(peak)
    return float(peak + math.log(np.sum(np.exp(terms - peak))))


def log_middle_queue(q: float, p: CanonicalParams, policy: EvalPolicy) -> float:
    """Unclamped natural log of the middle-stage bound ``g(q)``."""
    p.require_finite()
    if policy.path is EvalPath.CLOSED:
        return _log_middle_closed(float(q), p)
    return _log_middle_numeric(float(q), p, policy)


def middle_queue_tail(q: float, p: CanonicalParams, policy: EvalPolicy = EvalPolicy()) -> float:
    """Bound on ``Pr[Q2_jk >= q]``."""
    return _clamp(log_middle_queue(q, p, policy))


def middle_delay_tail(d: float, p: CanonicalParams, policy: EvalPolicy = EvalPolicy()) -> float:
    return _clamp(log_middle_queue(d * p.time_scale * p.beta_eff / p.m_eff, p, policy))


def log_end_to_end(d: float, p: CanonicalParams, policy: EvalPolicy) -> tuple[float, float]:
    """Logs of the input-stage and middle-stage parts of the delay bound."""
    dc = d * p.time_scale
    f = log_input_queue(dc * p.alpha_eff / (2 * p.m_eff), p, policy)
    g = log_middle_queue(dc * p.beta_eff / (2 * p.m_eff), p, policy)
    return float(f), float(g)


def end_to_end_delay_tail(d: float, p: CanonicalParams, policy: EvalPolicy = EvalPolicy()) -> float:
    """Bound on a packet spending at least ``d`` slots in the input and middle stages."""
    return _clamp(float(np.logaddexp(*log_end_to_end(d, p, policy))))


# -- dependence-corrected middle stage ----------------------------------------


def _log_middle_corrected(q: float, p: CanonicalParams, policy: EvalPolicy) -> float:
    n, m, b, s = p.n, p.m_eff, p.beta_eff, p.sigma
    rest_share = (n - 1) / n
    split = DEPENDENCE_SPLIT / n
    rest_ratio = b * (1 - split) / rest_share
    if rest_ratio <= 1:
        raise OverloadError(
            f"dependence-corrected bound diverges: beta_eff * (1 - {DEPENDENCE_SPLIT}/n) / ((n-1)/n) = {rest_ratio:.4g} <= 1",
            p,
        )
    table = _input_delay_table(p, policy)
    asym = -min(
        log_decay_rate(policy.form, DEPENDENCE_SPLIT * b - 1) / (m * n),
        log_decay_rate(policy.form, rest_ratio - 1) * rest_share / m,
    )
    tight = _tight(policy)
    log_n = math.log(n)

    def outer(d_idx, log_floor):
        per_queue = table(d_idx) - log_n
        base = d_idx + s
        q0 = np.full(d_idx.size, float(q))

        def terms(rows, pos):
            # one flow's own arrivals against its share of the threshold
            flow = _series.chernoff_block(tight, pos, base[rows] / (m * n), 1 / (m * n), split * q0[rows], split * b / m)
            rest = _series.chernoff_block(
                tight, pos, base[rows] * rest_share / m, rest_share / m, (1 - split) * q0[rows], (1 - split) * b / m
            )
            lf = per_queue[rows, None]
            return log_n + np.logaddexp(np.minimum(flow, lf), rest + lf)

        out, capped = _series.sum_rows(
            terms,
            d_idx.size,
            log_tol=math.log(policy.tol),
            asym=asym,
            cap=policy.max_terms,
            log_floor=log_floor,
        )
        _series.warn_capped(capped, policy.max_terms)
        return out

    return float(log_sum_blocks(outer, tol=policy.tol, cap=policy.max_terms))


def log_middle_queue_corrected(q: float, p: CanonicalParams, policy: EvalPolicy) -> float:
    p.require_finite()
    if policy.path is not EvalPath.NUMERIC:
        raise ClosedFormUnavailable("the dependence-corrected bound has no closed form")
    return _log_middle_corrected(float(q), p, policy)


def middle_queue_tail_corrected(q: float, p: CanonicalParams, policy: EvalPolicy = EvalPolicy()) -> float:
    """Middle-stage bound without assuming the tagged flow is independent of its input delay.

    For every window the tagged input's own arrivals are split off at
    ``DEPENDENCE_SPLIT`` times its fair share of the threshold.  The event
    that this flow alone exceeds its share is charged
    ``min(Pr[flow exceeds share], Pr[input delay >= d])``; the remaining flows
    must then exceed the rest of the threshold, which is paired with the
    per-queue input delay bound.  Assumes uniform load (each flow ``1/n``).
    """
    return _clamp(log_middle_queue_corrected(q, p, policy))


# -- output stage ------------------------------------------------------------


class _OutputTable:
    """``log(n m f(d alpha / 2m) * m g(d beta / 2m))`` over integer ``d``, filled a chunk at a time."""

    chunk = 64

    def __init__(self, p: CanonicalParams, policy: EvalPolicy):
        self.p = p
        self.policy = policy
        self.chunks = {}

    def _fill(self, c):
        p = self.p
        d = np.arange(c * self.chunk, (c + 1) * self.chunk, dtype=float)
        f = np.atleast_1d(log_input_queue(d * p.alpha_eff / (2 * p.m_eff), p, self.policy))
        g = np.array([log_middle_queue(x, p, self.policy) for x in d * p.beta_eff / (2 * p.m_eff)])
        return math.log(p.n) + 2 * math.log(p.m_eff) + f + g

    def __call__(self, d_idx):
        d_idx = np.asarray(d_idx, dtype=np.int64)
        c_idx = d_idx // self.chunk
        out = np.empty(d_idx.size)
        for c in np.unique(c_idx):
            if c not in self.chunks:
                self.chunks[c] = self._fill(int(c))
            sel = c_idx == c
            out[sel] = self.chunks[c][d_idx[sel] - c * self.chunk]
        return out


@functools.lru_cache(maxsize=16)
def _output_table(p: CanonicalParams, policy: EvalPolicy) -> _OutputTable:
    return _OutputTable(p, policy)


def log_output_queue(q: float, p: CanonicalParams, epsilon: float, sigma_k: float, policy: EvalPolicy) -> float:
    p.require_finite()
    if not 0 < epsilon <= 1:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    table = _output_table(p, policy)
    log_eps = math.log(epsilon)
    start = max(0, math.floor(q - sigma_k))

    def outer(d_idx, _floor):
        w = d_idx - q + sigma_k
        with np.errstate(divide="ignore"):
            lw = np.where(w > 0, np.log(np.maximum(w, 1e-300)), -np.inf)
        return table(d_idx) + lw - log_eps

    return float(log_sum_blocks(outer, tol=policy.tol, cap=policy.max_terms, start=start, block=64))


def output_queue_tail(
    q: float, p: CanonicalParams, epsilon: float, sigma_k: float = 0.0, policy: EvalPolicy = EvalPolicy()
) -> float:
    """Bound on ``Pr[Q3_k >= q]`` for an output link of unit rate.

    Thresholds here are in canonical units; no time rescaling is applied.
    """
    return _clamp(log_output_queue(q, p, epsilon, sigma_k, policy))


def output_delay_tail(
    d: float, p: CanonicalParams, epsilon: float, sigma_k: float = 0.0, policy: EvalPolicy = EvalPolicy()
) -> float:
    return output_queue_tail(d * (1 - epsilon), p, epsilon, sigma_k, policy)


# -- curves ------------------------------------------------------------------


def _clamp(log_value) -> float:
    return float(math.exp(min(0.0, float(log_value))))


@dataclass(frozen=True)
class TailCurve:
    """Thresholds paired with tail probabilities (bounds or estimates).

    ``log10_raw`` keeps the unclamped bound for analytic curves, so that very
    small probabilities survive; ``counts`` holds sample sizes for empirical
    curves.
    """

    kind: str
    thresholds: np.ndarray
    probabilities: np.ndarray
    log10_raw: np.ndarray | None = None
    counts: np.ndarray | None = None
    label: str = ""

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=float)
        pr = np.asarray(self.probabilities, dtype=float)
        if t.shape != pr.shape or t.ndim != 1:
            raise ValueError("thresholds and probabilities must be 1-D and of equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("thresholds must be strictly increasing")
        if np.any((pr < 0) | (pr > 1)):
            raise ValueError("probabilities must lie in [0, 1]")
        if np.any(pr[1:] > pr[:-1] * (1 + 1e-9)):
            raise ValueError(f"{self.kind} curve is not non-increasing")
        object.__setattr__(self, "thresholds", t)
        object.__setattr__(self, "probabilities", pr)

    @property
    def log10_probabilities(self) -> np.ndarray:
        if self.log10_raw is not None:
            return np.minimum(self.log10_raw, 0.0)
        with np.errstate(divide="ignore"):
            return np.log10(self.probabilities)

    def __len__(self):
        return self.thresholds.size


CURVE_KINDS = ("input_q", "input_d", "middle_q", "middle_d", "e2e_d", "output_q", "output_d", "middle_q_corrected")


def log_tail_values(
    kind: str,
    thresholds: Sequence[float],
    p: CanonicalParams,
    policy: EvalPolicy = EvalPolicy(),
    *,
    epsilon: float | None = None,
    sigma_k: float = 0.0,
    union: bool = True,
) -> np.ndarray:
    """Unclamped natural-log bound values for one curve kind."""
    x = np.asarray(thresholds, dtype=float)
    if kind == "input_q":
        return np.atleast_1d(log_input_queue(x, p, policy))
    if kind == "input_d":
        extra = math.log(p.n) if union else 0.0
        return np.atleast_1d(log_input_queue(x * p.time_scale * p.alpha_eff / p.m_eff, p, policy)) + extra
    if kind == "middle_q":
        return np.array([log_middle_queue(v, p, policy) for v in x])
    if kind == "middle_d":
        return np.array([log_middle_queue(v * p.time_scale * p.beta_eff / p.m_eff, p, policy) for v in x])
    if kind == "e2e_d":
        return np.array([np.logaddexp(*log_end_to_end(v, p, policy)) for v in x])
    if kind == "middle_q_corrected":
        return np.array([log_middle_queue_corrected(v, p, policy) for v in x])
    if kind in ("output_q", "output_d"):
        if epsilon is None:
            raise ValueError(f"{kind} needs epsilon")
        qs = x if kind == "output_q" else x * (1 - epsilon)
        return np.array([log_output_queue(v, p, epsilon, sigma_k, policy) for v in qs])
    raise ValueError(f"unknown curve kind {kind!r}; expected one of {CURVE_KINDS}")


def tail_curve(
    kind: str,
    thresholds: Sequence[float],
    p: CanonicalParams,
    policy: EvalPolicy = EvalPolicy(),
    *,
    epsilon: float | None = None,
    sigma_k: float = 0.0,
    union: bool = True,
    label: str = "",
) -> TailCurve:
    x = np.asarray(thresholds, dtype=float)
    if np.any(np.diff(x) <= 0):
        raise ValueError("thresholds must be strictly increasing")
    raw = log_tail_values(kind, x, p, policy, epsilon=epsilon, sigma_k=sigma_k, union=union)
    probs = np.exp(np.minimum(raw, 0.0))
    return TailCurve(kind, x, probs, log10_raw=raw / math.log(10), label=label)
