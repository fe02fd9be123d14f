"""Slotted simulation of the three-stage router.

Per slot: candidate arrivals are drawn per (i, k) pair, pass through three
token buckets (pair, input, output), get a uniformly random active middle
node and join the input queue ``q1[i, j]``.  Links then serve
``floor(credit)`` packets each, last stage first, so a forwarded packet
waits at least one slot in the next queue.

The slot loop itself lives in :mod:`._kernel`; this module owns the random
streams, buffer management and the bookkeeping that turns raw counts into
:class:`TailStats`.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from ..model import ConfigError, RouterConfig, TrafficSpec, validate_admissible
from . import _kernel as K
from .checks import EnvelopeTracker

QUEUES = ("q1", "q2", "q3")
DELAYS = ("d1", "d2", "e2e", "d3", "total")
QUANTITIES = QUEUES + DELAYS

ROUTE_CHUNK = 1 << 16
DELAY_BUFFER = 1 << 16
ARRIVAL_CELLS = 1 << 22
N_EPOCHS = 20


class InadmissibleTraffic(ConfigError):
    """The rate matrix overloads an input or an output."""


class SimulationFault(RuntimeError):
    """An internal consistency check failed during the run."""


def credit_caps(cfg: RouterConfig) -> np.ndarray:
    # an idle link may bank one whole packet of service, never more
    return np.array([max(1.0, cfg.input_link_rate), max(1.0, cfg.output_link_rate), 1.0])


@dataclass
class SimState:
    cfg: RouterConfig
    spec: TrafficSpec
    warmup: int
    epoch_len: int
    pair_gens: list
    route_gen: np.random.Generator
    ctr: np.ndarray
    pair_depth: np.ndarray
    in_depth: float
    out_depth: float
    caps: np.ndarray
    pair_tok: np.ndarray
    in_tok: np.ndarray
    out_tok: np.ndarray
    pend: np.ndarray
    cred: list
    rings: list
    heads: list
    lens: list
    enq: list
    deq: list
    hq: list
    arrivals: np.ndarray
    arr_t0: int
    routes: np.ndarray
    route_counts: np.ndarray
    dbuf: np.ndarray
    dcount: np.ndarray
    dhist: dict
    epoch_max: np.ndarray
    admissions: np.ndarray
    envelopes: EnvelopeTracker | None = None
    adm_done: int = 0
    trace: np.ndarray = field(default_factory=lambda: np.zeros((0, 5), dtype=np.int64))
    trace_parts: list = field(default_factory=list)
    arrival_chunk: int = 1 << 16

    @property
    def clock(self) -> int:
        return int(self.ctr[K.C_CLOCK])

    @property
    def resident(self) -> int:
        return int(sum(int(x.sum()) for x in self.lens))

    def queue_lengths(self, stage: int) -> np.ndarray:
        """Current occupancies: ``(n, m_active)``, ``(m_active, n)`` or ``(n,)``."""
        n, m, ma = self.cfg.n, self.cfg.m, self.cfg.m_active
        if stage == 1:
            return self.lens[0].reshape(n, m)[:, :ma].copy()
        if stage == 2:
            return self.lens[1].reshape(m, n)[:ma].copy()
        return self.lens[2].copy()

    def link_arrivals(self) -> np.ndarray:
        """Packets ever enqueued at each input link ``(i, j)``, active ``j`` only."""
        n, m, ma = self.cfg.n, self.cfg.m, self.cfg.m_active
        return self.enq[0].reshape(n, m)[:, :ma].copy()

    def credits(self, stage: int) -> np.ndarray:
        return self.cred[stage - 1].copy()


def new_state(
    cfg: RouterConfig,
    spec: TrafficSpec,
    seed: int,
    *,
    warmup: int = 0,
    horizon: int | None = None,
    trace: bool = False,
    check_envelopes: bool = False,
) -> SimState:
    """Fresh, empty router with full token buckets."""
    report = validate_admissible(spec, cfg)
    if not report.ok:
        raise InadmissibleTraffic(f"traffic is not admissible: {report}")
    n, m, ma = cfg.n, cfg.m, cfg.m_active
    streams = np.random.SeedSequence(seed).spawn(n * n + 1)
    cap = 64
    caps = credit_caps(cfg)
    sigma = float(spec.aggregate_burst)
    # buckets refill before admitting, so capping the refilled level at
    # burst + 1 + rate still bounds any window by burst + 1 + rate * length
    # while never discarding tokens a backlogged pair could have used
    out_rate = 1.0 - cfg.epsilon
    pair_depth = np.array(spec.pair_bursts, dtype=float) + 1.0 + spec.rates
    n_ep = N_EPOCHS if horizon else 1
    epoch_len = max(1, math.ceil((horizon or 1) / n_ep))
    state = SimState(
        cfg=cfg,
        spec=spec,
        warmup=int(warmup),
        epoch_len=epoch_len,
        pair_gens=[np.random.default_rng(s) for s in streams[:-1]],
        route_gen=np.random.default_rng(streams[-1]),
        ctr=np.zeros(K.N_COUNTERS, dtype=np.int64),
        pair_depth=pair_depth,
        in_depth=sigma + 2.0,
        out_depth=sigma + 1.0 + out_rate,
        caps=caps,
        pair_tok=pair_depth.copy(),
        in_tok=np.full(n, sigma + 2.0),
        out_tok=np.full(n, sigma + 1.0 + out_rate),
        pend=np.zeros((n, n), dtype=np.int64),
        cred=[np.zeros(n * m), np.zeros(m * n), np.zeros(n)],
        rings=[np.zeros((nq, cap, K.N_FIELDS), dtype=np.int64) for nq in (n * m, m * n, n)],
        heads=[np.zeros(nq, dtype=np.int64) for nq in (n * m, m * n, n)],
        lens=[np.zeros(nq, dtype=np.int64) for nq in (n * m, m * n, n)],
        enq=[np.zeros(nq, dtype=np.int64) for nq in (n * m, m * n, n)],
        deq=[np.zeros(nq, dtype=np.int64) for nq in (n * m, m * n, n)],
        hq=[np.zeros(cap + 1, dtype=np.int64) for _ in range(3)],
        arrivals=np.zeros((0, n, n), dtype=np.bool_),
        arr_t0=0,
        routes=np.zeros(0),
        route_counts=np.zeros(ma, dtype=np.int64),
        dbuf=np.zeros((len(DELAYS), DELAY_BUFFER), dtype=np.int64),
        dcount=np.zeros(len(DELAYS), dtype=np.int64),
        dhist={name: np.zeros(0, dtype=np.int64) for name in DELAYS},
        epoch_max=np.zeros((n_ep, 3), dtype=np.int64),
        admissions=np.zeros((0, n, n), dtype=np.int64),
        arrival_chunk=max(256, ARRIVAL_CELLS // (n * n)),
    )
    if check_envelopes:
        state.envelopes = EnvelopeTracker(spec.rates, spec.pair_bursts, sigma, out_rate)
    if trace:
        state.trace = np.zeros((1 << 14, 5), dtype=np.int64)
    return state


# -- status handlers -----------------------------------------------------------


def _grow(s: SimState) -> None:
    old = s.rings[0].shape[1]
    new = 2 * old
    for st in range(3):
        ring, head = s.rings[st], s.heads[st]
        nq = ring.shape[0]
        idx = (head[:, None] + np.arange(old)) % old
        grown = np.zeros((nq, new, K.N_FIELDS), dtype=np.int64)
        grown[:, :old] = ring[np.arange(nq)[:, None], idx]
        s.rings[st] = grown
        head[:] = 0
        s.hq[st] = np.concatenate([s.hq[st], np.zeros(new - old, dtype=np.int64)])


def _more_routes(s: SimState) -> None:
    pos = int(s.ctr[K.C_ROUTE_POS])
    s.routes = np.concatenate([s.routes[pos:], s.route_gen.random(ROUTE_CHUNK)])
    s.ctr[K.C_ROUTE_POS] = 0


def _flush(s: SimState) -> None:
    for b, name in enumerate(DELAYS):
        c = int(s.dcount[b])
        if c:
            add = np.bincount(s.dbuf[b, :c])
            h = s.dhist[name]
            if add.size > h.size:
                h = np.concatenate([h, np.zeros(add.size - h.size, dtype=np.int64)])
            h[: add.size] += add
            s.dhist[name] = h
        s.dcount[b] = 0
    e = int(s.ctr[K.C_TRACE])
    if e:
        s.trace_parts.append(s.trace[:e].copy())
        s.ctr[K.C_TRACE] = 0


def _drain_admissions(s: SimState) -> None:
    if s.envelopes is None:
        return
    upto = s.clock - s.arr_t0
    if upto > s.adm_done:
        s.envelopes.update(s.admissions[s.adm_done : upto])
    s.adm_done = upto


def _more_arrivals(s: SimState) -> None:
    _drain_admissions(s)
    n = s.cfg.n
    T = s.arrival_chunk
    rates = s.spec.rates
    arr = np.zeros((T, n, n), dtype=np.bool_)
    for i in range(n):
        for k in range(n):
            arr[:, i, k] = s.pair_gens[i * n + k].random(T) < rates[i, k]
    s.arrivals = arr
    s.arr_t0 = s.clock
    s.adm_done = 0
    if s.envelopes is not None:
        s.admissions = np.zeros((T, n, n), dtype=np.int64)


def advance_to(s: SimState, t_end: int) -> SimState:
    """Run slots until the clock reads ``t_end``."""
    cfg = s.cfg
    while True:
        status = K.advance(
            t_end, s.ctr, cfg.n, cfg.m, cfg.m_active, s.warmup, s.epoch_len,
            s.spec.rates, s.pair_depth, s.in_depth, s.out_depth, 1.0 - cfg.epsilon,
            cfg.input_link_rate, cfg.output_link_rate, s.caps,
            s.pair_tok, s.in_tok, s.out_tok, s.pend,
            s.cred[0], s.cred[1], s.cred[2],
            s.rings[0], s.heads[0], s.lens[0], s.enq[0], s.deq[0],
            s.rings[1], s.heads[1], s.lens[1], s.enq[1], s.deq[1],
            s.rings[2], s.heads[2], s.lens[2], s.enq[2], s.deq[2],
            s.arrivals, s.arr_t0, s.routes, s.route_counts,
            s.hq[0], s.hq[1], s.hq[2],
            s.dbuf, s.dcount, s.epoch_max, s.admissions, s.trace,
        )  # fmt: skip
        if status == K.DONE:
            break
        if status == K.GROW:
            _grow(s)
        elif status == K.ROUTES:
            _more_routes(s)
        elif status == K.FLUSH:
            _flush(s)
        elif status == K.ARRIVALS:
            _more_arrivals(s)
    _flush(s)
    _drain_admissions(s)
    _raise_on_faults(s)
    return s


def step(s: SimState) -> SimState:
    """Advance one slot."""
    return advance_to(s, s.clock + 1)


FAULTS = {
    K.C_FIFO_BAD: "FIFO order",
    K.C_CREDIT_BAD: "credit bounds",
    K.C_CONSERVATION_BAD: "packet conservation",
    K.C_PATH_BAD: "middle node outside the active set",
    K.C_WORK_BAD: "work conservation",
}


def _raise_on_faults(s: SimState) -> None:
    bad = {name: int(s.ctr[c]) for c, name in FAULTS.items() if s.ctr[c]}
    if bad:
        raise SimulationFault(f"consistency violations at slot {s.clock}: {bad}")


def trace_events(s: SimState) -> np.ndarray:
    """Queue events so far as rows ``(slot, stage, queue, seq, is_departure)``."""
    _flush(s)
    if not s.trace_parts:
        return np.zeros((0, 5), dtype=np.int64)
    return np.concatenate(s.trace_parts)


# -- results -------------------------------------------------------------------


@dataclass
class TailStats:
    """Histograms over integer values for each monitored quantity.

    Queue sizes are sampled once per slot per queue, after service; delays
    once per departing packet.  Only slots at or after ``warmup`` count.
    """

    warmup: int
    horizon: int
    hist: dict
    injected: int = 0
    departed: int = 0
    route_counts: np.ndarray | None = None
    link_arrivals: np.ndarray | None = None
    epoch_max: np.ndarray | None = None
    envelope_excess: dict | None = None

    def count(self, quantity: str) -> int:
        return int(self._hist(quantity).sum())

    def _hist(self, quantity: str) -> np.ndarray:
        if quantity not in self.hist:
            raise KeyError(f"unknown quantity {quantity!r}; expected one of {QUANTITIES}")
        return self.hist[quantity]

    def mean(self, quantity: str) -> float:
        h = self._hist(quantity)
        c = h.sum()
        return float(np.dot(np.arange(h.size), h) / c) if c else math.nan

    def maximum(self, quantity: str) -> int:
        nz = np.flatnonzero(self._hist(quantity))
        return int(nz[-1]) if nz.size else 0

    def fingerprint(self) -> str:
        """Digest of every histogram and counter; equal runs give equal digests."""
        h = hashlib.sha256()
        for name in QUANTITIES:
            h.update(name.encode())
            h.update(np.trim_zeros(self.hist[name], "b").tobytes())
        h.update(np.array([self.warmup, self.horizon, self.injected, self.departed]).tobytes())
        for arr in (self.route_counts, self.epoch_max):
            if arr is not None:
                h.update(arr.tobytes())
        return h.hexdigest()

    def epoch_halves(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-stage maximum queue over the first and second half of the run."""
        e = self.epoch_max
        half = e.shape[0] // 2
        return e[:half].max(axis=0), e[half:].max(axis=0)


def collect(s: SimState, horizon: int) -> TailStats:
    hist = {name: np.trim_zeros(s.hq[i], "b").copy() for i, name in enumerate(QUEUES)}
    hist.update({name: s.dhist[name].copy() for name in DELAYS})
    return TailStats(
        warmup=s.warmup,
        horizon=horizon,
        hist=hist,
        injected=int(s.ctr[K.C_INJECTED]),
        departed=int(s.ctr[K.C_DEPARTED]),
        route_counts=s.route_counts.copy(),
        link_arrivals=s.link_arrivals(),
        epoch_max=s.epoch_max.copy(),
        envelope_excess=None if s.envelopes is None else s.envelopes.excess(),
    )


def run(
    cfg: RouterConfig,
    spec: TrafficSpec,
    seed: int,
    horizon: int,
    warmup: int | None = None,
    *,
    check_envelopes: bool = False,
) -> TailStats:
    """Simulate ``horizon`` slots and return statistics from ``warmup`` on.

    ``warmup`` defaults to a tenth of the horizon.
    """
    horizon = int(horizon)
    warmup = horizon // 10 if warmup is None else int(warmup)
    if not 0 <= warmup <= horizon:
        raise ConfigError(f"need 0 <= warmup <= horizon, got warmup={warmup}, horizon={horizon}")
    s = new_state(cfg, spec, seed, warmup=warmup, horizon=horizon, check_envelopes=check_envelopes)
    advance_to(s, horizon)
    return collect(s, horizon)


def empirical_tail(stats: TailStats, quantity: str, thresholds):
    """Fraction of samples ``>= x`` for each threshold, with the sample count attached."""
    from ..bounds import TailCurve

    h = stats._hist(quantity)
    total = int(h.sum())
    if total == 0:
        raise ValueError(f"no samples recorded for {quantity!r}")
    x = np.asarray(thresholds, dtype=float)
    # P(X >= x) for integer samples equals P(X >= ceil(x))
    idx = np.ceil(x).astype(np.int64)
    above = np.concatenate([np.cumsum(h[::-1])[::-1], [0]])
    idx = np.clip(idx, 0, h.size)
    probs = above[idx] / total
    return TailCurve(quantity, x, probs, counts=np.full(x.size, total), label="empirical")
