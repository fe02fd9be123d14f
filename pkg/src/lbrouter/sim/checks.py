"""Post-hoc checks on simulator output.

The kernel counts consistency faults as it runs; the helpers here re-derive
the same properties from independent records (admission counts, the event
trace, routing counts) so that a bug in the kernel cannot hide itself.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

UNIFORMITY_LEVEL = 1e-3


class EnvelopeTracker:
    """Largest ``A(s, t) - r (t - s)`` over every window seen so far.

    Fed per-slot admission counts of shape ``(slots, n, n)`` in order.  Pair,
    input and output aggregates are tracked separately.
    """

    def __init__(self, rates, pair_bursts, sigma: float, out_rate: float):
        rates = np.asarray(rates, dtype=float)
        n = rates.shape[0]
        self.rate = {"pair": rates.ravel(), "input": np.ones(n), "output": np.full(n, out_rate)}
        self.burst = {
            "pair": np.asarray(pair_bursts, dtype=float).ravel(),
            "input": np.full(n, float(sigma)),
            "output": np.full(n, float(sigma)),
        }
        self._g = {k: np.zeros_like(v) for k, v in self.rate.items()}
        self._low = {k: np.zeros_like(v) for k, v in self.rate.items()}
        self._worst = {k: np.zeros_like(v) for k, v in self.rate.items()}
        self.slots = 0

    def update(self, counts) -> None:
        counts = np.asarray(counts)
        T, n, _ = counts.shape
        if T == 0:
            return
        series = {
            "pair": counts.reshape(T, n * n),
            "input": counts.sum(axis=2),
            "output": counts.sum(axis=1),
        }
        for key, a in series.items():
            g = self._g[key] + np.cumsum(a - self.rate[key], axis=0)
            low = np.minimum.accumulate(np.minimum(g, self._low[key]), axis=0)
            self._worst[key] = np.maximum(self._worst[key], (g - low).max(axis=0))
            self._g[key] = g[-1]
            self._low[key] = low[-1]
        self.slots += T

    def excess(self) -> dict:
        """Worst window excess over ``burst + 1`` per constraint; all ``<= 0`` when shaped."""
        return {k: self._worst[k] - self.burst[k] - 1.0 for k in self._worst}


def envelopes_hold(excess: dict, slack: float = 1e-6) -> bool:
    return all(bool(np.all(v <= slack)) for v in excess.values())


def fifo_violations(events: np.ndarray) -> int:
    """Queues whose departure order differs from their arrival order.

    ``events`` rows are ``(slot, stage, queue, seq, is_departure)`` in the
    order they happened.
    """
    bad = 0
    if events.size == 0:
        return 0
    key = events[:, 1] * (1 << 32) + events[:, 2]
    for kval in np.unique(key):
        rows = events[key == kval]
        ins = rows[rows[:, 4] == 0, 3]
        outs = rows[rows[:, 4] == 1, 3]
        if outs.size > ins.size or not np.array_equal(ins[: outs.size], outs):
            bad += 1
    return bad


def conservation_gaps(events: np.ndarray, resident: int) -> int:
    """Admitted minus departed minus resident, from the trace alone."""
    injected = int(np.sum((events[:, 1] == 1) & (events[:, 4] == 0)))
    departed = int(np.sum((events[:, 1] == 3) & (events[:, 4] == 1)))
    return injected - departed - resident


def uniformity_pvalue(route_counts) -> float:
    """Chi-square p-value for equal use of the active middle nodes."""
    counts = np.asarray(route_counts)
    if counts.size < 2 or counts.sum() == 0:
        return 1.0
    return float(sps.chisquare(counts).pvalue)


@dataclass(frozen=True)
class InvariantReport:
    conservation: bool
    fifo: bool
    shaping: bool
    deterministic: bool
    uniformity_p: float
    assignments: int

    @property
    def uniform(self) -> bool:
        return self.uniformity_p >= UNIFORMITY_LEVEL

    @property
    def ok(self) -> bool:
        return self.conservation and self.fifo and self.shaping and self.deterministic and self.uniform


def check_invariants(cfg, spec, seed: int, horizon: int, trace_slots: int = 20_000) -> InvariantReport:
    """Run the full invariant suite on one configuration.

    The kernel's own counters cover every slot of the main run (any fault
    aborts it).  A shorter traced run is then checked independently for
    FIFO order and conservation, and the main run is repeated to confirm
    determinism.
    """
    from .core import advance_to, new_state, run, trace_events

    first = run(cfg, spec, seed, horizon, check_envelopes=True)
    again = run(cfg, spec, seed, horizon, check_envelopes=True)

    s = new_state(cfg, spec, seed, trace=True)
    advance_to(s, min(horizon, trace_slots))
    events = trace_events(s)

    return InvariantReport(
        conservation=conservation_gaps(events, s.resident) == 0 and first.injected - first.departed >= 0,
        fifo=fifo_violations(events) == 0,
        shaping=envelopes_hold(first.envelope_excess),
        deterministic=first.fingerprint() == again.fingerprint(),
        uniformity_p=uniformity_pvalue(first.route_counts),
        assignments=int(first.route_counts.sum()),
    )
