"""Slot loop of the simulator, compiled with numba.

The kernel advances until ``t_end`` or until it needs the caller to do
something (grow rings, supply random draws, drain buffers).  Those checks
happen at the start of a slot, before any state is touched, so the caller
can fix things up and simply call again.
"""
import numpy as np
from numba import njit

# packet record fields
F_SEQ, F_ADMIT, F_ENQ, F_DELAY, F_K, F_I, F_POS = range(7)
N_FIELDS = 7

# counters
(
    C_CLOCK,
    C_SEQ,
    C_INJECTED,
    C_DEPARTED,
    C_FIFO_BAD,
    C_CREDIT_BAD,
    C_CONSERVATION_BAD,
    C_PATH_BAD,
    C_HIGH,
    C_ROUTE_POS,
    C_TRACE,
    C_WORK_BAD,
) = range(12)
N_COUNTERS = 12

# delay buffers
B_D1, B_D2, B_E2E, B_D3, B_TOTAL = range(5)

DONE, GROW, ROUTES, FLUSH, ARRIVALS = range(5)


@njit(cache=True)
def _push(ring, head, length, enq_count, q, rec, t, trace, ctr, stage):
    cap = ring.shape[1]
    slot = (head[q] + length[q]) % cap
    for f in range(N_FIELDS):
        ring[q, slot, f] = rec[f]
    ring[q, slot, F_POS] = enq_count[q]
    enq_count[q] += 1
    length[q] += 1
    if length[q] > ctr[C_HIGH]:
        ctr[C_HIGH] = length[q]
    if trace.shape[0] > 0:
        e = ctr[C_TRACE]
        trace[e, 0] = t
        trace[e, 1] = stage
        trace[e, 2] = q
        trace[e, 3] = rec[F_SEQ]
        trace[e, 4] = 0
        ctr[C_TRACE] = e + 1


@njit(cache=True)
def _pop(ring, head, length, deq_count, q, rec, t, trace, ctr, stage):
    cap = ring.shape[1]
    h = head[q]
    for f in range(N_FIELDS):
        rec[f] = ring[q, h, f]
    if rec[F_POS] != deq_count[q]:
        ctr[C_FIFO_BAD] += 1
    deq_count[q] += 1
    head[q] = (h + 1) % cap
    length[q] -= 1
    if trace.shape[0] > 0:
        e = ctr[C_TRACE]
        trace[e, 0] = t
        trace[e, 1] = stage
        trace[e, 2] = q
        trace[e, 3] = rec[F_SEQ]
        trace[e, 4] = 1
        ctr[C_TRACE] = e + 1


@njit(cache=True)
def _serve(credit, rate, cap, backlog):
    c = min(cap, credit + rate)
    k = int(np.floor(c))
    if k > backlog:
        k = backlog
    return c, k


@njit(cache=True)
def _check_link(credit, rate, backlog, ctr):
    if credit < 0.0 or credit > 1.0 + rate:
        ctr[C_CREDIT_BAD] += 1
    # a link left with both backlog and a whole credit failed to serve
    if backlog > 0 and credit >= 1.0:
        ctr[C_WORK_BAD] += 1


@njit(cache=True)
def advance(
    t_end,
    ctr,
    n,
    m,
    ma,
    warmup,
    epoch_len,
    rates,
    pair_depth,
    in_depth,
    out_depth,
    out_rate,
    rate1,
    rate2,
    caps,
    pair_tok,
    in_tok,
    out_tok,
    pend,
    cred1,
    cred2,
    cred3,
    ring1,
    head1,
    len1,
    enq1,
    deq1,
    ring2,
    head2,
    len2,
    enq2,
    deq2,
    ring3,
    head3,
    len3,
    enq3,
    deq3,
    arrivals,
    arr_t0,
    routes,
    route_counts,
    hq1,
    hq2,
    hq3,
    dbuf,
    dcount,
    epoch_max,
    admissions,
    trace,
):
    cap1, cap2, cap3 = caps[0], caps[1], caps[2]
    serve1 = n * ma * int(np.floor(cap1))
    serve2 = ma * n * int(np.floor(cap2))
    serve3 = n * int(np.floor(cap3))
    admit_max = n * int(np.floor(in_depth))
    margin = max(int(np.floor(in_depth)), n * int(np.floor(cap1)), ma * int(np.floor(cap2)), 1) + 1
    rec = np.empty(N_FIELDS, dtype=np.int64)

    while True:
        t = ctr[C_CLOCK]
        if t >= t_end:
            return DONE
        if t - arr_t0 >= arrivals.shape[0]:
            return ARRIVALS
        if ctr[C_HIGH] + margin > ring1.shape[1]:
            return GROW
        if routes.shape[0] - ctr[C_ROUTE_POS] < admit_max:
            return ROUTES
        room = dbuf.shape[1]
        if dcount[B_D1] + serve1 > room or dcount[B_D2] + serve2 > room or dcount[B_D3] + serve3 > room:
            return FLUSH
        if trace.shape[0] > 0 and ctr[C_TRACE] + 2 * (admit_max + serve1 + serve2 + serve3) > trace.shape[0]:
            return FLUSH
        record = t >= warmup
        row = t - arr_t0

        # shapers
        for i in range(n):
            in_tok[i] = min(in_depth, in_tok[i] + 1.0)
            out_tok[i] = min(out_depth, out_tok[i] + out_rate)
            for k in range(n):
                pair_tok[i, k] = min(pair_depth[i, k], pair_tok[i, k] + rates[i, k])
                if arrivals[row, i, k]:
                    pend[i, k] += 1
        for ii in range(n):
            i = (ii + t) % n
            for kk in range(n):
                k = (kk + t) % n
                while pend[i, k] > 0 and pair_tok[i, k] >= 1.0 and in_tok[i] >= 1.0 and out_tok[k] >= 1.0:
                    pend[i, k] -= 1
                    pair_tok[i, k] -= 1.0
                    in_tok[i] -= 1.0
                    out_tok[k] -= 1.0
                    p = ctr[C_ROUTE_POS]
                    j = int(routes[p] * ma)
                    if j >= ma:
                        j = ma - 1
                    ctr[C_ROUTE_POS] = p + 1
                    if j < 0 or j >= ma:
                        ctr[C_PATH_BAD] += 1
                    route_counts[j] += 1
                    rec[F_SEQ] = ctr[C_SEQ]
                    rec[F_ADMIT] = t
                    rec[F_ENQ] = t
                    rec[F_DELAY] = 0
                    rec[F_K] = k
                    rec[F_I] = i
                    ctr[C_SEQ] += 1
                    ctr[C_INJECTED] += 1
                    if admissions.shape[0] > 0:
                        admissions[row, i, k] += 1
                    _push(ring1, head1, len1, enq1, i * m + j, rec, t, trace, ctr, 1)

        # service, last stage first so forwarded packets wait a slot
        for k in range(n):
            c, s = _serve(cred3[k], 1.0, cap3, len3[k])
            for _ in range(s):
                _pop(ring3, head3, len3, deq3, k, rec, t, trace, ctr, 3)
                if record:
                    d3 = t - rec[F_ENQ] - 1
                    dbuf[B_D3, dcount[B_D3]] = d3
                    dbuf[B_TOTAL, dcount[B_TOTAL]] = rec[F_DELAY] + d3
                    dcount[B_D3] += 1
                    dcount[B_TOTAL] += 1
                ctr[C_DEPARTED] += 1
            c -= s
            _check_link(c, 1.0, len3[k], ctr)
            cred3[k] = c
        for j in range(ma):
            for k in range(n):
                q = j * n + k
                c, s = _serve(cred2[q], rate2, cap2, len2[q])
                for _ in range(s):
                    _pop(ring2, head2, len2, deq2, q, rec, t, trace, ctr, 2)
                    d2 = t - rec[F_ENQ] - 1
                    e2e = rec[F_DELAY] + d2
                    if record:
                        dbuf[B_D2, dcount[B_D2]] = d2
                        dbuf[B_E2E, dcount[B_E2E]] = e2e
                        dcount[B_D2] += 1
                        dcount[B_E2E] += 1
                    rec[F_ENQ] = t
                    rec[F_DELAY] = e2e
                    _push(ring3, head3, len3, enq3, k, rec, t, trace, ctr, 3)
                c -= s
                _check_link(c, rate2, len2[q], ctr)
                cred2[q] = c
        for i in range(n):
            for j in range(ma):
                q = i * m + j
                c, s = _serve(cred1[q], rate1, cap1, len1[q])
                for _ in range(s):
                    _pop(ring1, head1, len1, deq1, q, rec, t, trace, ctr, 1)
                    d1 = t - rec[F_ADMIT]
                    if record:
                        dbuf[B_D1, dcount[B_D1]] = d1
                        dcount[B_D1] += 1
                    rec[F_ENQ] = t
                    rec[F_DELAY] = d1
                    _push(ring2, head2, len2, enq2, j * n + rec[F_K], rec, t, trace, ctr, 2)
                c -= s
                _check_link(c, rate1, len1[q], ctr)
                cred1[q] = c

        # end-of-slot sampling
        resident = 0
        top1 = 0
        top2 = 0
        top3 = 0
        for i in range(n):
            for j in range(ma):
                v = len1[i * m + j]
                resident += v
                top1 = max(top1, v)
                if record:
                    hq1[v] += 1
        for j in range(ma):
            for k in range(n):
                v = len2[j * n + k]
                resident += v
                top2 = max(top2, v)
                if record:
                    hq2[v] += 1
        for k in range(n):
            v = len3[k]
            resident += v
            top3 = max(top3, v)
            if record:
                hq3[v] += 1
        if resident != ctr[C_INJECTED] - ctr[C_DEPARTED]:
            ctr[C_CONSERVATION_BAD] += 1
        e = t // epoch_len
        if e < epoch_max.shape[0]:
            epoch_max[e, 0] = max(epoch_max[e, 0], top1)
            epoch_max[e, 1] = max(epoch_max[e, 1], top2)
            epoch_max[e, 2] = max(epoch_max[e, 2], top3)
        ctr[C_CLOCK] = t + 1
