"""Pure-Python event loop for the work-conserving simulator.

Reference implementation of the packed-problem core; flowplace._simcore is a
Cython transliteration of this exact loop and must produce bit-identical
event streams. Keep the two in lockstep when changing either.

Event records are (tkind, vertex, a, b, time, etype) tuples with tkind 0 for
exec (a = device, b = -1) and 1 for transfer (a = src, b = dst); etype is
0 for beg, 1 for end.
"""

from __future__ import annotations

from .cluster import jitter_factor

STRATEGY_FIFO = 0
STRATEGY_DEPTH = 1
STRATEGY_BREADTH = 2


class DeadlockError(RuntimeError):
    def __init__(self, time_ms: float, blocked: list[int]):
        self.time_ms = time_ms
        self.blocked = blocked
        super().__init__(
            f"no pending events at t={time_ms} ms with unfinished vertices; "
            f"blocked frontier: {blocked}"
        )


def _natives(x):
    return x.tolist() if hasattr(x, "tolist") else list(x)


def run_packed(n, d, pred_indptr, pred_indices, succ_indptr, succ_indices,
               is_entry, flops, obytes, assign, rates, bw, eslots, tslots,
               tlev, blev, strategy, comm_factor, sigma, seed):
    pred_indptr = _natives(pred_indptr)
    pred_indices = _natives(pred_indices)
    succ_indptr = _natives(succ_indptr)
    succ_indices = _natives(succ_indices)
    is_entry = _natives(is_entry)
    flops = _natives(flops)
    obytes = _natives(obytes)
    assign = _natives(assign)
    rates = _natives(rates)
    bw = _natives(bw)
    tlev = _natives(tlev)
    blev = _natives(blev)

    rdy = bytearray(n * d)
    for v in range(n):
        if is_entry[v]:
            for dd in range(d):
                rdy[v * d + dd] = 1
    begun_exec = bytearray(n)
    begun_tr = bytearray(n * d)
    exec_free = list(eslots)
    tr_free = list(tslots)

    # Sorted unique consumer devices per vertex fixes the transfer
    # enumeration order at (producer, dst).
    cons_devs: list[list[int]] = []
    for v in range(n):
        devs = sorted({assign[w] for w in succ_indices[succ_indptr[v]:succ_indptr[v + 1]]})
        cons_devs.append(devs)

    inflight: list[tuple[float, int, int, int, int, int]] = []
    events: list[tuple[int, int, int, int, float, int]] = []
    remaining = sum(1 for v in range(n) if not is_entry[v])
    t = 0.0
    seq = 0

    def pick():
        best = None
        best_key = 0.0
        for v1 in range(n):
            if not cons_devs[v1] or not rdy[v1 * d + assign[v1]]:
                continue
            src = assign[v1]
            for dst in cons_devs[v1]:
                i = v1 * d + dst
                if rdy[i] or begun_tr[i]:
                    continue
                if tr_free[src * d + dst] <= 0:
                    continue
                if strategy == STRATEGY_FIFO:
                    return (1, v1, src, dst)
                key = tlev[v1] if strategy == STRATEGY_DEPTH else blev[v1]
                if best is None or (strategy == STRATEGY_DEPTH and key > best_key) \
                        or (strategy == STRATEGY_BREADTH and key < best_key):
                    best, best_key = (1, v1, src, dst), key
        for v2 in range(n):
            if is_entry[v2] or begun_exec[v2]:
                continue
            dev = assign[v2]
            if exec_free[dev] <= 0:
                continue
            ok = True
            for j in range(pred_indptr[v2], pred_indptr[v2 + 1]):
                if not rdy[pred_indices[j] * d + dev]:
                    ok = False
                    break
            if not ok:
                continue
            if strategy == STRATEGY_FIFO:
                return (0, v2, dev, -1)
            key = tlev[v2] if strategy == STRATEGY_DEPTH else blev[v2]
            if best is None or (strategy == STRATEGY_DEPTH and key > best_key) \
                    or (strategy == STRATEGY_BREADTH and key < best_key):
                best, best_key = (0, v2, dev, -1), key
        return best

    while remaining > 0:
        task = pick()
        if task is not None:
            tkind, v, a, b = task
            if tkind == 0:
                dur = flops[v] / rates[a]
                if sigma > 0.0:
                    dur *= jitter_factor(seed, 0, v, a, 0, sigma)
                exec_free[a] -= 1
                begun_exec[v] = 1
            else:
                dur = obytes[v] * comm_factor / bw[a * d + b]
                if sigma > 0.0:
                    dur *= jitter_factor(seed, 1, v, a, b, sigma)
                tr_free[a * d + b] -= 1
                begun_tr[v * d + b] = 1
            events.append((tkind, v, a, b, t, 0))
            inflight.append((t + dur, seq, tkind, v, a, b))
            seq += 1
            continue

        if not inflight:
            blocked = [v for v in range(n)
                       if not is_entry[v] and not rdy[v * d + assign[v]]]
            raise DeadlockError(t, blocked)

        tmin = inflight[0][0]
        for rec in inflight:
            if rec[0] < tmin:
                tmin = rec[0]
        still = []
        for rec in inflight:
            if rec[0] != tmin:
                still.append(rec)
                continue
            _, _, tkind, v, a, b = rec
            if tkind == 0:
                exec_free[a] += 1
                rdy[v * d + a] = 1
                remaining -= 1
            else:
                tr_free[a * d + b] += 1
                rdy[v * d + b] = 1
            events.append((tkind, v, a, b, tmin, 1))
        inflight = still
        t = tmin

    return t, events
