# cython: boundscheck=False, wraparound=False, cdivision=True
"""Cython core for the work-conserving simulator event loop.

Line-for-line transliteration of flowplace._simpy.run_packed. The two cores
must produce bit-identical event streams for identical packed problems; the
test suite asserts this. Keep them in lockstep when changing either.
"""

from libc.math cimport M_PI, cos, exp, ldexp, log, sqrt
from libc.stdlib cimport free, malloc

from flowplace._simpy import DeadlockError


cdef inline unsigned long long mix64(unsigned long long z) noexcept nogil:
    z = z + 0x9E3779B97F4A7C15ULL
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double jitter_factor(unsigned long long seed, int kind, int a,
                                 int b, int c, double sigma) noexcept nogil:
    cdef unsigned long long h
    cdef double u1, u2, z, two_neg_53
    two_neg_53 = ldexp(1.0, -53)
    h = mix64(seed ^ 0xD1B54A32D192ED03ULL)
    h = mix64(h ^ <unsigned long long> (kind + 1))
    h = mix64(h ^ <unsigned long long> (a + 1))
    h = mix64(h ^ <unsigned long long> (b + 2))
    h = mix64(h ^ <unsigned long long> (c + 2))
    u1 = (<double> (h >> 11) + 0.5) * two_neg_53
    h = mix64(h)
    u2 = (<double> (h >> 11) + 0.5) * two_neg_53
    z = sqrt(-2.0 * log(u1)) * cos(2.0 * M_PI * u2)
    return exp(sigma * z)


def run_packed(int n, int d,
               int[:] pred_indptr, int[:] pred_indices,
               int[:] succ_indptr, int[:] succ_indices,
               unsigned char[:] is_entry, double[:] flops, double[:] obytes,
               int[:] assign, double[:] rates, double[:] bw,
               int[:] eslots, int[:] tslots, double[:] tlev, double[:] blev,
               int strategy, double comm_factor, double sigma, long long seed):
    cdef unsigned long long useed = <unsigned long long> seed
    cdef int v, w, dd, j, i, src, dst, dev, cap, count, nkeep
    cdef int best_kind, best_v, best_a, best_b, have_best
    cdef int task_kind, task_v, task_a, task_b
    cdef double t, dur, key, best_key, tmin
    cdef int remaining, seq, ok

    cdef unsigned char *rdy = <unsigned char *> malloc(n * d)
    cdef unsigned char *begun_exec = <unsigned char *> malloc(n)
    cdef unsigned char *begun_tr = <unsigned char *> malloc(n * d)
    cdef int *exec_free = <int *> malloc(d * sizeof(int))
    cdef int *tr_free = <int *> malloc(d * d * sizeof(int))
    cdef int *cons_indptr = <int *> malloc((n + 1) * sizeof(int))
    cdef int *cons_devs = <int *> malloc((n * d if n * d > 0 else 1) * sizeof(int))
    cdef unsigned char *seen = <unsigned char *> malloc(d)

    cap = n + n * d + 1
    cdef double *fl_end = <double *> malloc(cap * sizeof(double))
    cdef int *fl_kind = <int *> malloc(cap * sizeof(int))
    cdef int *fl_v = <int *> malloc(cap * sizeof(int))
    cdef int *fl_a = <int *> malloc(cap * sizeof(int))
    cdef int *fl_b = <int *> malloc(cap * sizeof(int))

    events = []
    try:
        for i in range(n * d):
            rdy[i] = 0
            begun_tr[i] = 0
        for v in range(n):
            begun_exec[v] = 0
            if is_entry[v]:
                for dd in range(d):
                    rdy[v * d + dd] = 1
        for dd in range(d):
            exec_free[dd] = eslots[dd]
        for i in range(d * d):
            tr_free[i] = tslots[i]

        # Sorted unique consumer devices per vertex: transfer enumeration
        # order is (producer, dst).
        cons_indptr[0] = 0
        i = 0
        for v in range(n):
            for dd in range(d):
                seen[dd] = 0
            for j in range(succ_indptr[v], succ_indptr[v + 1]):
                seen[assign[succ_indices[j]]] = 1
            for dd in range(d):
                if seen[dd]:
                    cons_devs[i] = dd
                    i += 1
            cons_indptr[v + 1] = i

        remaining = 0
        for v in range(n):
            if not is_entry[v]:
                remaining += 1
        t = 0.0
        seq = 0
        count = 0

        while remaining > 0:
            # pick: transfers by (v1, dst), then execs by v2.
            have_best = 0
            best_key = 0.0
            best_kind = 0
            best_v = 0
            best_a = 0
            best_b = 0
            for v in range(n):
                if cons_indptr[v + 1] == cons_indptr[v]:
                    continue
                src = assign[v]
                if not rdy[v * d + src]:
                    continue
                for j in range(cons_indptr[v], cons_indptr[v + 1]):
                    dst = cons_devs[j]
                    i = v * d + dst
                    if rdy[i] or begun_tr[i]:
                        continue
                    if tr_free[src * d + dst] <= 0:
                        continue
                    if strategy == 0:
                        have_best = 1
                        best_kind = 1
                        best_v = v
                        best_a = src
                        best_b = dst
                        break
                    key = tlev[v] if strategy == 1 else blev[v]
                    if (not have_best) or (strategy == 1 and key > best_key) \
                            or (strategy == 2 and key < best_key):
                        have_best = 1
                        best_key = key
                        best_kind = 1
                        best_v = v
                        best_a = src
                        best_b = dst
                if strategy == 0 and have_best:
                    break
            if not (strategy == 0 and have_best):
                for v in range(n):
                    if is_entry[v] or begun_exec[v]:
                        continue
                    dev = assign[v]
                    if exec_free[dev] <= 0:
                        continue
                    ok = 1
                    for j in range(pred_indptr[v], pred_indptr[v + 1]):
                        if not rdy[pred_indices[j] * d + dev]:
                            ok = 0
                            break
                    if not ok:
                        continue
                    if strategy == 0:
                        have_best = 1
                        best_kind = 0
                        best_v = v
                        best_a = dev
                        best_b = -1
                        break
                    key = tlev[v] if strategy == 1 else blev[v]
                    if (not have_best) or (strategy == 1 and key > best_key) \
                            or (strategy == 2 and key < best_key):
                        have_best = 1
                        best_key = key
                        best_kind = 0
                        best_v = v
                        best_a = dev
                        best_b = -1

            if have_best:
                task_kind = best_kind
                task_v = best_v
                task_a = best_a
                task_b = best_b
                if task_kind == 0:
                    dur = flops[task_v] / rates[task_a]
                    if sigma > 0.0:
                        dur *= jitter_factor(useed, 0, task_v, task_a, 0, sigma)
                    exec_free[task_a] -= 1
                    begun_exec[task_v] = 1
                else:
                    dur = obytes[task_v] * comm_factor / bw[task_a * d + task_b]
                    if sigma > 0.0:
                        dur *= jitter_factor(useed, 1, task_v, task_a, task_b, sigma)
                    tr_free[task_a * d + task_b] -= 1
                    begun_tr[task_v * d + task_b] = 1
                events.append((task_kind, task_v, task_a, task_b, t, 0))
                fl_end[count] = t + dur
                fl_kind[count] = task_kind
                fl_v[count] = task_v
                fl_a[count] = task_a
                fl_b[count] = task_b
                count += 1
                seq += 1
                continue

            if count == 0:
                blocked = [v for v in range(n)
                           if not is_entry[v] and not rdy[v * d + assign[v]]]
                raise DeadlockError(t, blocked)

            tmin = fl_end[0]
            for i in range(1, count):
                if fl_end[i] < tmin:
                    tmin = fl_end[i]
            nkeep = 0
            for i in range(count):
                if fl_end[i] != tmin:
                    fl_end[nkeep] = fl_end[i]
                    fl_kind[nkeep] = fl_kind[i]
                    fl_v[nkeep] = fl_v[i]
                    fl_a[nkeep] = fl_a[i]
                    fl_b[nkeep] = fl_b[i]
                    nkeep += 1
                    continue
                if fl_kind[i] == 0:
                    exec_free[fl_a[i]] += 1
                    rdy[fl_v[i] * d + fl_a[i]] = 1
                    remaining -= 1
                else:
                    tr_free[fl_a[i] * d + fl_b[i]] += 1
                    rdy[fl_v[i] * d + fl_b[i]] = 1
                events.append((fl_kind[i], fl_v[i], fl_a[i], fl_b[i], tmin, 1))
            count = nkeep
            t = tmin

        return t, events
    finally:
        free(rdy)
        free(begun_exec)
        free(begun_tr)
        free(exec_free)
        free(tr_free)
        free(cons_indptr)
        free(cons_devs)
        free(seen)
        free(fl_end)
        free(fl_kind)
        free(fl_v)
        free(fl_a)
        free(fl_b)
