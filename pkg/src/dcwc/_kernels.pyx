# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of :mod:`dcwc._purekernels`; same signatures, same results."""
from libc.stdlib cimport malloc, calloc, free


cdef extern from *:
    int __builtin_popcountll(unsigned long long)


def failure_enumeration(int n_actors, double alpha, holder, rnd, group, signer_ptr, signer_idx, share,
                        int max_round):
    cdef int n_entries = len(holder)
    cdef int n_groups = (max(group) + 1) if n_entries else 0
    cdef int n_sig = len(signer_idx)
    cdef int *h = <int *> malloc(max(n_entries, 1) * sizeof(int))
    cdef int *rr = <int *> malloc(max(n_entries, 1) * sizeof(int))
    cdef int *g = <int *> malloc(max(n_entries, 1) * sizeof(int))
    cdef int *sp = <int *> malloc((n_entries + 1) * sizeof(int))
    cdef int *si = <int *> malloc(max(n_sig, 1) * sizeof(int))
    cdef double *sh = <double *> malloc(max(n_entries, 1) * sizeof(double))
    cdef int *counts = <int *> calloc(max(n_groups, 1), sizeof(int))
    cdef int *live = <int *> malloc(max(n_entries, 1) * sizeof(int))
    cdef int *valid = <int *> malloc(max(n_entries, 1) * sizeof(int))
    cdef double *weights = <double *> malloc((n_actors + 1) * sizeof(double))
    cdef double *payoff = <double *> calloc(max(n_actors, 1), sizeof(double))
    cdef double *p_entry = <double *> calloc(max(n_entries, 1), sizeof(double))
    cdef double p_none = 0.0, w, each
    cdef unsigned long long mask, n_masks = (<unsigned long long> 1) << n_actors
    cdef int i, j, k, r, e, n_live, n_valid, included
    try:
        for i in range(n_entries):
            h[i] = holder[i]
            rr[i] = rnd[i]
            g[i] = group[i]
            sh[i] = share[i]
            sp[i] = signer_ptr[i]
        sp[n_entries] = signer_ptr[n_entries]
        for i in range(n_sig):
            si[i] = signer_idx[i]
        for k in range(n_actors + 1):
            weights[k] = (1.0 - alpha) ** k * alpha ** (n_actors - k)
        for mask in range(n_masks):
            w = weights[__builtin_popcountll(mask)]
            if w == 0.0:
                continue
            included = 0
            for r in range(1, max_round + 1):
                n_live = 0
                for e in range(n_entries):
                    if rr[e] == r and (mask >> h[e]) & 1:
                        live[n_live] = e
                        n_live += 1
                if n_live == 0:
                    continue
                for i in range(n_live):
                    counts[g[live[i]]] += 1
                n_valid = 0
                for i in range(n_live):
                    if counts[g[live[i]]] == 1:
                        valid[n_valid] = live[i]
                        n_valid += 1
                for i in range(n_live):
                    counts[g[live[i]]] = 0
                if n_valid == 0:
                    continue
                each = w / n_valid
                for i in range(n_valid):
                    e = valid[i]
                    p_entry[e] += each
                    for j in range(sp[e], sp[e + 1]):
                        payoff[si[j]] += each * sh[e]
                included = 1
                break
            if not included:
                p_none += w
        return ([payoff[i] for i in range(n_actors)], p_none, [p_entry[i] for i in range(n_entries)])
    finally:
        free(h); free(rr); free(g); free(sp); free(si); free(sh); free(counts)
        free(live); free(valid); free(weights); free(payoff); free(p_entry)


def subset_inclusion(sizes, double alpha, int depth):
    cdef int total = 0, lo = 0, d
    cdef unsigned long long masks[64]
    for d in range(depth):
        masks[d] = (((<unsigned long long> 1) << sizes[d]) - 1) << lo
        lo += sizes[d]
    total = lo
    if total > 62:
        raise ValueError("too many holders for literal enumeration")
    cdef int target = total - sizes[depth - 1]
    cdef double *weights = <double *> malloc((total + 1) * sizeof(double))
    cdef int k
    for k in range(total + 1):
        weights[k] = (1.0 - alpha) ** k * alpha ** (total - k)
    cdef unsigned long long mask, n_masks = (<unsigned long long> 1) << total, last = masks[depth - 1]
    cdef double acc = 0.0
    cdef int first
    try:
        for mask in range(n_masks):
            if not (mask >> target) & 1:
                continue
            first = 0
            while not (mask & masks[first]):
                first += 1
            if first != depth - 1:
                continue
            acc += weights[__builtin_popcountll(mask)] / __builtin_popcountll(mask & last)
        return acc
    finally:
        free(weights)


def greatest_fixpoint(succ, init, commit):
    cdef int n = len(succ), u, v, sweeps = 0, changed
    cdef long long *s = <long long *> malloc(max(n, 1) * sizeof(long long))
    cdef long long *i0 = <long long *> malloc(max(n, 1) * sizeof(long long))
    cdef long long *c = <long long *> malloc(max(n, 1) * sizeof(long long))
    cdef long long *f = <long long *> malloc(max(n, 1) * sizeof(long long))
    cdef long long *inc = <long long *> malloc(max(n, 1) * sizeof(long long))
    cdef long long val
    try:
        for v in range(n):
            s[v] = succ[v]
            i0[v] = init[v]
            c[v] = commit[v]
            f[v] = commit[v]
        while True:
            for v in range(n):
                inc[v] = 0
            for u in range(n):
                if s[u] >= 0:
                    inc[s[u]] += f[u]
            changed = 0
            sweeps += 1
            for v in range(n):
                val = i0[v] + inc[v]
                if c[v] < val:
                    val = c[v]
                if val != f[v]:
                    changed = 1
                    f[v] = val
            if not changed:
                return [f[v] for v in range(n)], sweeps
    finally:
        free(s); free(i0); free(c); free(f); free(inc)
