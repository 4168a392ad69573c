"""Compiled inner loops of the random graph process."""
from __future__ import annotations

import numpy as np
from numba import njit

from .rng import draw_below

# layout of the int64 ``meta`` vector carried with a process state
M_L1 = 0
M_STEPS = 1
M_NCOMP = 2
M_S2 = 3
M_Q02 = 4
META_LEN = 5


@njit(cache=True, inline="always")
def find(parent, v):
    while parent[v] != v:
        parent[v] = parent[parent[v]]
        v = parent[v]
    return v


@njit(cache=True)
def run_steps(parent, csize, cnt, meta, sacc, scomp, key, counter, nsteps,
              arity, cutoff, kind, table, pairs,
              track, is_L, sparent, sk, sr):
    """Advance the process ``nsteps`` rounds; returns the new counter.

    ``sacc``/``scomp`` hold compensated float sums of |C|^r for r = 3, 4, ...
    When ``track`` is set, the V_S-restricted forest (``sparent`` with types
    ``sk``, ``sr`` at roots) and the V_L-V_L edge count are maintained too.
    """
    n = parent.shape[0]
    base = cutoff + 1
    verts = np.empty(arity, dtype=np.int64)
    roots = np.empty(arity, dtype=np.int64)
    nr = sacc.shape[0]
    one = np.uint64(1)
    counter = np.uint64(counter)
    key = np.uint64(key)
    for _ in range(nsteps):
        idx = 0
        mult = 1
        for j in range(arity):
            v = draw_below(key, counter, n)
            counter += one
            verts[j] = v
            r = find(parent, v)
            roots[j] = r
            if kind == 0:
                s = csize[r]
                c = s - 1 if s <= cutoff else cutoff
                idx += c * mult
                mult *= base
        if kind == 0:
            p = table[idx]
        else:
            a = csize[roots[0]]
            b = csize[roots[1]]
            c = csize[roots[2]]
            d = csize[roots[3]]
            if kind == 1:
                p = 0 if a * b <= c * d else 5
            else:
                p = 0 if a + b <= c + d else 5
        j1 = pairs[p, 0]
        j2 = pairs[p, 1]
        u = verts[j1]
        w = verts[j2]
        ru = roots[j1]
        rw = roots[j2]
        if track:
            lu = is_L[u]
            lw = is_L[w]
            if lu and lw:
                meta[M_Q02] += 1
            elif lu or lw:
                x = w if lu else u
                sx = find(sparent, x)
                sr[sx] += 1
            else:
                su = find(sparent, u)
                sw = find(sparent, w)
                if su != sw:
                    if sk[su] < sk[sw]:
                        su, sw = sw, su
                    sparent[sw] = su
                    sk[su] += sk[sw]
                    sr[su] += sr[sw]
        if ru != rw:
            a = csize[ru]
            b = csize[rw]
            if a < b:
                ru, rw = rw, ru
            parent[rw] = ru
            m = a + b
            csize[ru] = m
            cnt[a] -= 1
            cnt[b] -= 1
            cnt[m] += 1
            meta[M_NCOMP] -= 1
            if m > meta[M_L1]:
                meta[M_L1] = m
            meta[M_S2] += 2 * a * b
            fa = float(a)
            fb = float(b)
            fm = float(m)
            pa = fa * fa
            pb = fb * fb
            pm = fm * fm
            for q in range(nr):
                pa *= fa
                pb *= fb
                pm *= fm
                y = (pm - pa - pb) - scomp[q]
                t = sacc[q] + y
                scomp[q] = (t - sacc[q]) - y
                sacc[q] = t
        meta[M_STEPS] += 1
    return counter


@njit(cache=True)
def second_largest(cnt, L1):
    if L1 <= 0:
        return 0
    if cnt[L1] >= 2:
        return L1
    s = L1 - 1
    while s > 0 and cnt[s] == 0:
        s -= 1
    return s


@njit(cache=True)
def component_sizes(parent, csize):
    n = parent.shape[0]
    out = np.empty(n, dtype=np.int64)
    m = 0
    for v in range(n):
        if parent[v] == v:
            out[m] = csize[v]
            m += 1
    return out[:m]


@njit(cache=True)
def vertex_component_sizes(parent, csize):
    n = parent.shape[0]
    out = np.empty(n, dtype=np.int64)
    for v in range(n):
        out[v] = csize[find(parent, v)]
    return out


@njit(cache=True)
def s_types(sparent, sk, sr, is_L):
    """Types (k, r) of all V_S-components, one row per component."""
    n = sparent.shape[0]
    m = 0
    for v in range(n):
        if not is_L[v] and sparent[v] == v:
            m += 1
    out = np.empty((m, 2), dtype=np.int64)
    m = 0
    for v in range(n):
        if not is_L[v] and sparent[v] == v:
            out[m, 0] = sk[v]
            out[m, 1] = sr[v]
            m += 1
    return out
