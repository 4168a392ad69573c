"""Exposure tracking and the random graph J(S) built from a parameter list.

From round i0 on, vertices in components of size <= K are marked V_S and the
rest V_L.  Every V_S-component of the V_S-restricted graph has a type (k, r):
k vertices and r edges to V_L.  The parameter list S_i records

* N_k: vertices of V_L in components of size k of the graph at i0 (k > K),
* Q_{k,r}: number of V_S-components of type (k, r) at round i,
* Q_{0,2}: number of edges added between two V_L vertices since i0.

J(S) attaches each V_S-component's r stubs and each of the Q_{0,2} edges to
uniform V_L vertices; J^Po(S) uses Poisson counts instead.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse, stats
from scipy.sparse.csgraph import connected_components

from . import _kernels as kern
from .rng import CounterRNG, derive_key
from .rules import resolve_rule
from .simulate import init_state


def _count(c):
    # integer counts stay integers; Poissonized lists may carry real means
    return int(c) if float(c) == int(c) else float(c)


@dataclass
class ParameterList:
    n: int
    NL: dict                 # k -> N_k (vertices), k > K
    Q: dict                  # (k, r) -> count, k >= 1
    Q02: int = 0

    @property
    def n_L(self) -> int:
        return int(sum(self.NL.values()))

    @property
    def n_S(self) -> int:
        return int(sum(k * c for (k, _), c in self.Q.items()))

    def size(self) -> int:
        return self.n_L + self.n_S

    def W(self) -> int:
        """sum r(r-1) Q_{k,r} + 2 Q_{0,2}."""
        return int(sum(r * (r - 1) * c for (_, r), c in self.Q.items()) + 2 * self.Q02)

    def with_Q02(self, q02: int) -> "ParameterList":
        return ParameterList(self.n, dict(self.NL), dict(self.Q), int(q02))

    def to_dict(self) -> dict:
        return {"n": self.n,
                "NL": {str(k): int(v) for k, v in sorted(self.NL.items())},
                "Q": [[int(k), int(r), _count(c)] for (k, r), c in sorted(self.Q.items())]
                + [[0, 2, _count(self.Q02)]]}

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterList":
        Q, q02 = {}, 0
        for k, r, c in d["Q"]:
            if k == 0:
                if r != 2:
                    raise ValueError("only (0, 2) is allowed with k = 0")
                q02 = _count(c)
            elif c:
                Q[(int(k), int(r))] = _count(c)
        return cls(int(d["n"]), {int(k): int(v) for k, v in d["NL"].items()}, Q, q02)

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ParameterList":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class ExposureSnapshot:
    step: int
    params: ParameterList
    component_sizes: np.ndarray = field(repr=False)


def track_exposure(rule, n: int, i0: int, steps: list[int], seed: int = 0,
                   run_index: int = 0) -> list[ExposureSnapshot]:
    """Run the process, fix V_S/V_L at round ``i0`` and record the parameter
    list and the real component sizes at each round in ``steps``."""
    rule = resolve_rule(rule)
    steps = sorted(int(s) for s in steps)
    if steps and steps[0] < i0:
        raise ValueError("snapshot rounds must not precede i0")
    state = init_state(n, rule)
    rng = CounterRNG(derive_key(seed, run_index))
    state.advance(rng, i0)
    state.start_tracking()
    sizes0 = state.L_sizes_at_start
    ks, cnts = np.unique(sizes0, return_counts=True)
    NL = {int(k): int(k * c) for k, c in zip(ks, cnts)}
    out = []
    for s in steps:
        state.advance(rng, s - state.steps)
        types = kern.s_types(state.sparent, state.sk, state.sr, state.is_L)
        Q = {}
        if types.size:
            uniq, c = np.unique(types, axis=0, return_counts=True)
            Q = {(int(k), int(r)): int(x) for (k, r), x in zip(uniq, c)}
        params = ParameterList(n, dict(NL), Q, int(state.meta[kern.M_Q02]))
        out.append(ExposureSnapshot(s, params, state.component_sizes()))
    return out


# ------------------------------------------------------------ J(S), J^Po(S)

def _L_layout(params: ParameterList):
    ks = sorted(params.NL)
    sizes = np.concatenate([np.full(params.NL[k] // k, k, dtype=np.int64) for k in ks]) \
        if ks else np.zeros(0, dtype=np.int64)
    return sizes, np.cumsum(sizes)


def sample_graph(params: ParameterList, rng: np.random.Generator,
                 poissonized: bool = False) -> np.ndarray:
    """Component sizes of one draw of J(S) (or J^Po(S))."""
    if not poissonized and any(float(c) != int(c) for c in list(params.Q.values()) + [params.Q02]):
        raise ValueError("fractional Q requires poissonized mode")
    Lsizes, cum = _L_layout(params)
    nL = int(cum[-1]) if cum.size else 0
    CL = Lsizes.size
    keys = list(params.Q)
    counts = np.array([params.Q[k] for k in keys], dtype=float)
    if poissonized:
        counts = rng.poisson(counts)
        q02 = int(rng.poisson(params.Q02))
    else:
        counts = counts.astype(np.int64)
        q02 = int(params.Q02)
    pk = np.repeat(np.array([k for k, _ in keys], dtype=np.int64), counts)
    pr = np.repeat(np.array([r for _, r in keys], dtype=np.int64), counts)
    npieces = pk.size
    node_size = np.concatenate([Lsizes, pk])
    total_stubs = int(pr.sum())
    if (total_stubs or q02) and nL == 0:
        raise ValueError("stubs present but V_L is empty")
    src = np.concatenate([CL + np.repeat(np.arange(npieces), pr),
                          np.searchsorted(cum, rng.integers(0, max(nL, 1), q02), side="right")])
    dst = np.searchsorted(cum, rng.integers(0, max(nL, 1), total_stubs + q02), side="right")
    m = CL + npieces
    g = sparse.coo_matrix((np.ones(src.size), (src, dst)), shape=(m, m))
    _, lab = connected_components(g, directed=False)
    return np.bincount(lab, weights=node_size).astype(np.int64)


def explore(params: ParameterList, rng: np.random.Generator, cap: int = 10**7) -> int:
    """Size of the component of a uniform vertex in J^Po(S), found by
    exploring V_L vertex by vertex and revealing Poisson numbers of
    hyperedges through each one."""
    Lsizes, cum = _L_layout(params)
    L = int(cum[-1]) if cum.size else 0
    starts = np.concatenate([[0], cum[:-1]]) if cum.size else np.zeros(0, dtype=np.int64)
    keys = sorted(params.Q)
    rmax = max([r for _, r in keys] + [2])
    by_r = [[] for _ in range(rmax + 1)]
    for (k, r), c in params.Q.items():
        if r >= 1:
            by_r[r].append((k, c))
    if params.Q02:
        by_r[2].append((0, params.Q02))
    rate_r = np.array([sum(c for _, c in b) for b in by_r], dtype=float)
    kdist = []
    for b in by_r:
        if b:
            ks = np.array([k for k, _ in b])
            w = np.array([c for _, c in b], dtype=float)
            kdist.append((ks, w / w.sum()))
        else:
            kdist.append(None)
    rs = np.arange(rmax + 1)
    reached = set()
    queue = []
    total = 0

    def reach(comp):
        nonlocal total
        if comp not in reached:
            reached.add(comp)
            total += int(Lsizes[comp])
            queue.extend(range(int(starts[comp]), int(cum[comp])))

    u = rng.random() * params.size()
    if u < L:
        reach(int(np.searchsorted(cum, int(u), side="right")))
    else:
        items = [(k, r, k * c) for (k, r), c in params.Q.items()]
        w = np.array([x[2] for x in items], dtype=float)
        k, r, _ = items[rng.choice(len(items), p=w / w.sum())]
        total += k
        for x in rng.integers(0, L, r) if r else []:
            reach(int(np.searchsorted(cum, x, side="right")))
    explored = set()
    while queue and total <= cap:
        v = queue.pop()
        e = len(explored)
        rem = L - e
        with np.errstate(invalid="ignore"):
            frac = (rem / L) ** rs - ((rem - 1) / L) ** rs
        frac[0] = 0.0
        hits = rng.poisson(rate_r * frac)
        for r in np.flatnonzero(hits):
            ks, p = kdist[r]
            mw = np.array([math.comb(int(r), m) * float(rem - 1) ** (-m) if rem > 1 else
                           (1.0 if m == r else 0.0) for m in range(1, r + 1)])
            for _ in range(int(hits[r])):
                total += int(ks[rng.choice(ks.size, p=p)]) if ks.size > 1 else int(ks[0])
                m = 1 + rng.choice(r, p=mw / mw.sum())
                for _ in range(r - m):
                    while True:
                        x = int(rng.integers(0, L))
                        if x != v and x not in explored:
                            break
                    reach(int(np.searchsorted(cum, x, side="right")))
        explored.add(v)
    return total


# ------------------------------------------------------- equivalence test

N_SMALL = 16


def _categories(sizes: np.ndarray) -> np.ndarray:
    """Counts of components of size 1..16, of size > 16 other than the
    largest, and a one-hot log2 bucket of the largest size (40 buckets)."""
    out = np.zeros(N_SMALL + 1 + 40)
    c = np.bincount(sizes, minlength=N_SMALL + 1)
    out[:N_SMALL] = c[1:N_SMALL + 1]
    big = int(sizes.max()) if sizes.size else 0
    out[N_SMALL] = max(int((sizes > N_SMALL).sum()) - (1 if big > N_SMALL else 0), 0)
    out[N_SMALL + 1 + min(int(np.log2(max(big, 1))), 39)] += 1
    return out


def _merge_small(table: np.ndarray, min_expected: float = 5.0) -> np.ndarray:
    """Merge adjacent columns until every expected count is at least 5."""
    cols = [table[:, j].astype(float) for j in range(table.shape[1]) if table[:, j].sum() > 0]
    tot = table.sum()
    rows = table.sum(axis=1)

    def ok(c):
        return (np.outer(rows, [c.sum()]) / tot).min() >= min_expected

    merged = []
    acc = None
    for c in cols:
        acc = c if acc is None else acc + c
        if ok(acc):
            merged.append(acc)
            acc = None
    if acc is not None:
        if merged:
            merged[-1] = merged[-1] + acc
        else:
            merged.append(acc)
    return np.array(merged).T


def chi_square(a: np.ndarray, b: np.ndarray) -> tuple[float, int, float]:
    """Homogeneity test of two category-count vectors; returns (p, dof, statistic)."""
    table = np.vstack([a, b])
    table = _merge_small(table)
    if table.shape[1] < 2:
        return 1.0, 0, 0.0
    res = stats.chi2_contingency(table, correction=False)
    return float(res.pvalue), int(res.dof), float(res.statistic)


CATEGORY_NAMES = ([f"N_{k}" for k in range(1, N_SMALL + 1)] + [f"N_>{N_SMALL}"]
                  + [f"L1_in_[2^{b},2^{b + 1})" for b in range(40)])


@dataclass
class EquivalenceResult:
    p_value: float
    p_corrupted: float
    p_self: float
    runs: int
    dof: int
    statistic: float = 0.0
    counts: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {"p_value": self.p_value, "statistic": self.statistic, "dof": self.dof,
                "p_corrupted": self.p_corrupted, "p_self": self.p_self, "runs": self.runs,
                "counts": self.counts}


def equivalence_test(rule, n: int, t: float, t0: float, runs: int = 200,
                     seed: int = 0) -> EquivalenceResult:
    """Compare G_i with J(S_i) at i = floor(t n) over ``runs`` paired runs.

    Component counts (sizes 1..16, >16) and log2-buckets of the largest
    component are pooled over runs and compared with a chi-square
    homogeneity test.  A second test uses S_i with Q_{0,2} doubled (must be
    rejected) and a third compares two independent draws of J(S_i).
    """
    rule = resolve_rule(rule)
    if runs < 1:
        raise ValueError("equivalence test needs at least one run")
    if runs < 50:
        warnings.warn(f"only {runs} runs; the chi-square test has little power below 50")
    i0, i = int(np.floor(t0 * n)), int(np.floor(t * n))
    G = np.zeros(N_SMALL + 41)
    J = np.zeros_like(G)
    Jc = np.zeros_like(G)
    J2 = np.zeros_like(G)
    gen = np.random.Generator(np.random.Philox(key=derive_key(seed, 10**6)))
    for j in range(runs):
        snap = track_exposure(rule, n, i0, [i], seed=seed, run_index=j)[0]
        p = snap.params
        G += _categories(snap.component_sizes)
        J += _categories(sample_graph(p, gen))
        J2 += _categories(sample_graph(p, gen))
        Jc += _categories(sample_graph(p.with_Q02(2 * p.Q02), gen))
    p, dof, stat = chi_square(G, J)
    pc, _, _ = chi_square(G, Jc)
    ps, _, _ = chi_square(J, J2)
    keep = (G + J + Jc) > 0
    counts = {name: {"G": int(g), "J": int(j), "J_corrupted": int(c)}
              for name, g, j, c, k in zip(CATEGORY_NAMES, G, J, Jc, keep) if k}
    return EquivalenceResult(p, pc, ps, runs, dof, stat, counts)


def tail_diagnostics(params: ParameterList) -> dict:
    """Decay of the V_S type counts: total count with k + r = m for each m,
    and the fitted exponential rate of that profile."""
    by_m: dict = {}
    for (k, r), c in params.Q.items():
        by_m[k + r] = by_m.get(k + r, 0) + c
    ms = np.array(sorted(by_m))
    cs = np.array([by_m[m] for m in ms], dtype=float)
    rate = float("nan")
    if ms.size >= 3:
        rate = float(-np.polyfit(ms, np.log(cs), 1)[0])
    return {"max_k_plus_r": int(ms.max()) if ms.size else 0,
            "profile": {int(m): int(c) for m, c in zip(ms, cs)},
            "decay_rate": rate,
            "W": params.W()}
