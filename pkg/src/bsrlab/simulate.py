"""Monte Carlo simulation of the ℓ-vertex random graph process.

Components are kept in a union-find forest (union by size, path halving)
together with a count of components per size, which yields the largest
components, N_k and the moment sums S_r at any snapshot.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kern
from .rng import CounterRNG, derive_key
from .rules import RuleSpec, resolve_rule

_EMPTY_B = np.zeros(1, dtype=np.bool_)
_EMPTY_I = np.zeros(1, dtype=np.int64)


@dataclass
class RunConfig:
    rule: RuleSpec
    n: int
    snapshot_times: tuple = ()
    seed: int = 0
    run_index: int = 0
    kmax: int = 64
    rmax: int = 4
    track_s: bool = True

    def __post_init__(self):
        self.rule = resolve_rule(self.rule)
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.rmax < 2:
            raise ValueError("rmax must be at least 2")
        ts = tuple(float(t) for t in self.snapshot_times)
        if any(t < 0 for t in ts) or list(ts) != sorted(ts):
            raise ValueError("snapshot times must be non-negative and increasing")
        self.snapshot_times = ts


class ProcessState:
    """Current graph G_i of one run."""

    def __init__(self, n: int, rule: RuleSpec, rmax: int = 4):
        self.n = int(n)
        self.rule = rule
        self.parent = np.arange(n, dtype=np.int64)
        self.csize = np.ones(n, dtype=np.int64)
        self.cnt = np.zeros(n + 1, dtype=np.int64)
        self.cnt[1] = n
        self.meta = np.zeros(kern.META_LEN, dtype=np.int64)
        self.meta[kern.M_L1] = 1
        self.meta[kern.M_NCOMP] = n
        self.meta[kern.M_S2] = n
        self.sacc = np.full(max(rmax - 2, 0), float(n))
        self.scomp = np.zeros(max(rmax - 2, 0))
        self._table = (np.asarray(rule.table, dtype=np.int64) if rule.table is not None
                       else np.zeros(1, dtype=np.int64))
        self._pairs = rule.pair_array()
        # exposure tracking (off until ``start_tracking``)
        self.tracking = False
        self.is_L = _EMPTY_B
        self.sparent = _EMPTY_I
        self.sk = _EMPTY_I
        self.sr = _EMPTY_I

    @property
    def steps(self) -> int:
        return int(self.meta[kern.M_STEPS])

    @property
    def L1(self) -> int:
        return int(self.meta[kern.M_L1])

    def advance(self, rng: CounterRNG, nsteps: int) -> None:
        if nsteps <= 0:
            return
        rule = self.rule
        rng.counter = int(kern.run_steps(
            self.parent, self.csize, self.cnt, self.meta, self.sacc, self.scomp,
            np.uint64(rng.key), np.uint64(rng.counter), int(nsteps),
            rule.arity, rule.cutoff, rule.kind, self._table, self._pairs,
            self.tracking, self.is_L, self.sparent, self.sk, self.sr))

    def start_tracking(self) -> None:
        """Fix V_S/V_L from the current graph and start recording exposure."""
        K = self.rule.cutoff
        vsize = kern.vertex_component_sizes(self.parent, self.csize)
        self.is_L = vsize > K
        n = self.n
        self.sparent = np.arange(n, dtype=np.int64)
        self.sk = np.ones(n, dtype=np.int64)
        self.sr = np.zeros(n, dtype=np.int64)
        # V_S-components at the start coincide with the graph components
        for v in np.flatnonzero(~self.is_L):
            r = kern.find(self.parent, v)
            self.sparent[v] = r
        self.sk[:] = 0
        roots = np.flatnonzero(~self.is_L & (self.sparent == np.arange(n)))
        self.sk[roots] = self.csize[roots]
        self.meta[kern.M_Q02] = 0
        self.tracking = True
        self.L_sizes_at_start = self.csize[np.flatnonzero(
            (self.parent == np.arange(n)) & (self.csize > K))].copy()

    def L2(self) -> int:
        return int(kern.second_largest(self.cnt, self.L1))

    def top_components(self, m: int = 2) -> list[int]:
        out = []
        s = self.L1
        while s > 0 and len(out) < m:
            c = int(self.cnt[s])
            out.extend([s] * min(c, m - len(out)))
            s -= 1
            while s > 0 and self.cnt[s] == 0:
                s -= 1
        return out

    def susceptibility(self) -> list[float]:
        """Normalised moment sums S_r = sum_C |C|^r / n for r = 2..rmax."""
        out = [float(self.meta[kern.M_S2]) / self.n]
        out += [float(x) / self.n for x in self.sacc]
        return out

    def exact_susceptibility(self, r: int) -> int:
        """Exact integer sum of |C|^r, recomputed from the size index."""
        sizes = np.flatnonzero(self.cnt)
        return sum(int(self.cnt[s]) * int(s) ** r for s in sizes)

    def n_k(self, kmax: int) -> np.ndarray:
        """Number of vertices in components of size k, k = 1..kmax."""
        k = np.arange(1, kmax + 1)
        c = np.zeros(kmax, dtype=np.int64)
        m = min(kmax, self.n)
        c[:m] = self.cnt[1:m + 1]
        return c * k

    def component_sizes(self) -> np.ndarray:
        return kern.component_sizes(self.parent, self.csize)


def init_state(n: int, rule, rmax: int = 4) -> ProcessState:
    return ProcessState(n, resolve_rule(rule), rmax)


@dataclass
class StepResult:
    vertices: tuple
    pick: tuple
    merged: bool
    size: int


def apply_step(state: ProcessState, rng: CounterRNG) -> StepResult:
    """One round; reports the drawn vertices and the chosen pair (1-based)."""
    from .rng import _mix_py
    from .rules import evaluate_rule, truncate_profile

    rule = state.rule
    verts = []
    for j in range(rule.arity):
        x = _mix_py(rng.key + (rng.counter + j) * 0x9E3779B97F4A7C15) >> 11
        verts.append(int(float(x) * (1.0 / 9007199254740992.0) * state.n))
    roots = [int(kern.find(state.parent, v)) for v in verts]
    sizes = [int(state.csize[r]) for r in roots]
    prof = sizes if rule.unbounded else truncate_profile(sizes, rule.cutoff)
    pick = evaluate_rule(rule, prof)
    state.advance(rng, 1)
    merged = roots[pick[0] - 1] != roots[pick[1] - 1]
    size = int(state.csize[kern.find(state.parent, verts[pick[0] - 1])])
    return StepResult(tuple(verts), pick, merged, size)


@dataclass
class SnapshotStats:
    t: float
    step: int
    L1: int
    L2: int
    n_omega: int
    S: list
    N: np.ndarray

    def row(self, n: int) -> list:
        return [self.t, self.L1, self.L2, self.n_omega, *self.S, *self.N.tolist()]


@dataclass
class RunResult:
    config: RunConfig
    snapshots: list = field(default_factory=list)

    def array(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.snapshots])


def snapshot(state: ProcessState, t: float, kmax: int) -> SnapshotStats:
    K = state.rule.cutoff
    small = sum(int(state.cnt[k]) * k for k in range(1, min(K, state.n) + 1))
    return SnapshotStats(t=t, step=state.steps, L1=state.L1, L2=state.L2(),
                         n_omega=state.n - small, S=state.susceptibility(),
                         N=state.n_k(kmax))


def run(config: RunConfig) -> RunResult:
    """Run one realisation, taking snapshots at steps floor(t * n)."""
    state = init_state(config.n, config.rule, config.rmax)
    rng = CounterRNG(derive_key(config.seed, config.run_index))
    out = RunResult(config)
    for t in config.snapshot_times:
        target = int(np.floor(t * config.n))
        state.advance(rng, target - state.steps)
        out.snapshots.append(snapshot(state, t, config.kmax))
    return out


def n_threads() -> int:
    try:
        return max(1, int(os.environ.get("BSRLAB_THREADS", "1")))
    except ValueError:
        return 1


def run_many(configs: list[RunConfig]) -> list[RunResult]:
    """Run independent realisations, in parallel when BSRLAB_THREADS > 1."""
    k = n_threads()
    if k == 1 or len(configs) == 1:
        return [run(c) for c in configs]
    with ProcessPoolExecutor(max_workers=k) as ex:
        return list(ex.map(run, configs))


def snapshot_header(kmax: int, rmax: int) -> list[str]:
    return (["t", "L1", "L2", "Nomega"] + [f"S{r}" for r in range(2, rmax + 1)]
            + [f"N_{k}" for k in range(1, kmax + 1)])
