import math

import numpy as np
from hypothesis import given, settings, strategies as st

from bsrlab._kernels import find
from bsrlab.experiments import brute_force_trace, compiled_trace
from bsrlab.rng import CounterRNG, _mix_py, derive_key, draw_below, draw_u64
from bsrlab.rules import builtin_rule
from bsrlab.simulate import RunConfig, apply_step, init_state, run, snapshot_header


def test_compiled_and_python_draws_agree():
    key = derive_key(7, 3)
    for c in range(20):
        assert int(draw_u64(np.uint64(key), np.uint64(c))) == _mix_py(key + c * 0x9E3779B97F4A7C15)
        x = _mix_py(key + c * 0x9E3779B97F4A7C15) >> 11
        assert draw_below(np.uint64(key), np.uint64(c), 1000) == int(x / 2**53 * 1000)


def test_streams_differ_by_run_index():
    assert derive_key(1, 0) != derive_key(1, 1) != derive_key(2, 0)
    r = CounterRNG.from_seed(1)
    assert r.split(0).key != r.split(1).key


def _check_invariants(state):
    sizes = state.component_sizes()
    assert sizes.sum() == state.n
    assert state.L1 == sizes.max()
    cnt = np.bincount(sizes, minlength=state.n + 1)
    assert np.array_equal(cnt, state.cnt)
    assert int(state.meta[3]) == int((sizes.astype(object) ** 2).sum())
    assert state.exact_susceptibility(3) == int((sizes.astype(object) ** 3).sum())
    top = sorted(sizes.tolist(), reverse=True)
    assert state.top_components(2) == top[:2]
    if len(top) > 1:
        assert state.L2() == top[1]


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["er4", "bf", "even", "no3", "product", "sum"]),
       st.integers(1, 300), st.integers(0, 600), st.integers(0, 10**6))
def test_state_invariants(rule, n, steps, seed):
    state = init_state(n, builtin_rule(rule))
    state.advance(CounterRNG.from_seed(seed), steps)
    _check_invariants(state)
    s3 = state.susceptibility()[1] * n
    assert math.isclose(s3, state.exact_susceptibility(3), rel_tol=1e-12)


def test_apply_step_reports_the_rule_choice():
    state = init_state(50, builtin_rule("bf"))
    rng = CounterRNG.from_seed(5)
    for _ in range(80):
        before = [find(state.parent, v) for v in range(50)]
        res = apply_step(state, rng)
        u, w = (res.vertices[j - 1] for j in res.pick)
        assert res.merged == (before[u] != before[w])
        assert find(state.parent, u) == find(state.parent, w)


def test_brute_force_equivalence_small():
    for rule in ["bf", "product", "no3"]:
        for n in range(1, 9):
            for s in range(5):
                assert brute_force_trace(rule, n, 2 * n, s) == compiled_trace(rule, n, 2 * n, s)


def test_snapshots_at_floor_tn_and_reproducible():
    cfg = RunConfig("bf", 1001, (0.1, 0.5, 0.5, 0.9), seed=3, kmax=5)
    a, b = run(cfg), run(cfg)
    assert [s.step for s in a.snapshots] == [100, 500, 500, 900]
    assert [s.L1 for s in a.snapshots] == [s.L1 for s in b.snapshots]
    other = run(RunConfig("bf", 1001, (0.9,), seed=4))
    assert len(snapshot_header(5, 4)) == 4 + 3 + 5
    assert a.snapshots[-1].L1 != other.snapshots[0].L1 or a.snapshots[-1].S != other.snapshots[0].S


def test_er_isolated_fraction():
    # N_1(tn)/n -> exp(-2t) for the ER process
    n = 200_000
    res = run(RunConfig("er4", n, (0.25, 0.5), seed=11, kmax=1))
    for s in res.snapshots:
        assert abs(s.N[0] / n - math.exp(-2 * s.t)) < 5 / math.sqrt(n)


def test_threads_env_runs_in_parallel(monkeypatch):
    from bsrlab.simulate import run_many
    monkeypatch.setenv("BSRLAB_THREADS", "2")
    cfgs = [RunConfig("er4", 2000, (0.6,), seed=s) for s in range(2)]
    par = run_many(cfgs)
    monkeypatch.setenv("BSRLAB_THREADS", "1")
    ser = run_many(cfgs)
    assert [r.snapshots[0].L1 for r in par] == [r.snapshots[0].L1 for r in ser]


def test_er_isolated_vertices_at_one_million():
    n = 10**6
    s = run(RunConfig("er4", n, (0.3,), seed=2, kmax=1)).snapshots[0]
    assert abs(s.N[0] / n - math.exp(-0.6)) <= 3 * math.log(n) / math.sqrt(n)


def test_er_critical_largest_component_scale():
    n = 10**6
    from bsrlab.simulate import run_many
    res = run_many([RunConfig("er4", n, (0.5,), seed=s, kmax=1) for s in range(50)])
    L = np.array([r.snapshots[0].L1 for r in res])
    c = n ** (2 / 3)
    assert ((L >= c / 20) & (L <= 20 * c)).mean() >= 0.95
