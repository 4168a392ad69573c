import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp
from scipy.special import gammaln

from bsrlab.ode import (CriticalWindow, conservation_report, estimate_tc, finite_rhs,
                        integrate_q, integrate_rho, pair_weights, susceptibility_path)
from bsrlab.rules import RuleError, RuleSpec, builtin_rule

# blow-up time of the BF susceptibility, from the scipy oracle below
# (DOP853, rtol 1e-12) and frozen here
BF_TC = 0.5881573954


def borel(k, t):
    return np.exp((k - 1) * np.log(k) + (k - 1) * np.log(2 * t) - 2 * t * k - gammaln(k + 1))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 1.0))
def test_bf_pair_weights_closed_form(x):
    W = pair_weights(builtin_rule("bf"), np.array([x, 1 - x]))
    assert W[0, 0] == pytest.approx(2 - x * x, abs=1e-12)
    assert W[0, 1] == pytest.approx(1 - x * x, abs=1e-12)
    assert W[1, 1] == pytest.approx(1 - x * x, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["er4", "bf", "even", "no3"]),
       st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3))
def test_finite_system_conserves_mass(name, w):
    rule = builtin_rule(name)
    v = np.array(w[:rule.cutoff + 1]) + 1e-3
    v /= v.sum()
    assert abs(finite_rhs(rule, v).sum()) < 1e-12


def test_er_closed_form():
    sol = integrate_rho(builtin_rule("er4"), 0.9, kmax=64)
    k = np.arange(1, 65)
    for t in (0.2, 0.5, 0.9):
        assert np.abs(sol.at(t)[1:] - borel(k, t)).max() < 1e-10


def test_finite_and_extended_agree():
    for name in ("bf", "even", "no3"):
        sol = integrate_rho(builtin_rule(name), 0.8, kmax=64)
        assert sol.max_disagreement() < 1e-10


def test_even_rule_has_no_odd_components():
    sol = integrate_rho(builtin_rule("even"), 0.6, kmax=40)
    assert np.abs(sol.rho[:, 3::2]).max() == 0.0


def _bf_oracle():
    # x = density of isolated vertices, y = 1/s_2
    def f(t, z):
        x, y = z
        return [-2 * x * x - 2 * x * (1 - x * x), -2 * (x * x * y * y + 1 - x * x)]

    ev = lambda t, z: z[1]
    ev.terminal = True
    r = solve_ivp(f, (0, 2), [1.0, 1.0], method="DOP853", rtol=1e-12, atol=1e-14, events=ev)
    return r.t_events[0][0]


def test_bf_tc_against_independent_oracle():
    oracle = _bf_oracle()
    assert abs(oracle - BF_TC) < 1e-9
    assert abs(estimate_tc(builtin_rule("bf")).tc - BF_TC) < 1e-8


def test_tc_of_er_and_cutoff_zero_rule():
    assert abs(estimate_tc(builtin_rule("er4")).tc - 0.5) < 1e-9
    k0 = RuleSpec.from_function("k0", 4, 0, lambda p: (2, 3))
    assert abs(estimate_tc(k0).tc - 0.5) < 1e-9


def test_er_susceptibility_path():
    t, s2 = susceptibility_path(builtin_rule("er4"), 0.45)
    assert np.max(np.abs(s2 * (1 - 2 * t) - 1)) < 1e-9


def test_theory_rejects_unbounded():
    with pytest.raises(RuleError):
        estimate_tc(builtin_rule("product"))


def test_window_defaults():
    bf = builtin_rule("bf")
    w = CriticalWindow.default(bf, BF_TC)
    assert w.sigma == pytest.approx(1 / 64)
    assert w.t0 == pytest.approx(BF_TC - 1 / 64)
    assert CriticalWindow.wide(0.5).t0 == pytest.approx(1 / 3)


@pytest.fixture(scope="module")
def bf_q():
    rule = builtin_rule("bf")
    return integrate_q(rule, CriticalWindow.default(rule, BF_TC), h=5e-4, kmax=64, rmax=16)


def test_q_conservation(bf_q):
    rep = conservation_report(bf_q)
    assert rep.mass_drift < 1e-6
    assert rep.class_mismatch < 1e-12
    assert rep.truncation_defect < 1e-6


def test_q_fft_matches_direct():
    rule = builtin_rule("bf")
    w = CriticalWindow.default(rule, BF_TC)
    a = integrate_q(rule, w, h=2e-3, kmax=12, rmax=6)
    b = integrate_q(rule, w, h=2e-3, kmax=12, rmax=6, method="direct")
    assert np.abs(a.q - b.q).max() < 1e-14


def _support_closure(rule, kmax, rmax):
    """(k, r) types a V_S-component can reach, by combinatorial closure."""
    K = rule.cutoff
    types = {(k, 0) for k in range(1, K + 1)}
    cls = lambda kr: kr[0] - 1 if (kr[0] <= K and kr[1] == 0) else K
    while True:
        by = {c: [x for x in types if cls(x) == c] for c in range(K + 1)}
        new = set(types)
        for idx, (j1, j2) in rule.profiles():
            if any(c < K and not by[c] for c in idx):
                continue
            a, b = idx[j1], idx[j2]
            for x in by[a] + ([None] if a == K else []):
                for y in by[b] + ([None] if b == K else []):
                    if x is None and y is None:
                        continue
                    if x is None or y is None:
                        z = x or y
                        m = (z[0], z[1] + 1)
                    else:
                        m = (x[0] + y[0], x[1] + y[1])
                    if m[0] <= kmax and m[1] <= rmax:
                        new.add(m)
        if new == types:
            return types
        types = new


@pytest.mark.parametrize("name", ["bf", "even", "no3"])
def test_q_support_matches_closure(name):
    rule = builtin_rule(name)
    tc = estimate_tc(rule).tc
    sol = integrate_q(rule, CriticalWindow.wide(tc), h=5e-3, kmax=10, rmax=5, method="direct")
    q = sol.q[-1]
    support = {(int(k), int(r)) for k, r in zip(*np.nonzero(q))}
    assert support == _support_closure(rule, 10, 5)
    assert (q >= 0).all()


def test_er_q_criticality():
    rule = builtin_rule("er4")
    sol = integrate_q(rule, CriticalWindow.wide(0.5), h=1e-3, kmax=128, rmax=16, times=[0.5])
    i = int(np.argmin(np.abs(sol.t - 0.5)))
    rho0 = sol.rho_t0
    om = 1 - rho0[1]
    EN = (np.arange(rho0.size) * rho0)[2:].sum() / om
    # truncation of N at k=128 is of order 1e-6 here
    assert sol.u()[i] * EN / om == pytest.approx(1.0, abs=1e-4)
