import math

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.special import gammaln

from bsrlab import branching as bp
from bsrlab.ode import CriticalWindow, integrate_q, integrate_rho
from bsrlab.rules import builtin_rule


def borel(k, t):
    return np.exp((k - 1) * np.log(k) + (k - 1) * np.log(2 * t) - 2 * t * k - gammaln(k + 1))


@pytest.fixture(scope="module")
def er_small():
    rule = builtin_rule("er4")
    return integrate_q(rule, CriticalWindow.wide(0.5), h=1e-3, kmax=96, rmax=16,
                       times=[0.45, 0.5, 0.6])


@pytest.fixture(scope="module")
def bf_small():
    rule = builtin_rule("bf")
    from bsrlab.ode import estimate_tc
    tc = estimate_tc(rule).tc
    return integrate_q(rule, CriticalWindow.wide(tc), h=1e-3, kmax=96, rmax=16)


def test_initial_time_reproduces_rho(er_small):
    spec = bp.OffspringSpec.from_solution(er_small, er_small.window.t0)
    pmf = bp.total_progeny_pmf(spec)
    assert np.abs(pmf[1:] - er_small.rho_t0[1:]).max() < 1e-15


@pytest.mark.parametrize("t", [0.4, 0.45, 0.5, 0.6])
def test_er_progeny_is_borel(er_small, t):
    pmf = bp.total_progeny_pmf(bp.OffspringSpec.from_solution(er_small, t))
    k = np.arange(1, pmf.size)
    assert np.abs(pmf[1:] - borel(k, t)).max() < 1e-7


def test_bf_progeny_matches_ode(bf_small):
    sol = integrate_rho(builtin_rule("bf"), bf_small.window.t1, kmax=96)
    for t in bf_small.t[::20]:
        pmf = bp.total_progeny_pmf(bp.OffspringSpec.from_solution(bf_small, t))
        assert np.abs(pmf[1:] - sol.at(t)[1:]).max() < 1e-6


def test_pgf_normalisation_and_mean(bf_small):
    spec = bp.OffspringSpec.from_solution(bf_small, bf_small.t[40])
    # mass is lost only through the truncation of N and of the (k, r) table
    tol = 2 * spec.truncation_defect() * (1 + bp.mean_Y(spec))
    assert bp.pgf_eval(spec, 1.0, 1.0) == pytest.approx(1.0, abs=tol)
    assert bp.pgf0_eval(spec, 1.0, 1.0) == pytest.approx(1.0, abs=tol)
    d = 1e-6
    num = (bp.pgf_eval(spec, 1.0, 1.0) - bp.pgf_eval(spec, 1.0 - d, 1.0)) / d
    assert num == pytest.approx(bp.mean_Y(spec), rel=1e-4)


def test_er_survival(er_small):
    spec = bp.OffspringSpec.from_solution(er_small, 0.6)
    exact = brentq(lambda r: 1 - r - math.exp(-1.2 * r), 1e-3, 1)
    assert bp.survival_probability(spec).rho == pytest.approx(exact, abs=1e-6)
    sub = bp.OffspringSpec.from_solution(er_small, 0.45)
    assert bp.survival_probability(sub).rho == 0.0


def test_sampler_matches_exact_pmf(er_small):
    spec = bp.OffspringSpec.from_solution(er_small, 0.45)
    pmf = bp.total_progeny_pmf(spec)
    n = 200_000
    x = bp.sample_total_progeny(spec, n, seed=1)
    for k in range(1, 21):
        f = (x == k).mean()
        sd = math.sqrt(pmf[k] * (1 - pmf[k]) / n)
        assert abs(f - pmf[k]) < 5 * sd + 1e-12


def test_sampler_supercritical_fraction(er_small):
    spec = bp.OffspringSpec.from_solution(er_small, 0.6)
    rho = bp.survival_probability(spec).rho
    n = 20_000
    x = bp.sample_total_progeny(spec, n, seed=2, cap=5000)
    f = (x < 0).mean()
    assert abs(f - rho) < 4 * math.sqrt(rho * (1 - rho) / n)


def test_fit_tail_on_synthetic_pmf():
    k = np.arange(0, 200)
    p = np.zeros(200)
    p[1:] = 0.3 * k[1:] ** -1.5 * np.exp(-0.02 * k[1:])
    f = bp.fit_tail(p)
    assert f.theta == pytest.approx(0.3, rel=1e-10)
    assert f.psi == pytest.approx(0.02, rel=1e-10)
    q = p.copy()
    q[1::2] = 0.0
    g = bp.fit_tail(q, period=2)
    assert g.theta == pytest.approx(0.3, rel=1e-10)


def test_psi_second_derivative_of_quadratic():
    assert bp.psi_second_derivative(lambda t: 3.0 * (t - 0.4) ** 2, 0.4) == pytest.approx(6.0)


def test_susceptibility_constants_er():
    theta = 1 / math.sqrt(2 * math.pi)
    assert bp.susceptibility_constant(2, theta, 4.0) == pytest.approx(0.5)
    assert bp.susceptibility_constant(3, theta, 4.0) == pytest.approx(1 / 8)
    assert bp.susceptibility_constant(4, theta, 4.0) == pytest.approx(3 / 32)
    assert [bp.double_factorial(x) for x in (-1, 0, 1, 3, 5)] == [1, 1, 1, 3, 15]


def test_moment_below_tc(er_small):
    spec = bp.OffspringSpec.from_solution(er_small, 0.4)
    m = bp.moment(spec, 2, tc=0.5)
    # E|bp_t| = s_2(t) = 1/(1-2t)
    assert m.value == pytest.approx(5.0, rel=1e-3)
    with pytest.raises(bp.SupercriticalError):
        bp.moment(bp.OffspringSpec.from_solution(er_small, 0.6), 2, tc=0.5)


def test_window_guard(er_small):
    with pytest.raises(ValueError):
        bp.OffspringSpec.from_solution(er_small, 0.2)
