"""Acceptance criteria, one test each.  Every test prints a single
PASS/FAIL summary line; per-record details follow on indented lines."""
import pytest

from bsrlab import experiments as ex


def _judge(capsys, number, title, records):
    ok = bool(records) and all(r.passed for r in records)
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title}")
        for r in records:
            print("    " + r.line())
    assert ok, "; ".join(r.line() for r in records if not r.passed)


def test_c01_er_critical_time(capsys):
    _judge(capsys, 1, "ER critical time and s_2 path", ex.check_er_tc())


def test_c02_er_survival(capsys):
    _judge(capsys, 2, "ER survival probability and slope at t_c", ex.check_er_survival())


def test_c03_er_tail_constants(capsys):
    _judge(capsys, 3, "ER tail constants theta, psi''", ex.check_er_tail())


def test_c04_er_susceptibility_constants(capsys):
    _judge(capsys, 4, "ER susceptibility constants B_2..B_4", ex.check_er_B())


def test_c05_cross_engine(capsys):
    _judge(capsys, 5, "ODE rho_k vs branching progeny law (ER4, BF)", ex.check_cross_engine())


def test_c06_simulation_vs_ode(capsys):
    _judge(capsys, 6, "BF simulation N_k/n vs ODE, n=1e6",
           ex.check_sim_vs_ode("bf", n=10**6, seeds=5, nsnap=100, kcheck=10))


def test_c07_criticality(capsys):
    _judge(capsys, 7, "E Y at t_c equals 1 (ER4, BF)", ex.check_criticality())


@pytest.mark.slow
def test_c08_two_round_equivalence(capsys):
    _judge(capsys, 8, "G_i vs J(S_i) chi-square, BF n=1e5, 200 runs",
           ex.check_equivalence("bf", n=10**5, runs=200))


@pytest.mark.slow
def test_c09_supercritical(capsys):
    _judge(capsys, 9, "supercritical L1/n and L2/L1, n=1e7",
           ex.check_supercritical(("er4", "bf"), n=10**7, seeds=10, eps=(0.03, 0.05, 0.1)))


@pytest.mark.slow
def test_c10_subcritical_largest(capsys):
    _judge(capsys, 10, "subcritical L1 vs log formula, n=1e7, eps=0.05",
           ex.check_subcritical(("er4", "bf"), n=10**7, seeds=10, eps=0.05))


@pytest.mark.slow
def test_c11_small_components(capsys):
    _judge(capsys, 11, "BF N_k/n profile, k in [16, 64], eps=0.02",
           ex.check_small_components("bf", n=10**7, seeds=10, eps=0.02))


@pytest.mark.slow
def test_c12_critical_tail(capsys):
    _judge(capsys, 12, "BF N_{>=k} k^{1/2}/n at t_c", ex.check_critical_tail("bf", n=10**7, seeds=10))


@pytest.mark.slow
def test_c13_susceptibility(capsys):
    _judge(capsys, 13, "BF subcritical S_2, S_3, n=1e7",
           ex.check_susceptibility("bf", n=10**7, seeds=10, eps=(0.05, 0.1), rs=(2, 3)))


def test_c14_combinatorics(capsys):
    _judge(capsys, 14, "periods and brute-force equivalence", ex.check_combinatorics())
