"""Command line front end.

Exit codes: 0 success, 1 acceptance failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .rules import RuleError, resolve_rule


def _writer(path):
    if path is None or str(path) == "-":
        return sys.stdout, False
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return open(p, "w", encoding="utf-8", newline=""), True


def _emit_rows(header, rows, out=None):
    f, close = _writer(out)
    w = csv.writer(f, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    if close:
        f.close()


def _emit_json(obj, out=None):
    f, close = _writer(out)
    f.write(json.dumps(obj, indent=1, default=float) + "\n")
    if close:
        f.close()


def _size(x: str) -> int:
    """Vertex counts may be written as 1e6."""
    v = float(x)
    if v != int(v) or v < 1:
        raise argparse.ArgumentTypeError(f"invalid size {x!r}")
    return int(v)


def _theory_rule(name):
    rule = resolve_rule(name)
    if rule.unbounded:
        raise RuleError("theory requires bounded-size rule")
    return rule


def _theory(a):
    from .ode import DEFAULT_H, DEFAULT_KMAX
    from .theory import Theory, theory_for

    rule = _theory_rule(a.rule)
    if a.h == DEFAULT_H and a.kmax == DEFAULT_KMAX:
        return theory_for(a.rule)
    return Theory(rule, h=a.h, kmax=a.kmax)


# ---------------------------------------------------------------- handlers

def cmd_simulate(a):
    from .simulate import RunConfig, run_many, snapshot_header

    rule = resolve_rule(a.rule)
    times = tuple(np.linspace(a.tmax / a.snapshots, a.tmax, a.snapshots))
    cfgs = [RunConfig(rule, a.n, times, seed=a.seed + s, kmax=a.kmax, rmax=a.rmax)
            for s in range(a.seeds)]
    results = run_many(cfgs)
    out = Path(a.out) if a.out else None
    for res in results:
        c = res.config
        rows = [s.row(c.n) for s in res.snapshots]
        meta = {"rule": rule.name, "n": c.n, "seed": c.seed, "run_index": c.run_index,
                "snapshot_steps": [s.step for s in res.snapshots], "kmax": c.kmax,
                "rmax": c.rmax, "version": __version__}
        if out is None:
            _emit_rows(snapshot_header(c.kmax, c.rmax), rows)
            continue
        stem = out / f"{rule.name}_n{c.n}_seed{c.seed}"
        if a.format == "json":
            _emit_json({"meta": meta, "header": snapshot_header(c.kmax, c.rmax), "rows": rows},
                       stem.with_suffix(".json"))
        else:
            _emit_rows(snapshot_header(c.kmax, c.rmax), rows, stem.with_suffix(".csv"))
            _emit_json(meta, stem.with_suffix(".meta.json"))
    return 0


def cmd_ode(a):
    from .ode import estimate_tc, integrate_rho

    rule = _theory_rule(a.rule)
    if a.what == "tc":
        _emit_json(estimate_tc(rule, h=a.h).as_dict(), a.out)
    elif a.what == "rho":
        sol = integrate_rho(rule, a.tmax, h=a.h, kmax=a.kmax)
        stride = max(1, int(round(a.dt / sol.h)))
        idx = np.arange(0, len(sol.t), stride)
        header = ["t", "rho_w"] + [f"rho_{k}" for k in range(1, a.kmax + 1)]
        rows = [[sol.t[i], sol.rho_c[i, -1], *sol.rho[i, 1:]] for i in idx]
        _emit_rows(header, rows, a.out)
    else:
        th = _theory(a)
        t = th.tc if a.t is None else a.t
        q, q02 = th.qsol.q_at(t)
        rows = [[0, 2, q02]] + [[k, r, q[k, r]] for k, r in zip(*np.nonzero(q))]
        _emit_rows(["k", "r", "q"], rows, a.out)
    return 0


def cmd_bp(a):
    from . import branching as bp

    th = _theory(a)
    t = th.tc if a.t is None else a.t
    if a.what == "survival":
        s = bp.survival_probability(th.offspring(t))
        _emit_json({"t": t, "rho": s.rho, "rho1": s.rho1, "iterations": s.iterations}, a.out)
    elif a.what == "pmf":
        p = th.pmf(t)
        _emit_rows(["k", "p"], [[k, p[k]] for k in range(1, len(p))], a.out)
    elif a.what == "tail":
        f = th.tail(t)
        _emit_json({"t": t, "theta": f.theta, "psi": f.psi, "period": f.period,
                    "kmin": f.kmin, "kmax": f.kmax}, a.out)
    else:
        try:
            m = th.moment(t, a.r)
        except bp.SupercriticalError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        _emit_json({"t": t, "r": a.r, "moment": m.value, "tail_part": m.tail}, a.out)
    return 0


def cmd_exposure(a):
    from .exposure import ParameterList, equivalence_test, sample_graph, track_exposure
    from .ode import CriticalWindow

    if a.what == "sample":
        if not a.params:
            print("error: exposure sample needs --params", file=sys.stderr)
            return 2
        p = ParameterList.load(a.params)
        gen = np.random.default_rng(a.seed)
        sizes = np.sort(sample_graph(p, gen, poissonized=a.poisson))[::-1]
        _emit_rows(["size"], [[int(s)] for s in sizes], a.out)
        return 0
    th = _theory(a)
    rule = th.rule
    win = CriticalWindow.default(rule, th.tc)
    t = th.tc if a.t is None else a.t
    if a.what == "track":
        snap = track_exposure(rule, a.n, int(win.t0 * a.n), [int(t * a.n)], seed=a.seed)[0]
        _emit_json(snap.params.to_dict(), a.out)
    else:
        res = equivalence_test(rule, a.n, t, win.t0, runs=a.runs, seed=a.seed)
        _emit_json(res.to_dict(), a.out)
        return 0 if (res.p_value >= 0.01 and res.p_corrupted < 1e-3) else 1
    return 0


def cmd_verify(a):
    from .experiments import records_to_json, run_suite

    try:
        recs = run_suite(a.suite)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 2
    for r in recs:
        print(r.line(), file=sys.stderr)
    f, close = _writer(a.out)
    f.write(records_to_json(recs) + "\n")
    if close:
        f.close()
    return 0 if all(r.passed for r in recs) else 1


def cmd_report(a):
    from .experiments import (PLOT_SCRIPT, ExperimentPlan, figure_curves, records_to_csv,
                              records_to_json, run_experiment)

    rules = [x for x in a.rule.split(",") if x]
    eps = [float(x) for x in a.eps.split(",") if x]
    out = Path(a.out) if a.out else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    bounded = [r for r in rules if not resolve_rule(r).unbounded]
    recs = run_experiment(ExperimentPlan(bounded, a.n, eps, seeds=a.seeds)) if eps else []
    if a.format == "json":
        (out / "records.json").write_text(records_to_json(recs), encoding="utf-8")
    else:
        (out / "records.csv").write_text(records_to_csv(recs), encoding="utf-8")
    tgrid = np.linspace(0.0, a.tmax, 61)[1:]
    (out / "curves.csv").write_text(figure_curves(rules, a.n, tgrid, a.seeds), encoding="utf-8")
    (out / "plot_curves.py").write_text(PLOT_SCRIPT, encoding="utf-8")
    for r in recs:
        print(r.line())
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bsrlab", description="Bounded-size rule laboratory")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, theory=True):
        sp.add_argument("--rule", default="bf")
        sp.add_argument("--out", default=None)
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        sp.add_argument("--seed", type=int, default=0)
        if theory:
            sp.add_argument("--h", type=float, default=1e-4)
            sp.add_argument("--kmax", type=int, default=256)

    s = sub.add_parser("simulate", help="run the random graph process")
    common(s, theory=False)
    s.add_argument("--n", type=_size, default=10**5)
    s.add_argument("--tmax", type=float, default=1.0)
    s.add_argument("--seeds", type=int, default=1)
    s.add_argument("--snapshots", type=int, default=100)
    s.add_argument("--kmax", type=int, default=64)
    s.add_argument("--rmax", type=int, default=4)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("ode", help="deterministic limits")
    s.add_argument("what", choices=("rho", "tc", "q"))
    common(s)
    s.add_argument("--tmax", type=float, default=1.0)
    s.add_argument("--dt", type=float, default=0.01)
    s.add_argument("--t", type=float, default=None)
    s.set_defaults(func=cmd_ode)

    s = sub.add_parser("bp", help="branching process quantities")
    s.add_argument("what", choices=("survival", "pmf", "tail", "moments"))
    common(s)
    s.add_argument("--t", type=float, default=None)
    s.add_argument("--r", type=int, default=2)
    s.set_defaults(func=cmd_bp)

    s = sub.add_parser("exposure", help="two-round exposure tools")
    s.add_argument("what", choices=("track", "sample", "equiv"))
    common(s)
    s.add_argument("--n", type=_size, default=10**5)
    s.add_argument("--t", type=float, default=None)
    s.add_argument("--runs", type=int, default=200)
    s.add_argument("--params", default=None)
    s.add_argument("--poisson", action="store_true")
    s.set_defaults(func=cmd_exposure)

    s = sub.add_parser("verify", help="run an acceptance suite")
    s.add_argument("suite")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("report", help="experiment records and L1 curves")
    common(s, theory=False)
    s.add_argument("--n", type=_size, default=10**6)
    s.add_argument("--eps", default="0.05")
    s.add_argument("--seeds", type=int, default=3)
    s.add_argument("--tmax", type=float, default=1.0)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    try:
        return int(a.func(a))
    except (RuleError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        # reader went away (e.g. piped into head); silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0


if __name__ == "__main__":
    sys.exit(main())
