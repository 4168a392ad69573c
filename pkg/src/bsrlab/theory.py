"""One object holding every theoretical quantity of a bounded-size rule.

The expensive parts (t_c, the q-system on the window, rho up to t1) are
computed lazily and cached.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from . import branching as bp
from .ode import (DEFAULT_H, DEFAULT_KMAX, DEFAULT_RMAX, CriticalWindow, estimate_tc,
                  integrate_q, integrate_rho)
from .rules import RuleSpec, detect_period, resolve_rule

# step of the q-system; it is smooth on the window and 5e-4 keeps RK4 error
# far below every tolerance used downstream
DEFAULT_HQ = 5e-4


@dataclass
class Theory:
    rule: RuleSpec
    h: float = DEFAULT_H
    hq: float = DEFAULT_HQ
    kmax: int = DEFAULT_KMAX
    rmax: int = DEFAULT_RMAX
    wide: bool = True
    dt_out: float = 0.0025
    _pmf_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.rule = resolve_rule(self.rule)

    @cached_property
    def critical(self):
        return estimate_tc(self.rule, h=self.h)

    @property
    def tc(self) -> float:
        return self.critical.tc

    @cached_property
    def period(self) -> int:
        return detect_period(self.rule).period

    @cached_property
    def window(self) -> CriticalWindow:
        if self.wide:
            return CriticalWindow.wide(self.tc)
        return CriticalWindow.default(self.rule, self.tc)

    @cached_property
    def qsol(self):
        return integrate_q(self.rule, self.window, h=self.hq, kmax=self.kmax,
                           rmax=self.rmax, dt_out=self.dt_out, rho_h=self.h)

    @cached_property
    def rho_solution(self):
        return integrate_rho(self.rule, self.window.t1, h=self.h, kmax=self.kmax)

    def offspring(self, t: float) -> bp.OffspringSpec:
        return bp.OffspringSpec.from_solution(self.qsol, t)

    def pmf(self, t: float) -> np.ndarray:
        key = round(float(t), 12)
        if key not in self._pmf_cache:
            self._pmf_cache[key] = bp.total_progeny_pmf(self.offspring(t))
        return self._pmf_cache[key]

    def survival(self, t: float) -> float:
        return bp.survival_probability(self.offspring(t)).rho

    def mean_Y(self, t: float) -> float:
        return bp.mean_Y(self.offspring(t))

    def tail(self, t: float, kmin: int = 32, kmax: int = 128) -> bp.TailFit:
        return bp.fit_tail(self.pmf(t), self.period, kmin, kmax)

    def psi(self, t: float) -> float:
        return self.tail(t).psi

    def theta(self, t: float) -> float:
        return self.tail(t).theta

    @cached_property
    def psi2(self) -> float:
        return bp.psi_second_derivative(self.psi, self.tc)

    def B(self, r: int) -> float:
        return bp.susceptibility_constant(r, self.theta(self.tc), self.psi2, self.period)

    def tail_mass_constant(self) -> float:
        """B with Pr(|bp_{t_c}| >= k) ~ B k^{-1/2}."""
        return 2.0 * self.theta(self.tc) / self.period

    def moment(self, t: float, r: int) -> bp.Moment:
        return bp.moment(self.offspring(t), r, self.pmf(t), self.tail(t), tc=self.tc)


@lru_cache(maxsize=16)
def theory_for(name: str, wide: bool = True) -> Theory:
    """Shared, cached engine for a rule name or rule file."""
    return Theory(resolve_rule(name), wide=wide)
