"""Two-type branching process bp_t approximating component sizes near t_c.

L-particles stand for V_L-components; each has a random number of
(k, r)-hyperedges, every one of which brings k S-particles (no offspring)
and r-1 further V_L-components.  The offspring law is read off from
rho_k(t0) and the q-system at time t:

* N, the size of a V_L-component:  Pr(N = y) = rho_y(t0) / rho_omega(t0), y > K
* H_{k,r} ~ Poisson(lambda_{k,r}),   lambda_{k,r} = r q_{k,r}(t) / rho_omega(t0)

and the first generation is drawn from rho_y(t0) (y > K) or z q_{z,r}(t).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .ode import QSolution, TheoryError


class SupercriticalError(TheoryError):
    pass


@dataclass
class OffspringSpec:
    t: float
    K: int
    rho_t0: np.ndarray    # rho_y(t0), y = 0..kmax
    q: np.ndarray         # q_{k,r}(t), clipped at zero
    q02: float

    @classmethod
    def from_solution(cls, sol: QSolution, t: float) -> "OffspringSpec":
        if not sol.window.contains(t):
            raise ValueError(f"t={t} outside the window [{sol.window.t0}, {sol.window.t1}]")
        q, q02 = sol.q_at(t)
        return cls(float(t), sol.K, sol.rho_t0.copy(), np.clip(q, 0.0, None), max(q02, 0.0))

    @property
    def kmax(self) -> int:
        return self.q.shape[0] - 1

    @property
    def rho_omega0(self) -> float:
        return 1.0 - self.rho_t0[1:self.K + 1].sum()

    def n_pmf(self) -> np.ndarray:
        """Pr(N = y), y = 0..kmax (truncated at kmax)."""
        p = self.rho_t0.copy()
        p[:self.K + 1] = 0.0
        return p / self.rho_omega0

    def lam(self) -> np.ndarray:
        """lambda_{k,r} including lambda_{0,2}; shape (kmax+1, rmax+1)."""
        r = np.arange(self.q.shape[1])
        lam = self.q * r[None, :] / self.rho_omega0
        lam[0, :] = 0.0
        if lam.shape[1] > 2:
            lam[0, 2] = 2.0 * self.q02 / self.rho_omega0
        return lam

    def truncation_defect(self) -> float:
        """V_S mass lost beyond the (k, r) truncation, plus the N tail mass."""
        k = np.arange(self.kmax + 1)
        small = (k[:, None] * self.q).sum()
        return float(abs(self.rho_t0[1:self.K + 1].sum() - small)
                     + abs(1.0 - self.n_pmf().sum()))


# ------------------------------------------------------------ pgfs, means

def _poly(c, x):
    return np.polynomial.polynomial.polyval(x, c)


def pgf_N(spec: OffspringSpec, alpha):
    return _poly(spec.n_pmf(), alpha)


def pgf_eval(spec: OffspringSpec, alpha, beta):
    """phi(alpha, beta) = E alpha^Y beta^Z for one L-particle."""
    lam = spec.lam()
    P = pgf_N(spec, alpha)
    r = np.arange(lam.shape[1])
    k = np.arange(lam.shape[0])
    terms = lam * (np.power(P, np.maximum(r - 1, 0))[None, :] * np.power(beta, k)[:, None] - 1.0)
    terms[:, 0] = 0.0
    return float(np.exp(terms.sum()))


def pgf0_eval(spec: OffspringSpec, alpha, beta):
    """E alpha^{Y^0} beta^{Z^0} for the first generation."""
    P = pgf_N(spec, alpha)
    rho = spec.rho_t0.copy()
    rho[:spec.K + 1] = 0.0
    k = np.arange(spec.q.shape[0])
    r = np.arange(spec.q.shape[1])
    s = (k[:, None] * spec.q * np.power(beta, k)[:, None] * np.power(P, r)[None, :]).sum()
    return float(_poly(rho, alpha) + s)


def mean_N(spec: OffspringSpec) -> float:
    p = spec.n_pmf()
    return float((np.arange(p.size) * p).sum())


def mean_Y(spec: OffspringSpec) -> float:
    """E Y_t = u(t) E N / rho_omega(t0)."""
    lam = spec.lam()
    r = np.arange(lam.shape[1])
    return float((lam * np.maximum(r - 1, 0)[None, :]).sum() * mean_N(spec))


def mean_Z(spec: OffspringSpec) -> float:
    lam = spec.lam()
    return float((lam * np.arange(lam.shape[0])[:, None]).sum())


# --------------------------------------------------------------- survival

@dataclass
class Survival:
    rho: float        # Pr(|bp_t| = infinity)
    rho1: float       # survival from a single L-particle
    q_star: float
    iterations: int


def survival_probability(spec: OffspringSpec, tol: float = 1e-12,
                         max_iter: int = 1_000_000) -> Survival:
    """Smallest fixed point of q = phi(q, 1) by monotone iteration from 0,
    polished with Newton steps.

    When E Y <= 1 the fixed point of the untruncated pgf is 1; the truncated
    series would put it slightly below 1, so that case returns 0 directly.
    """
    if mean_Y(spec) <= 1.0:
        return Survival(0.0, 0.0, 1.0, 0)
    lam = spec.lam()
    Lr = lam.sum(axis=0)
    r = np.arange(Lr.size)
    keep = Lr > 0
    Lr, r = Lr[keep], r[keep]
    pn = spec.n_pmf()
    dpn = np.polynomial.polynomial.polyder(pn)

    def phi(a):
        P = _poly(pn, a)
        return np.exp((Lr * (P ** (r - 1) - 1.0)).sum()), P

    def dphi(a):
        val, P = phi(a)
        dP = _poly(dpn, a)
        return val * (Lr * (r - 1) * np.where(r > 1, P ** np.maximum(r - 2, 0), 0.0)).sum() * dP

    x = 0.0
    it = 0
    while it < max_iter:
        nx = phi(x)[0]
        it += 1
        if abs(nx - x) < tol:
            x = nx
            break
        x = nx
    for _ in range(50):
        g = phi(x)[0] - x
        dg = dphi(x) - 1.0
        if dg >= 0 or g == 0:
            break
        nx = x - g / dg
        if not np.isfinite(nx) or abs(nx - x) < 1e-16:
            break
        x = min(nx, 1.0)
    x = min(x, 1.0)
    rho = 1.0 - pgf0_eval(spec, x, 1.0)
    return Survival(float(max(rho, 0.0)), float(1.0 - x), float(x), it)


# ---------------------------------------------------- total progeny (series)

def _smul(a, b, D):
    return np.convolve(a, b)[:D + 1]


def _compose(c, T, D):
    """sum_y c_y T(x)^y truncated at degree D (T has T_0 = 0)."""
    out = np.zeros(D + 1)
    m = min(len(c) - 1, D)
    out[0] = c[m]
    for y in range(m - 1, -1, -1):
        out = _smul(out, T, D)
        out[0] += c[y]
    return out


def _exp_series(e, D):
    """exp of a power series, truncated at degree D."""
    f = np.zeros(D + 1)
    f[0] = np.exp(e[0])
    j = np.arange(1, D + 1)
    je = j * e[1:D + 1]
    for m in range(1, D + 1):
        f[m] = np.dot(je[:m], f[m - 1::-1][:m]) / m
    return f


def total_progeny_pmf(spec: OffspringSpec, kmax: int | None = None) -> np.ndarray:
    """Pr(|bp_t| = k), k = 0..kmax, from the generating-function identity
    T(x) = x phi(T(x), x) and |bp_t| ~ G(x) = phi0(T(x), x)."""
    D = spec.kmax if kmax is None else min(kmax, spec.kmax)
    lam = spec.lam()[:D + 1]
    Lr = lam.sum(axis=0)
    rtop = int(np.flatnonzero(Lr > 0).max()) if (Lr > 0).any() else 1
    lam = lam[:, :rtop + 1]
    Lam = lam.sum()
    pn = spec.n_pmf()[:D + 1]
    T = np.zeros(D + 1)
    for _ in range(D + 1):
        P = _compose(pn, T, D)
        expo = np.zeros(D + 1)
        Ppow = np.zeros(D + 1)
        Ppow[0] = 1.0
        for r in range(1, rtop + 1):
            if r >= 2:
                Ppow = _smul(Ppow, P, D)
            if lam[:, r].any():
                expo += _smul(lam[:, r], Ppow, D)
        expo[0] -= Lam
        newT = np.zeros(D + 1)
        newT[1:] = _exp_series(expo, D)[:D]
        if np.array_equal(newT, T):
            break
        T = newT
    P = _compose(pn, T, D)
    rho = spec.rho_t0[:D + 1].copy()
    rho[:spec.K + 1] = 0.0
    G = _compose(rho, T, D)
    zq = (np.arange(spec.q.shape[0])[:, None] * spec.q)[:D + 1]
    Ppow = np.zeros(D + 1)
    Ppow[0] = 1.0
    for r in range(spec.q.shape[1]):
        if r >= 1:
            Ppow = _smul(Ppow, P, D)
        if zq[:, r].any():
            G += _smul(zq[:, r], Ppow, D)
    return G


# ------------------------------------------------------------- sampling

@njit(cache=True)
def _sample_kernel(seed, nsamp, cap, init_cdf, init_y, init_z, init_r,
                   n_cdf, type_cdf, type_k, type_r, Lam):
    np.random.seed(seed)
    out = np.empty(nsamp, dtype=np.int64)
    for s in range(nsamp):
        u = np.random.random()
        i = np.searchsorted(init_cdf, u, side="right")
        if i >= init_cdf.size:
            i = init_cdf.size - 1
        total = init_z[i] + init_y[i]
        pending = init_y[i]
        for _ in range(init_r[i]):
            j = np.searchsorted(n_cdf, np.random.random(), side="right")
            pending += j
            total += j
        while pending > 0 and total <= cap:
            pending -= 1
            m = np.random.poisson(Lam)
            for _ in range(m):
                h = np.searchsorted(type_cdf, np.random.random(), side="right")
                if h >= type_cdf.size:
                    h = type_cdf.size - 1
                total += type_k[h]
                for _ in range(type_r[h] - 1):
                    j = np.searchsorted(n_cdf, np.random.random(), side="right")
                    pending += j
                    total += j
        out[s] = total if total <= cap else -1
    return out


def sample_total_progeny(spec: OffspringSpec, nsamp: int, seed: int = 0,
                         cap: int = 100_000) -> np.ndarray:
    """Draw |bp_t| by direct simulation; -1 marks totals above ``cap``."""
    K = spec.K
    rho = spec.rho_t0.copy()
    rho[:K + 1] = 0.0
    ys = np.flatnonzero(rho)
    zq = np.arange(spec.q.shape[0])[:, None] * spec.q
    zk, zr = np.nonzero(zq)
    w = np.concatenate([rho[ys], zq[zk, zr]])
    init_y = np.concatenate([ys, np.zeros(zk.size, dtype=np.int64)])
    init_z = np.concatenate([np.zeros(ys.size, dtype=np.int64), zk])
    init_r = np.concatenate([np.zeros(ys.size, dtype=np.int64), zr])
    init_cdf = np.cumsum(w) / w.sum()
    pn = spec.n_pmf()
    n_cdf = np.cumsum(pn) / pn.sum()
    lam = spec.lam()
    tk, tr = np.nonzero(lam)
    lw = lam[tk, tr]
    Lam = float(lw.sum())
    type_cdf = np.cumsum(lw) / Lam if Lam > 0 else np.ones(1)
    if Lam == 0:
        tk = tr = np.zeros(1, dtype=np.int64)
    seed = int(np.random.SeedSequence(seed).generate_state(1)[0] % (2**31))
    return _sample_kernel(seed, int(nsamp), int(cap), init_cdf, init_y.astype(np.int64),
                          init_z.astype(np.int64), init_r.astype(np.int64), n_cdf,
                          type_cdf, tk.astype(np.int64), tr.astype(np.int64), Lam)


# ---------------------------------------------------------------- tails

@dataclass
class TailFit:
    theta: float
    psi: float
    kmin: int
    kmax: int
    period: int
    residual: float


def fit_tail(pmf: np.ndarray, period: int = 1, kmin: int = 32, kmax: int = 128) -> TailFit:
    """Weighted least squares of log(p_k k^{3/2}) on (1, k) over multiples of
    the period in [kmin, kmax]; returns theta and psi with
    p_k ~ theta k^{-3/2} exp(-psi k)."""
    ks = np.arange(kmin, min(kmax, len(pmf) - 1) + 1)
    ks = ks[ks % period == 0]
    p = pmf[ks]
    ok = p > 0
    ks, p = ks[ok], p[ok]
    if ks.size < 3:
        raise TheoryError("too few positive probabilities to fit a tail")
    y = np.log(p * ks**1.5)
    # weights: relative precision is uniform, so weight each point equally
    A = np.vstack([np.ones_like(ks, dtype=float), ks.astype(float)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(res[0] / ks.size)) if res.size else 0.0
    return TailFit(float(np.exp(coef[0])), float(-coef[1]), kmin, kmax, period, resid)


def psi_second_derivative(psi_of_t, tc: float, spacing: float = 0.005, npts: int = 9) -> float:
    """psi''(t_c) from a quadratic fit through ``npts`` points around t_c."""
    ts = tc + spacing * (np.arange(npts) - (npts - 1) / 2)
    vals = np.array([psi_of_t(t) for t in ts])
    c = np.polyfit(ts - tc, vals, 2)
    return float(2.0 * c[0])


def double_factorial(x: int) -> int:
    out = 1
    while x > 1:
        out *= x
        x -= 2
    return out


def susceptibility_constant(r: int, theta_c: float, psi2: float, period: int = 1) -> float:
    """B_r with s_r(t_c - eps) ~ B_r eps^{-2r+3}."""
    return (double_factorial(2 * r - 5) * np.sqrt(2 * np.pi) * theta_c / period
            * psi2 ** (-r + 1.5))


@dataclass
class Moment:
    value: float
    tail: float


def moment(spec: OffspringSpec, r: int, pmf: np.ndarray | None = None,
           tail: TailFit | None = None, tc: float | None = None) -> Moment:
    """E |bp_t|^{r-1} below t_c: exact sum up to kmax plus the tail
    estimated from the fitted asymptotics."""
    if tc is not None and spec.t >= tc:
        raise SupercriticalError("moments of |bp_t| are infinite for t >= t_c")
    if pmf is None:
        pmf = total_progeny_pmf(spec)
    k = np.arange(pmf.size)
    head = float((k ** (r - 1) * pmf).sum())
    if tail is None:
        tail = fit_tail(pmf)
    if tail.psi <= 0:
        raise SupercriticalError("tail fit does not decay; t is not subcritical")
    kk = np.arange(pmf.size, pmf.size + int(60 / tail.psi) + 1)
    kk = kk[kk % tail.period == 0]
    rest = float((tail.theta * kk ** (r - 2.5) * np.exp(-tail.psi * kk)).sum())
    return Moment(head + rest, rest)
