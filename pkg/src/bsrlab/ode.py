"""Deterministic limits of a bounded-size rule.

* ``integrate_rho``: the finite system for the class densities rho_c and the
  extended system for rho_k, k <= kmax.
* ``estimate_tc``: blow-up time of the susceptibility s_2.
* ``integrate_q``: the (k, r)-type densities q_{k,r} of the V_S-structures
  inside a window [t0, t1] around t_c, plus q_{0,2}.

All integrators are fixed-step RK4.  The rule enters through the pair weights
W(s1, s2): the sum, over profiles whose chosen pair has classes (s1, s2), of
the product of the class densities at the unchosen positions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import fft as sfft

from .rules import RuleError, RuleSpec

DEFAULT_H = 1e-4
DEFAULT_KMAX = 256
DEFAULT_RMAX = 64
DEFAULT_SMAX = 1e8


class TheoryError(RuntimeError):
    pass


def _require_bounded(rule: RuleSpec):
    if rule.unbounded:
        raise RuleError("theory requires bounded-size rule")


# ------------------------------------------------------------ rule tensors

@dataclass(frozen=True)
class RuleTensors:
    """Profile enumeration of a rule in array form."""

    K: int
    classes: np.ndarray      # (P, ell) class index of each position
    others: np.ndarray       # (P, ell) class index, chosen positions -> K+1
    pair_class: np.ndarray   # (P,) flat index s1*(K+1)+s2 of the chosen classes
    delta: np.ndarray        # (P, K+1) change of class masses caused by the merge


@lru_cache(maxsize=64)
def rule_tensors(rule: RuleSpec) -> RuleTensors:
    _require_bounded(rule)
    K = rule.cutoff
    b = K + 1
    ell = rule.arity
    P = b**ell
    classes = np.empty((P, ell), dtype=np.int64)
    others = np.empty((P, ell), dtype=np.int64)
    pair_class = np.empty(P, dtype=np.int64)
    delta = np.zeros((P, b))
    for flat, (idx, (j1, j2)) in enumerate(rule.profiles()):
        classes[flat] = idx
        others[flat] = idx
        others[flat, j1] = K + 1
        others[flat, j2] = K + 1
        a, c = idx[j1], idx[j2]
        pair_class[flat] = a * b + c
        # merging a vertex of class a with one of class c
        if a < K and c < K:
            sa, sc = a + 1, c + 1
            delta[flat, a] -= sa
            delta[flat, c] -= sc
            m = sa + sc
            delta[flat, m - 1 if m <= K else K] += m
        elif a < K:
            delta[flat, a] -= a + 1
            delta[flat, K] += a + 1
        elif c < K:
            delta[flat, c] -= c + 1
            delta[flat, K] += c + 1
    return RuleTensors(K, classes, others, pair_class, delta)


def pair_weights(rule: RuleSpec, rho_c: np.ndarray) -> np.ndarray:
    """W[s1, s2] for class densities ``rho_c`` (length K+1, last = omega)."""
    tens = rule_tensors(rule)
    b = tens.K + 1
    ext = np.append(np.asarray(rho_c, dtype=float), 1.0)
    w = ext[tens.others].prod(axis=1)
    return np.bincount(tens.pair_class, weights=w, minlength=b * b).reshape(b, b)


def finite_rhs(rule: RuleSpec, rho_c: np.ndarray) -> np.ndarray:
    """Right-hand side of the finite class system, by direct profile sum."""
    tens = rule_tensors(rule)
    prod = np.asarray(rho_c, dtype=float)[tens.classes].prod(axis=1)
    return prod @ tens.delta


def _ext_rhs(rule: RuleSpec, rho: np.ndarray) -> np.ndarray:
    """Extended system for rho[1..kmax] (rho[0] unused)."""
    K = rule.cutoff
    kmax = rho.shape[0] - 1
    k = np.arange(kmax + 1)
    m = np.empty(K + 1)
    m[:K] = rho[1:K + 1]
    m[K] = 1.0 - rho[1:K + 1].sum()
    W = pair_weights(rule, m)
    # class masks of the size axis
    cls = np.where(k <= K, k - 1, K)
    parts = []
    for s in range(K + 1):
        v = np.where(cls == s, rho, 0.0)
        v[0] = 0.0
        parts.append(v)
    gain = np.zeros(kmax + 1)
    for s1 in range(K + 1):
        mix = sum(W[s1, s2] * parts[s2] for s2 in range(K + 1))
        if not mix.any() or not parts[s1].any():
            continue
        gain += np.convolve(parts[s1], mix)[:kmax + 1]
    row = W @ m
    col = m @ W
    out = k * gain - k * rho * (row[cls] + col[cls])
    out[0] = 0.0
    return out


def _rk4(f, y, h):
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _grid(t_start: float, t_end: float, h: float) -> tuple[int, float]:
    if t_end < t_start:
        raise ValueError("t_end before t_start")
    n = max(1, int(np.ceil((t_end - t_start) / h - 1e-9)))
    return n, (t_end - t_start) / n


def _initial_classes(K: int) -> np.ndarray:
    rho = np.zeros(K + 1)
    rho[0 if K >= 1 else K] = 1.0
    return rho


@dataclass
class RhoSolution:
    t: np.ndarray
    rho_c: np.ndarray     # (T, K+1): sizes 1..K then omega
    rho: np.ndarray       # (T, kmax+1): rho[:, k] for k = 1..kmax
    h: float
    K: int

    def at(self, t: float) -> np.ndarray:
        """rho_k(t) for k = 0..kmax by linear interpolation in t."""
        return _interp_rows(self.t, self.rho, t)

    def classes_at(self, t: float) -> np.ndarray:
        return _interp_rows(self.t, self.rho_c, t)

    def max_disagreement(self) -> float:
        """max |finite rho_c - extended rho_k| over the grid for k <= K."""
        K = self.K
        if K == 0:
            return 0.0
        return float(np.abs(self.rho_c[:, :K] - self.rho[:, 1:K + 1]).max())


def _interp_rows(tgrid, values, t):
    t = float(t)
    if t < tgrid[0] - 1e-12 or t > tgrid[-1] + 1e-12:
        raise ValueError(f"t={t} outside solution range [{tgrid[0]}, {tgrid[-1]}]")
    i = int(np.searchsorted(tgrid, t))
    if i < len(tgrid) and abs(tgrid[i] - t) < 1e-12:
        return values[i].copy()
    if i > 0 and abs(tgrid[i - 1] - t) < 1e-12:
        return values[i - 1].copy()
    i = min(max(i, 1), len(tgrid) - 1)
    w = (t - tgrid[i - 1]) / (tgrid[i] - tgrid[i - 1])
    return (1 - w) * values[i - 1] + w * values[i]


def integrate_rho(rule: RuleSpec, t_end: float, h: float = DEFAULT_H,
                  kmax: int = DEFAULT_KMAX) -> RhoSolution:
    """Integrate the finite and the extended systems on [0, t_end].

    The two systems are integrated independently; they must agree on the
    classes 1..K.
    """
    _require_bounded(rule)
    K = rule.cutoff
    nsteps, h = _grid(0.0, t_end, h)
    rc = _initial_classes(K)
    rho = np.zeros(kmax + 1)
    rho[1] = 1.0
    T = np.linspace(0.0, t_end, nsteps + 1)
    out_c = np.empty((nsteps + 1, K + 1))
    out = np.empty((nsteps + 1, kmax + 1))
    out_c[0], out[0] = rc, rho
    fc = lambda y: finite_rhs(rule, y)
    fe = lambda y: _ext_rhs(rule, y)
    for i in range(1, nsteps + 1):
        rc = _rk4(fc, rc, h)
        rho = _rk4(fe, rho, h)
        out_c[i], out[i] = rc, rho
    return RhoSolution(T, out_c, out, h, K)


# ---------------------------------------------------------- susceptibility

def _inv_s2_rhs(rule: RuleSpec, y: np.ndarray) -> np.ndarray:
    """State (rho_c, 1/s_2).  s_2' = 2 sum W(s1,s2) M(s1) M(s2) with
    M(k) = k rho_k for k <= K and M(omega) = s_2 - sum k rho_k."""
    K = rule.cutoff
    rc, inv = y[:-1], y[-1]
    W = pair_weights(rule, rc)
    ks = np.arange(1, K + 1)
    mm = np.empty(K + 1)
    mm[:K] = ks * rc[:K] * inv
    mm[K] = 1.0 - inv * (ks * rc[:K]).sum()
    return np.append(finite_rhs(rule, rc), -2.0 * mm @ W @ mm)


@dataclass
class CriticalPoint:
    tc: float
    err: float
    S_max: float
    h: float
    t: np.ndarray = field(repr=False, default=None)
    s2: np.ndarray = field(repr=False, default=None)

    def as_dict(self) -> dict:
        return {"tc": self.tc, "err": self.err, "S_max": self.S_max, "h": self.h}


def estimate_tc(rule: RuleSpec, h: float = DEFAULT_H, S_max: float = DEFAULT_SMAX,
                t_limit: float = 2.0) -> CriticalPoint:
    """Blow-up time of s_2 from a linear fit of 1/s_2 near the singularity.

    1/s_2 is integrated directly (it stays smooth through the blow-up).  Near
    the crossing, extra RK4 steps of varying length from the last grid point
    sample 1/s_2 where s_2 lies in [S_max/10, S_max]; the root of the fitted
    line is t_c.  ``err`` combines the fit residual with the gap to a
    quadratic fit.
    """
    _require_bounded(rule)
    K = rule.cutoff
    f = lambda y: _inv_s2_rhs(rule, y)
    y = np.append(_initial_classes(K), 1.0)
    ts, s2 = [0.0], [1.0]
    t = 0.0
    lo = 1.0 / S_max
    while True:
        if t > t_limit:
            raise TheoryError("s_2 did not blow up before t_limit")
        ynew = _rk4(f, y, h)
        if ynew[-1] <= 10.0 * lo:
            break
        y = ynew
        t += h
        ts.append(t)
        s2.append(1.0 / y[-1])
    # the last grid point lies above the fit window; place substeps so that
    # the predicted 1/s_2 covers [1/S_max, 10/S_max]
    slope = (ynew[-1] - y[-1]) / h
    if slope >= 0:
        raise TheoryError("1/s_2 is not decreasing near the blow-up")
    d_lo = (y[-1] - 10.0 * lo) / -slope
    d_hi = (y[-1] - lo) / -slope
    pts_t, pts_v = [], []
    for d in np.linspace(d_lo, d_hi, 17):
        v = _rk4(f, y, d)[-1]
        if lo * 0.5 <= v <= 20.0 * lo:
            pts_t.append(t + d)
            pts_v.append(v)
    if len(pts_t) < 3:
        raise TheoryError("too few samples near the blow-up; lower h")
    pts_t, pts_v = np.array(pts_t), np.array(pts_v)
    # fit in centred, scaled coordinates to keep the normal equations sane
    scale = max(d_hi, 1e-300)
    x = (pts_t - t) / scale
    c1, res, *_ = np.polyfit(x, pts_v, 1, full=True)
    tc_lin = t - scale * c1[1] / c1[0]
    c2 = np.polyfit(x, pts_v, 2)
    roots = np.roots(c2)
    roots = t + scale * roots[np.isreal(roots)].real
    tc_quad = roots[np.argmin(np.abs(roots - tc_lin))] if roots.size else tc_lin
    resid = np.sqrt(res[0] / len(pts_t)) / abs(c1[0]) * scale if res.size else 0.0
    err = float(max(abs(tc_quad - tc_lin), resid, 4 * np.finfo(float).eps))
    return CriticalPoint(float(tc_lin), err, S_max, h, np.array(ts), np.array(s2))


def susceptibility_path(rule: RuleSpec, t_end: float, h: float = DEFAULT_H):
    """(t, s_2(t)) on a uniform grid up to ``t_end`` (< t_c)."""
    K = rule.cutoff
    f = lambda y: _inv_s2_rhs(rule, y)
    nsteps, h = _grid(0.0, t_end, h)
    y = np.append(_initial_classes(K), 1.0)
    out = [1.0]
    for _ in range(nsteps):
        y = _rk4(f, y, h)
        out.append(1.0 / y[-1])
    return np.linspace(0, t_end, nsteps + 1), np.array(out)


# ------------------------------------------------------------------ window

@dataclass(frozen=True)
class CriticalWindow:
    tc: float
    sigma: float

    @classmethod
    def default(cls, rule: RuleSpec, tc: float) -> "CriticalWindow":
        K = rule.cutoff
        sigma = min(1.0 / (2 * rule.arity**2 * (K + 1)), tc / 3.0)
        return cls(tc, sigma)

    @classmethod
    def wide(cls, tc: float) -> "CriticalWindow":
        """Window of half-width t_c/3."""
        return cls(tc, tc / 3.0)

    @property
    def t0(self) -> float:
        return self.tc - self.sigma

    @property
    def t1(self) -> float:
        return self.tc + self.sigma

    def contains(self, t: float) -> bool:
        return self.t0 - 1e-12 <= t <= self.t1 + 1e-12


# ------------------------------------------------------------- q system

def _conv2_direct(a, b, shape):
    nk, nr = shape
    out = np.zeros(shape)
    ka, ra = np.nonzero(a)
    for i, j in zip(ka, ra):
        ek = min(nk - i, b.shape[0])
        er = min(nr - j, b.shape[1])
        if ek > 0 and er > 0:
            out[i:i + ek, j:j + er] += a[i, j] * b[:ek, :er]
    return out


class _QRhs:
    def __init__(self, rule, rho_t0, kmax, rmax, method):
        self.rule = rule
        self.K = K = rule.cutoff
        self.kmax, self.rmax = kmax, rmax
        self.rho_om0 = float(rho_t0[K])
        k = np.arange(kmax + 1)[:, None]
        r = np.arange(rmax + 1)[None, :]
        self.kk = np.broadcast_to(k, (kmax + 1, rmax + 1)).astype(float)
        cls = np.where((k <= K) & (r == 0), k - 1, K)
        cls[0, :] = K
        self.cls = cls
        self.masks = [cls == s for s in range(K + 1)]
        self.masks[K] = self.masks[K] & (k >= 1)
        # class of (k, r-1) for the stub term, per (k, r)
        self.cls_prev = np.full_like(cls, K)
        self.cls_prev[:, 1:] = cls[:, :-1]
        self.method = method
        if method == "fft":
            self.fshape = (sfft.next_fast_len(2 * kmax + 1), sfft.next_fast_len(2 * rmax + 1))

    def __call__(self, state):
        K, kmax, rmax = self.K, self.kmax, self.rmax
        nq = (kmax + 1) * (rmax + 1)
        q = state[:nq].reshape(kmax + 1, rmax + 1)
        rc = state[nq:nq + K + 1]
        W = pair_weights(self.rule, rc)
        A = self.kk * q
        parts = [np.where(m, A, 0.0) for m in self.masks]
        shape = (kmax + 1, rmax + 1)
        if self.method == "fft":
            X = [sfft.rfft2(p, self.fshape) for p in parts]
            acc = 0
            for s1 in range(K + 1):
                mix = sum(W[s1, s2] * X[s2] for s2 in range(K + 1))
                acc = acc + X[s1] * mix
            gain = sfft.irfft2(acc, self.fshape)[:kmax + 1, :rmax + 1]
        else:
            gain = np.zeros(shape)
            for s1 in range(K + 1):
                mix = sum(W[s1, s2] * parts[s2] for s2 in range(K + 1))
                gain += _conv2_direct(parts[s1], mix, shape)
        stub = W[:, K] + W[K, :]
        gain[:, 1:] += A[:, :-1] * self.rho_om0 * stub[self.cls_prev[:, 1:]]
        loss_rate = W @ rc + rc @ W
        dq = gain - A * loss_rate[self.cls]
        dq[0, :] = 0.0
        dq02 = W[K, K] * self.rho_om0**2
        drc = finite_rhs(self.rule, rc)
        return np.concatenate([dq.ravel(), drc, [dq02]])


@dataclass
class QSolution:
    window: CriticalWindow
    t: np.ndarray            # output grid
    q: np.ndarray            # (T, kmax+1, rmax+1)
    q02: np.ndarray          # (T,)
    rho_c: np.ndarray        # (T, K+1)
    rho_t0: np.ndarray       # rho_k(t0), k = 0..kmax (class omega at index K
                             # is not stored here; see rho_c[0])
    K: int
    h: float

    def q_at(self, t: float) -> tuple[np.ndarray, float]:
        """q_{k,r}(t) and q_{0,2}(t); exact on the output grid, cubic spline
        in between."""
        t = float(t)
        i = int(np.argmin(np.abs(self.t - t)))
        if abs(self.t[i] - t) < 1e-12:
            return self.q[i].copy(), float(self.q02[i])
        if not self.window.contains(t):
            raise ValueError(f"t={t} outside the window")
        if getattr(self, "_spline", None) is None:
            from scipy.interpolate import CubicSpline
            self._spline = CubicSpline(self.t, self.q, axis=0)
            self._spline02 = CubicSpline(self.t, self.q02)
        return self._spline(t), float(self._spline02(t))

    def u(self) -> np.ndarray:
        """u(t) = sum r(r-1) q_{k,r} + 2 q_{0,2} on the output grid."""
        r = np.arange(self.q.shape[2])
        return (self.q * (r * (r - 1))[None, None, :]).sum(axis=(1, 2)) + 2.0 * self.q02

    def small_mass(self) -> np.ndarray:
        """sum_{k,r} k q_{k,r}: conserved, equal to sum_{k<=K} rho_k(t0)."""
        k = np.arange(self.q.shape[1])
        return (self.q * k[None, :, None]).sum(axis=(1, 2))


def integrate_q(rule: RuleSpec, window: CriticalWindow, h: float = DEFAULT_H,
                kmax: int = DEFAULT_KMAX, rmax: int = DEFAULT_RMAX,
                dt_out: float = 1e-2, method: str = "fft",
                rho_h: float | None = None, times=None) -> QSolution:
    """Integrate the q-system on [t0, t1] jointly with the class densities.

    rho(t0) comes from ``integrate_rho`` run up to exactly t0.  Results are
    stored on a grid of spacing about ``dt_out`` together with any extra
    ``times`` inside the window; steps land on all of them exactly.
    """
    _require_bounded(rule)
    if method not in ("fft", "direct"):
        raise ValueError("method is 'fft' or 'direct'")
    K = rule.cutoff
    t0, t1 = window.t0, window.t1
    rs = integrate_rho(rule, t0, h if rho_h is None else rho_h, kmax)
    rho_c0 = rs.rho_c[-1]
    rho_ext0 = rs.rho[-1]
    f = _QRhs(rule, rho_c0, kmax, rmax, method)
    q = np.zeros((kmax + 1, rmax + 1))
    for k in range(1, K + 1):
        q[k, 0] = rho_c0[k - 1] / k
    state = np.concatenate([q.ravel(), rho_c0, [0.0]])
    nout, dt = _grid(t0, t1, dt_out)
    T = t0 + dt * np.arange(nout + 1)
    if times is not None:
        extra = np.asarray(times, dtype=float)
        if np.any(extra < t0 - 1e-12) or np.any(extra > t1 + 1e-12):
            raise ValueError("requested times outside the window")
        T = np.unique(np.concatenate([T, extra]))
        T = T[np.concatenate([[True], np.diff(T) > 1e-12])]
        nout = len(T) - 1
    nq = q.size
    Q = np.empty((nout + 1, kmax + 1, rmax + 1))
    Q02 = np.empty(nout + 1)
    RC = np.empty((nout + 1, K + 1))

    def store(i, s):
        Q[i] = s[:nq].reshape(kmax + 1, rmax + 1)
        RC[i] = s[nq:nq + K + 1]
        Q02[i] = s[-1]

    store(0, state)
    hh = h
    for i in range(1, nout + 1):
        sub, hh = _grid(T[i - 1], T[i], h)
        for _ in range(sub):
            state = _rk4(f, state, hh)
        store(i, state)
    rho_t0 = rho_ext0.copy()
    return QSolution(window, T, Q, Q02, RC, rho_t0, K, hh)


@dataclass
class ConservationReport:
    mass_drift: float
    class_mismatch: float
    truncation_defect: float


def conservation_report(sol: QSolution) -> ConservationReport:
    """Drift of the V_S mass, mismatch of k q_{k,0} with rho_k (k <= K), and
    the V_S mass lost beyond the (k, r) truncation at t1."""
    K = sol.K
    m = sol.small_mass()
    target = sol.rho_c[0, :K].sum() if K else 0.0
    kk = np.arange(1, K + 1)
    mism = 0.0
    if K:
        mism = float(np.abs(kk[None, :] * sol.q[:, 1:K + 1, 0] - sol.rho_c[:, :K]).max())
    return ConservationReport(float(np.abs(m - m[0]).max()), mism, float(target - m[-1]))
