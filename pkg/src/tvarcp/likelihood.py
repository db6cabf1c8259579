"""Conditional Gaussian likelihoods and maximum-likelihood fitting.

All curve models used here are linear in the AR coefficients once the
noise curve is fixed, so fitting profiles the AR part out by weighted least
squares (weights ``1 / sigma_t^2``) and runs BFGS over the noise-curve
coefficients only.  The profiled gradient follows from the envelope
theorem: ``d/ds loglik = sum_t (e_t^2 / sigma_t^3 - 1 / sigma_t) b_t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.linalg as sla

from .kink import (KinkChain, KinkParams, _hinge_powers, chain_basis, chain_basis_size,
                   eval_kink_curves, kink_point_derivatives, taylor_shift, taylor_unshift,
                   vector_size)
from .optim import OptimizerConfig, bfgs
from .tvar import SIGMA_MIN, SegmentParams, check_stability

LOG2PI = float(np.log(2 * np.pi))
SIGMA_FLOOR = 1e-7


class FitError(RuntimeError):
    """Raised when no feasible starting point exists for a fit."""


@dataclass
class FitResult:
    """Outcome of a maximum-likelihood fit.

    ``state`` holds the optimiser coordinates of the noise curve so that a
    subsequent fit on a neighbouring range can warm start from it.
    """

    params: Any
    loglik: float
    converged: bool
    iterations: int
    gradient_norm: float
    n_obs: int = 0
    stable: bool = True
    state: Any = field(default=None, repr=False)


# -- pointwise likelihoods ----------------------------------------------------------

def lag_matrix(x: np.ndarray, ts: np.ndarray, p: int) -> np.ndarray:
    """``(n, p)`` matrix of ``X_{t-1}, ..., X_{t-p}`` for 1-based times ``ts``."""
    ts = np.asarray(ts, dtype=int)
    if p == 0:
        return np.zeros((ts.size, 0))
    idx = ts[:, None] - 1 - np.arange(1, p + 1)[None, :]
    if ts.size and idx.min() < 0:
        raise IndexError("lagged values before the start of the series")
    return x[idx]


def gaussian_loglik(y, mean, sigma) -> np.ndarray:
    """Pointwise ``-log(2 pi sigma^2)/2 - (y - mean)^2 / (2 sigma^2)``; ``-inf`` if infeasible."""
    sigma = np.asarray(sigma, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -0.5 * (LOG2PI + np.log(sigma ** 2)) - (y - mean) ** 2 / (2 * sigma ** 2)
    return np.where(sigma > SIGMA_MIN, out, -np.inf)


def segment_point_logliks(seg: SegmentParams, x, ts, T: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    T = len(x) if T is None else T
    ts = np.asarray(ts, dtype=int)
    u = ts / T
    lags = lag_matrix(x, ts, seg.p)
    mean = np.einsum("in,ni->n", seg.phi_at(u).reshape(seg.p, -1), lags)
    return gaussian_loglik(x[ts - 1], mean, seg.sigma_at(u))


def loglik_point(seg: SegmentParams, x, t: int) -> float:
    """Conditional log-likelihood of ``X_t`` given its ``p`` predecessors."""
    if t <= seg.p:
        raise IndexError("lags unavailable")
    return float(segment_point_logliks(seg, x, np.array([t]))[0])


def loglik_segment(seg: SegmentParams, x, a: int, b: int, condition: bool = True) -> float:
    """Sum of pointwise log-likelihoods over ``t = a + p + 1 .. b``.

    With ``condition=False`` the sum starts at ``a + 1`` and lags are taken
    from ``x`` (times without any available lag are skipped).
    """
    lo = a + seg.p + 1 if condition else max(a + 1, seg.p + 1)
    if b < lo:
        return 0.0
    return float(np.sum(segment_point_logliks(seg, x, np.arange(lo, b + 1))))


def loglik_kink_point(eta: KinkParams, x, t: int) -> float:
    x = np.asarray(x, dtype=float)
    T = len(x)
    if t <= eta.p:
        raise IndexError("lags unavailable")
    phi, sigma = eval_kink_curves(eta, t / T, check=False)
    mean = phi[:, 0] @ x[t - 1 - np.arange(1, eta.p + 1)]
    return float(gaussian_loglik(x[t - 1], mean, sigma[0]))


def kink_point_logliks(eta: KinkParams, x, ts) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    ts = np.asarray(ts, dtype=int)
    phi, sigma = eval_kink_curves(eta, ts / len(x), check=False)
    mean = np.einsum("in,ni->n", phi, lag_matrix(x, ts, eta.p))
    return gaussian_loglik(x[ts - 1], mean, sigma)


def chain_point_logliks(chain: KinkChain, x, ts) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    ts = np.asarray(ts, dtype=int)
    phi, sigma = chain.curves_at_t(ts)
    mean = np.einsum("in,ni->n", phi, lag_matrix(x, ts, chain.p))
    return gaussian_loglik(x[ts - 1], mean, sigma)


def loglik_kink_chain(chain: KinkChain, x, lo: int | None = None, hi: int | None = None) -> float:
    """Chain log-likelihood summed over its full span (lags taken from ``x``)."""
    lo = chain.start + 1 if lo is None else lo
    hi = chain.end if hi is None else hi
    lo = max(lo, chain.p + 1)
    if hi < lo:
        return 0.0
    return float(np.sum(chain_point_logliks(chain, x, np.arange(lo, hi + 1))))


# -- profiled Gaussian engine ----------------------------------------------------------

class ProfiledProblem:
    """Negative log-likelihood of ``y ~ N(Z a, (S s)^2)`` with ``a`` profiled out."""

    def __init__(self, Z: np.ndarray, y: np.ndarray, S: np.ndarray):
        self.Z = Z
        self.y = y
        self.S = S
        self.n = y.size
        scale = np.sqrt(np.sum(Z * Z, axis=0))
        scale[scale == 0] = 1.0
        self.scale = scale
        self.Zs = Z / scale
        self.last = None

    def solve(self, w: np.ndarray) -> np.ndarray:
        Zw = self.Zs * w[:, None]
        A = Zw.T @ self.Zs
        c = Zw.T @ self.y
        try:
            coef = sla.cho_solve(sla.cho_factor(A, check_finite=False), c, check_finite=False)
            if not np.all(np.isfinite(coef)):
                raise np.linalg.LinAlgError
        except (np.linalg.LinAlgError, ValueError):
            coef = np.linalg.lstsq(A, c, rcond=1e-12)[0]
        return coef / self.scale

    def __call__(self, s: np.ndarray):
        sigma = self.S @ s
        if not np.all(sigma > SIGMA_MIN) or not np.all(np.isfinite(sigma)):
            return np.inf, np.zeros_like(s)
        w = 1.0 / sigma ** 2
        a = self.solve(w)
        e = self.y - self.Z @ a
        f = np.sum(np.log(sigma)) + 0.5 * self.n * LOG2PI + 0.5 * np.sum(w * e ** 2)
        g = self.S.T @ (1.0 / sigma - e ** 2 / sigma ** 3)
        self.last = (s, a, e, sigma)
        return float(f), g

    def evaluate(self, s):
        f, _ = self(s)
        if not np.isfinite(f):
            return f, None, None
        return f, self.last[1], self.last[2]

    def fisher(self, s: np.ndarray) -> np.ndarray:
        sigma = self.S @ s
        return self.S.T @ (self.S * (2.0 / sigma ** 2)[:, None])

    def ols_start(self) -> np.ndarray:
        """Noise coefficients representing a constant residual standard deviation."""
        a = self.solve(np.ones(self.n))
        e = self.y - self.Z @ a
        dof = max(self.n - self.Z.shape[1], 1)
        sd = max(float(np.sqrt(np.sum(e ** 2) / dof)), SIGMA_FLOOR)
        return np.linalg.lstsq(self.S, np.full(self.n, sd), rcond=None)[0]


def _optimise(problem: ProfiledProblem, starts: list, config: OptimizerConfig):
    best = None
    for s0 in starts:
        f0, _ = problem(s0)
        if not np.isfinite(f0):
            continue
        try:
            H0 = np.linalg.inv(problem.fisher(s0))
        except np.linalg.LinAlgError:
            H0 = None
        res = bfgs(problem, s0, config, H0)
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise FitError("no feasible starting point for the noise curve")
    f, a, e = problem.evaluate(best.x)
    return best, f, a


def _perturbed_starts(s0: np.ndarray, count: int, key) -> list:
    starts = [s0]
    rng = np.random.default_rng(key)
    for _ in range(count - 1):
        z = rng.standard_normal(s0.size)
        starts.append(s0 + 0.1 * abs(s0[0]) * z)
    return starts


# -- plain segments ------------------------------------------------------------------------

def _local_frame(u: np.ndarray) -> tuple[float, float]:
    c = 0.5 * (u[0] + u[-1])
    w = 0.5 * (u[-1] - u[0])
    return c, (w if w > 0 else 1.0)


def power_to_local(coeffs, c: float, w: float) -> np.ndarray:
    a = taylor_shift(coeffs, c)
    return a * w ** np.arange(len(a))


def local_to_power(coeffs, c: float, w: float) -> np.ndarray:
    a = np.asarray(coeffs, dtype=float) / w ** np.arange(len(coeffs))
    return taylor_unshift(a, c)


def segment_times(a: int, b: int, p: int, condition: bool = True) -> np.ndarray:
    lo = a + p + 1 if condition else max(a + 1, p + 1)
    return np.arange(lo, b + 1)


def fit_segment(x, a: int, b: int, p: int, q: int, config: OptimizerConfig | None = None,
                warm: SegmentParams | None = None, condition: bool = True,
                T: int | None = None, check_stable: bool = False) -> FitResult:
    """Maximum-likelihood tvAR(p) fit with degree-q curves on ``(a, b]``.

    ``condition=True`` conditions on the first ``p`` observations of the
    range; otherwise the range is used in full with lags taken from ``x``.
    ``warm`` provides a starting noise curve (e.g. a fit on a neighbouring
    range).
    """
    config = config or OptimizerConfig()
    x = np.asarray(x, dtype=float)
    T = len(x) if T is None else T
    ts = segment_times(a, b, p, condition)
    n = ts.size
    if n <= (p + 1) * (q + 1):
        raise FitError(f"range ({a}, {b}] too short for p={p}, q={q}")
    u = ts / T
    c, w = _local_frame(u)
    v = (u - c) / w
    Bv = np.vander(v, q + 1, increasing=True)
    lags = lag_matrix(x, ts, p)
    Z = (lags[:, :, None] * Bv[:, None, :]).reshape(n, p * (q + 1))
    y = x[ts - 1]
    problem = ProfiledProblem(Z, y, Bv)
    if q == 0:
        coef = problem.solve(np.ones(n))
        e = y - Z @ coef
        sd = max(float(np.sqrt(np.mean(e ** 2))), SIGMA_FLOOR)
        s = np.array([sd])
        f, coef, _ = problem.evaluate(s)
        iters, conv, gnorm = 0, True, 0.0
    else:
        s0 = problem.ols_start()
        starts = []
        if warm is not None and warm.q == q:
            sw = power_to_local(warm.sigma, c, w)
            if np.isfinite(problem(sw)[0]):
                starts.append(sw)
        if not starts:
            starts = _perturbed_starts(s0, config.multistart, (n, p, q, a))
        res, f, coef = _optimise(problem, starts, config)
        s, iters, conv, gnorm = res.x, res.iterations, res.converged, res.gradient_norm
    phi = np.array([local_to_power(coef[i * (q + 1):(i + 1) * (q + 1)], c, w) for i in range(p)])
    sigma = local_to_power(s, c, w)
    params = SegmentParams(phi, sigma)
    stable = check_stability(params, u) if check_stable else True
    return FitResult(params, -f, conv, iters, gnorm, n, stable, s)


# -- kink chains ---------------------------------------------------------------------------

def _chain_design(x, ts, T, taus, qs, p):
    B = chain_basis(ts, T, taus, qs)
    lags = lag_matrix(x, ts, p)
    n, nb = B.shape
    Z = (lags[:, :, None] * B[:, None, :]).reshape(n, p * nb)
    return Z, B


def fit_kink_chain(x, start: int, taus, end: int, p: int, qs, config: OptimizerConfig | None = None,
                   T: int | None = None) -> FitResult:
    """Fit a chain of kinks at fixed locations ``taus`` spanning ``(start, end]``.

    All segments of the chain share the AR order ``p``; ``qs`` holds one
    degree per segment.  The likelihood runs over the full span, with lags
    taken from ``x`` (times with no available lag are skipped).
    """
    config = config or OptimizerConfig()
    x = np.asarray(x, dtype=float)
    T = len(x) if T is None else T
    ts = np.arange(max(start + 1, p + 1), end + 1)
    nb = chain_basis_size(qs)
    if ts.size <= (p + 1) * nb:
        raise FitError("chain span too short for the requested degrees")
    Z, B = _chain_design(x, ts, T, list(taus), list(qs), p)
    problem = ProfiledProblem(Z, x[ts - 1], B)
    s0 = problem.ols_start()
    starts = _perturbed_starts(s0, config.multistart, (ts.size, p, *qs, start))
    res, f, coef = _optimise(problem, starts, config)
    chain = KinkChain(T, start, tuple(taus), end, tuple(qs), coef.reshape(p, nb), res.x)
    return FitResult(chain, -f, res.converged, res.iterations, res.gradient_norm, ts.size, True, res.x)


# -- single kink with free location ------------------------------------------------------------

def kink_design(orders, r: float, u: np.ndarray, lags: np.ndarray):
    """AR design ``Z`` (columns in vector order), positions, and noise basis for fixed ``r``."""
    pL, pR, qL, qR = orders
    pm = min(pL, pR)
    _, _, _, Lm, Lp = _hinge_powers(u, r, qL, qR)
    cols, pos = [], []
    for i in range(pm):
        cols.append(lags[:, i])
        pos.append(i)
    base = pm + 1
    for i in range(pL):
        for j in range(qL):
            cols.append(lags[:, i] * Lm[j])
            pos.append(base + i * qL + j)
    base += pL * qL + qL
    for i in range(pR):
        for j in range(qR):
            cols.append(lags[:, i] * Lp[j])
            pos.append(base + i * qR + j)
    S = np.vstack([np.ones(u.size), Lm, Lp]).T
    pL_, pR_ = pL, pR
    bL0 = pm + 1 + pL_ * qL
    bR0 = bL0 + qL + pR_ * qR
    spos = [pm] + list(range(bL0, bL0 + qL)) + list(range(bR0, bR0 + qR))
    return np.column_stack(cols), pos, S, spos


def window_times(lo: int, hi: int, p: int) -> np.ndarray:
    return np.arange(max(lo, p + 1, 1), hi + 1)


def fit_kink_fixed_r(x, lo: int, hi: int, r: float, orders, config: OptimizerConfig | None = None,
                     warm: np.ndarray | None = None, T: int | None = None) -> FitResult:
    """Fit a single-kink model at fixed ``r`` on the inclusive window ``[lo, hi]``.

    ``loglik`` is the plain sum over the window; ``state`` holds the noise
    coefficients ``(xi, beta_left, beta_right)``.
    """
    config = config or OptimizerConfig()
    x = np.asarray(x, dtype=float)
    T = len(x) if T is None else T
    pL, pR, qL, qR = orders
    P = max(pL, pR)
    ts = window_times(lo, hi, P)
    u = ts / T
    lags = lag_matrix(x, ts, P)
    Z, pos, S, spos = kink_design(orders, r, u, lags)
    problem = ProfiledProblem(Z, x[ts - 1], S)
    starts = []
    if warm is not None and np.isfinite(problem(warm)[0]):
        starts.append(np.asarray(warm, dtype=float))
    if not starts:
        starts = _perturbed_starts(problem.ols_start(), config.multistart, (ts.size, *orders))
    res, f, coef = _optimise(problem, starts, config)
    v = np.zeros(vector_size(orders))
    v[pos] = coef
    v[spos] = res.x
    v[-1] = r
    eta = KinkParams.from_vector(v, orders)
    return FitResult(eta, -f, res.converged, res.iterations, res.gradient_norm, ts.size, True, res.x)


def kink_window_objective(eta: KinkParams, x, lo: int, hi: int, hessian: bool = False):
    """Sum of ``ell(eta, X_t)`` over ``[lo, hi]`` with its gradient (and Hessian)."""
    x = np.asarray(x, dtype=float)
    ts = window_times(lo, hi, eta.p)
    lags = lag_matrix(x, ts, eta.p)
    ll, g, H = kink_point_derivatives(eta, x[ts - 1], lags, ts / len(x), hessian)
    return ll, g, H
