"""Step 3: local refinement of selected change-points and confidence intervals.

Each selected change-point is re-estimated inside its extended local
window, the largest stretch around it that contains no other selected
change-point.  Jumps are refined by profiling the two-sided likelihood over
integer locations and get parametric-bootstrap intervals; kinks are refined
in the hinge parametrisation and get normal intervals from a sandwich
covariance.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .kink import KinkParams, kink_point_derivatives
from .likelihood import (FitError, FitResult, fit_kink_fixed_r, fit_segment, lag_matrix,
                         segment_point_logliks, window_times)
from .optim import OptimizerConfig, bfgs
from .tvar import JUMP, KINK, SIGMA_MIN, SegmentParams, SpecError, simulate_recursion

BOOTSTRAP = "bootstrap"
ASYMPTOTIC = "asymptotic-normal"
BURN_IN = 200
RCOND_MIN = 1e-12


class RefineError(RuntimeError):
    """Numerical failure during refinement (singular sandwich, no feasible fit)."""


@dataclass(frozen=True)
class ExtendedWindow:
    """Extended local window of one change-point (1-based, inclusive)."""

    index: int
    tau: int
    kind: str
    left: int
    right: int
    search_lo: int
    search_hi: int
    feasible: bool = True

    @property
    def length(self) -> int:
        return self.right - self.left


@dataclass(frozen=True)
class ChangePointCI:
    estimate: int
    lower: int
    upper: int
    level: float
    method: str

    def __post_init__(self):
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if self.lower > self.upper:
            raise ValueError("interval bounds are reversed")

    def covers(self, tau: int) -> bool:
        return self.lower <= tau <= self.upper


@dataclass
class SandwichCov:
    G_hat: np.ndarray
    D_hat: np.ndarray
    Sigma_hat: np.ndarray

    @property
    def var_r(self) -> float:
        return float(self.Sigma_hat[-1, -1])


@dataclass
class JumpRefinement:
    tau: int
    left: FitResult
    right: FitResult
    profile: np.ndarray  # (tau, objective) rows; failed fits hold nan
    skipped: tuple = ()


@dataclass
class KinkRefinement:
    tau: int
    eta: KinkParams
    objective: float
    grid_objective: float
    grid_tau: int
    converged: bool
    profile: np.ndarray = field(repr=False, default=None)


def _radius(kind: str, h: int, h_tilde: int) -> int:
    return h if kind == JUMP else 2 * h_tilde


def extended_windows(taus, types, T: int, h: int, h_tilde: int, margin: int = 0) -> list[ExtendedWindow]:
    """Windows ``[tau_{k-1} + h_{k-1}, tau_{k+1} - h_{k+1}]`` with search ranges.

    Series endpoints act as neighbours with zero radius.  ``margin`` keeps
    the search range that many points inside the window on each side so
    that both sides retain enough observations for a fit.  Windows too
    small for any search are returned with ``feasible=False``.
    """
    taus = list(taus)
    out = []
    for k, (tau, kind) in enumerate(zip(taus, types)):
        if k == 0:
            left = 0
        else:
            left = taus[k - 1] + _radius(types[k - 1], h, h_tilde)
            if left >= tau - margin - 1:
                # neighbour closer than its radius: fall back to the midpoint
                left = (taus[k - 1] + tau) // 2
        if k == len(taus) - 1:
            right = T
        else:
            right = taus[k + 1] - _radius(types[k + 1], h, h_tilde)
            if right <= tau + margin + 1:
                right = (tau + taus[k + 1] + 1) // 2
        rad = _radius(kind, h, h_tilde)
        lo = max(tau - rad, left + 1 + margin)
        hi = min(tau + rad, right - 1 - margin)
        feasible = lo <= hi
        if not feasible:
            lo = hi = tau
        out.append(ExtendedWindow(k, tau, kind, left, right, lo, hi, feasible))
    return out


# -- jumps -------------------------------------------------------------------------------------

def refine_jump(x, window: ExtendedWindow, left_orders, right_orders,
                config: OptimizerConfig | None = None, T: int | None = None) -> JumpRefinement:
    """Profile the two-sided likelihood over ``tau`` in the search range.

    For each ``tau`` the left model is refitted on ``[left, tau]`` and the
    right model on ``[tau + 1, right]`` (lags taken from the data), warm
    started from the previous grid point.  Ties go to the smallest ``tau``.
    """
    config = config or OptimizerConfig()
    x = np.asarray(x, dtype=float)
    T = len(x) if T is None else T
    (pL, qL), (pR, qR) = left_orders, right_orders
    best = None
    rows, skipped = [], []
    warm_l = warm_r = None
    a0 = max(window.left - 1, 0)
    for tau in range(window.search_lo, window.search_hi + 1):
        try:
            fl = fit_segment(x, a0, tau, pL, qL, config, warm_l, condition=False, T=T)
            fr = fit_segment(x, tau, window.right, pR, qR, config, warm_r, condition=False, T=T)
        except (FitError, FloatingPointError, np.linalg.LinAlgError):
            rows.append((tau, np.nan))
            skipped.append(tau)
            continue
        warm_l, warm_r = fl.params, fr.params
        val = fl.loglik + fr.loglik
        rows.append((tau, val))
        if best is None or val > best[0]:
            best = (val, tau, fl, fr)
    if best is None:
        raise RefineError(f"no feasible split in the window of change-point {window.tau}")
    return JumpRefinement(best[1], best[2], best[3], np.array(rows), tuple(skipped))


def _replicate_normals(seed, index: int, B: int, n: int) -> np.ndarray:
    out = np.empty((n, B))
    for i in range(B):
        ss = np.random.SeedSequence(seed, spawn_key=(index, i))
        out[:, i] = np.random.default_rng(ss).standard_normal(n)
    return out


def bootstrap_offsets(window: ExtendedWindow, tau: int, left: SegmentParams, right: SegmentParams,
                      B: int, seed, T: int, burn_in: int = BURN_IN) -> np.ndarray:
    """Bootstrap sample of the offsets ``d~`` for a refined jump at ``tau``.

    Each replicate simulates the fitted left model for ``t <= 0`` and the
    fitted right model for ``t > 0`` over the window (curves evaluated at
    ``(tau + t) / T``), preceded by a burn-in under the left model frozen at
    the window start.  ``d~`` maximises the two-sided log-likelihood with
    the fitted parameters held fixed; ties go to the smallest offset.
    """
    if B < 1:
        raise ValueError("B must be positive")
    L = max(window.left, 1) - tau
    R = window.right - tau
    t_off = np.arange(L, R + 1)
    u = (tau + t_off) / T
    n = t_off.size
    P = max(left.p, right.p)
    phi = np.zeros((n, P))
    sig = np.empty(n)
    lm = t_off <= 0
    phi[lm, : left.p] = left.phi_at(u[lm]).T
    phi[~lm, : right.p] = right.phi_at(u[~lm]).T
    sig[lm] = left.sigma_at(u[lm])
    sig[~lm] = right.sigma_at(u[~lm])
    if np.any(sig <= SIGMA_MIN):
        raise SpecError("fitted noise curve is not positive over the window")
    phi0 = np.zeros((burn_in, P))
    phi0[:, : left.p] = left.phi_at(u[0]).T
    sig0 = np.full(burn_in, float(left.sigma_at(u[0])))
    eps = _replicate_normals(seed, window.index, B, burn_in + n)
    with np.errstate(over="ignore", invalid="ignore"):
        pre = simulate_recursion(phi0, sig0, eps[:burn_in])
        series = simulate_recursion(phi, sig, eps[burn_in:], pre[burn_in - P:])
        full = np.concatenate([pre, series], axis=0)  # row burn_in + j <-> offset L + j
        ll_left = _fixed_logliks(left, full, burn_in, u, P)
        ll_right = _fixed_logliks(right, full, burn_in, u, P)
    # only terms inside the search range differ between candidate offsets, so
    # the cumulative sum starts there (terms far outside can be huge and
    # would swamp the differences in floating point)
    lo = window.search_lo - tau - L
    hi = window.search_hi - tau - L
    step = (ll_left - ll_right)[lo + 1: hi + 1]
    step = np.where(np.isfinite(step), step, -np.inf)
    obj = np.vstack([np.zeros((1, step.shape[1])), np.cumsum(step, axis=0)])
    obj = np.where(np.isnan(obj), -np.inf, obj)
    return np.argmax(obj, axis=0) + lo + L


def _fixed_logliks(seg: SegmentParams, full: np.ndarray, start: int, u: np.ndarray, P: int) -> np.ndarray:
    n = u.size
    y = full[start: start + n]
    mean = np.zeros_like(y)
    phi = seg.phi_at(u)  # (p, n)
    for i in range(seg.p):
        mean += phi[i][:, None] * full[start - 1 - i: start - 1 - i + n]
    # each model is also scored on the other side of the break, where its
    # noise curve is extrapolated; a floor keeps the score finite there
    s = np.maximum(seg.sigma_at(u), SIGMA_MIN)[:, None]
    return -0.5 * np.log(2 * np.pi) - np.log(s) - 0.5 * ((y - mean) / s) ** 2


def bootstrap_jump_ci(window: ExtendedWindow, tau: int, left: SegmentParams, right: SegmentParams,
                      B: int, levels, seed, T: int) -> list[ChangePointCI]:
    """Percentile intervals ``[tau - u~, tau - l~]`` for each level."""
    if B < 100:
        raise ValueError("the bootstrap needs B >= 100")
    d = bootstrap_offsets(window, tau, left, right, B, seed, T)
    out = []
    for level in levels:
        a = 1.0 - level
        lq, uq = np.quantile(d, [a / 2, 1 - a / 2])
        lo, up = int(np.floor(lq)), int(np.ceil(uq))
        out.append(ChangePointCI(tau, tau - up, tau - lo, float(level), BOOTSTRAP))
    return out


# -- kinks -------------------------------------------------------------------------------------

def kink_gradient(eta: KinkParams, x, t: int) -> np.ndarray:
    """Gradient of ``ell(eta, X_t)`` in the coordinate order of ``KinkParams.to_vector``."""
    x = np.asarray(x, dtype=float)
    ts = np.array([t])
    lags = lag_matrix(x, ts, eta.p)
    _, g, _ = kink_point_derivatives(eta, x[ts - 1], lags, ts / len(x), hessian=False)
    return g[0]


def kink_hessian(eta: KinkParams, x, t: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    ts = np.array([t])
    lags = lag_matrix(x, ts, eta.p)
    _, _, H = kink_point_derivatives(eta, x[ts - 1], lags, ts / len(x), hessian=True)
    return H[0]


def kink_objective(eta: KinkParams, x, window: ExtendedWindow, hessian: bool = False):
    """``S(eta)``: mean-normalised log-likelihood over the window, with derivatives."""
    x = np.asarray(x, dtype=float)
    ts = window_times(window.left, window.right, eta.p)
    lags = lag_matrix(x, ts, eta.p)
    ll, g, H = kink_point_derivatives(eta, x[ts - 1], lags, ts / len(x), hessian)
    n = window.length
    return ll.sum() / n, g.sum(axis=0) / n, (H.sum(axis=0) / n if hessian else None)


def refine_kink(x, window: ExtendedWindow, orders, config: OptimizerConfig | None = None,
                T: int | None = None) -> KinkRefinement:
    """Grid profile over integer ``tau`` followed by a joint polish of all coordinates."""
    config = config or OptimizerConfig()
    x = np.asarray(x, dtype=float)
    T = len(x) if T is None else T
    n = window.length
    best = None
    warm = None
    rows = []
    for tau in range(window.search_lo, window.search_hi + 1):
        try:
            fit = fit_kink_fixed_r(x, window.left, window.right, tau / T, orders, config, warm, T)
        except (FitError, FloatingPointError, np.linalg.LinAlgError, SpecError):
            rows.append((tau, np.nan))
            continue
        warm = fit.state
        val = fit.loglik / n
        rows.append((tau, val))
        if best is None or val > best[0]:
            best = (val, tau, fit)
    if best is None:
        raise RefineError(f"no feasible kink fit in the window of change-point {window.tau}")
    grid_val, grid_tau, grid_fit = best
    r_lo, r_hi = window.search_lo / T, window.search_hi / T
    eta0 = grid_fit.params

    def fun(v):
        if not r_lo <= v[-1] <= r_hi:
            return np.inf, np.zeros_like(v)
        try:
            eta = KinkParams.from_vector(v, orders)
            s, g, _ = kink_objective(eta, x, window)
        except SpecError:
            return np.inf, np.zeros_like(v)
        if not np.isfinite(s):
            return np.inf, np.zeros_like(v)
        return -s, -g

    v0 = eta0.to_vector()
    H0 = None
    try:
        _, _, D = kink_objective(eta0, x, window, hessian=True)
        Hinv = np.linalg.inv(-D)
        if np.all(np.linalg.eigvalsh(0.5 * (Hinv + Hinv.T)) > 0):
            H0 = Hinv
    except (np.linalg.LinAlgError, SpecError):
        pass
    res = bfgs(fun, v0, config, H0)
    if -res.fun >= grid_val:
        eta, obj, conv = KinkParams.from_vector(res.x, orders), -res.fun, res.converged
    else:
        eta, obj, conv = eta0, grid_val, False
    tau = int(np.clip(round(eta.r * T), window.search_lo, window.search_hi))
    return KinkRefinement(tau, eta, float(obj), float(grid_val), grid_tau, conv, np.array(rows))


def kink_sandwich(eta: KinkParams, x, window: ExtendedWindow, literal: bool = False) -> SandwichCov:
    """Plug-in covariance ``D^-1 G D^-1`` of the hinge parameters.

    ``G`` averages per-point gradient outer products with the same ``1/n``
    normalisation as ``S``; ``literal=True`` uses the outer product of the
    full-sample gradient instead.
    """
    x = np.asarray(x, dtype=float)
    ts = window_times(window.left, window.right, eta.p)
    lags = lag_matrix(x, ts, eta.p)
    _, g, H = kink_point_derivatives(eta, x[ts - 1], lags, ts / len(x), hessian=True)
    n = window.length
    if literal:
        gs = g.sum(axis=0) / n
        G = np.outer(gs, gs)
    else:
        G = g.T @ g / n
    D = H.sum(axis=0) / n
    D = 0.5 * (D + D.T)
    if 1.0 / np.linalg.cond(D) < RCOND_MIN:
        raise RefineError("sandwich Hessian is singular; widen the window or lower the degree q")
    A = np.linalg.solve(D, G)
    Sigma = np.linalg.solve(D, A.T).T
    Sigma = 0.5 * (Sigma + Sigma.T)
    return SandwichCov(G, D, Sigma)


def kink_ci(tau: int, var_r: float, level: float, neighbors: tuple[int, int], T: int) -> ChangePointCI:
    """``tau +- z T sqrt(var_r) / sqrt(tau_next - tau_prev)``, rounded outward, clipped to ``[1, T]``."""
    if var_r < 0:
        raise ValueError("negative variance")
    z = stats.norm.ppf(1 - (1 - level) / 2)
    prev, nxt = neighbors
    half = z * T * np.sqrt(var_r) / np.sqrt(nxt - prev)
    lo = int(np.clip(np.floor(tau - half), 1, T))
    up = int(np.clip(np.ceil(tau + half), 1, T))
    return ChangePointCI(int(tau), lo, up, float(level), ASYMPTOTIC)
