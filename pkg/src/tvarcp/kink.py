"""Continuous reparametrisation of tvAR curves around kinks.

A single kink at relative location ``r`` is written in hinge form

    phi_i(u) = gamma_i + sum_j aL_ij (u - r)_-^j + sum_j aR_ij (u - r)_+^j,
    sigma(u) = xi + sum_j bL_j (u - r)_-^j + sum_j bR_j (u - r)_+^j,

so the curves are continuous at ``r`` by construction.  A chain of ``g``
consecutive kinks shares the anchor values ``A_k`` at the kinks; interior
segments are Lagrange interpolants on an integer grid between neighbouring
anchors, the outer segments are hinges.  A point with ``u == r`` belongs
to the left branch.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .tvar import SIGMA_MIN, SegmentParams, SpecError


# -- power basis helpers ----------------------------------------------------------

def taylor_shift(coeffs, r: float) -> np.ndarray:
    """Coefficients ``a`` with ``sum_m c_m u^m = sum_j a_j (u - r)^j``."""
    c = np.asarray(coeffs, dtype=float)
    q = len(c) - 1
    a = np.zeros_like(c)
    for j in range(q + 1):
        a[j] = sum(comb(m, j) * r ** (m - j) * c[m] for m in range(j, q + 1))
    return a


def taylor_unshift(a, r: float) -> np.ndarray:
    """Inverse of :func:`taylor_shift`."""
    return taylor_shift(a, -r)


# -- single kink --------------------------------------------------------------------

@dataclass(frozen=True)
class KinkParams:
    """Hinge parametrisation of a single kink.

    Parameters
    ----------
    gamma : (min(pL, pR),) shared AR levels at ``r``
    xi : noise level at ``r``
    alpha_left, alpha_right : (pL, qL) and (pR, qR) hinge coefficients
    beta_left, beta_right : (qL,) and (qR,) noise hinge coefficients
    r : relative kink location in (0, 1)
    """

    gamma: np.ndarray
    xi: float
    alpha_left: np.ndarray
    beta_left: np.ndarray
    alpha_right: np.ndarray
    beta_right: np.ndarray
    r: float

    def __post_init__(self):
        g = np.array(self.gamma, dtype=float, ndmin=1)
        aL = np.array(self.alpha_left, dtype=float, ndmin=2)
        aR = np.array(self.alpha_right, dtype=float, ndmin=2)
        bL = np.array(self.beta_left, dtype=float, ndmin=1)
        bR = np.array(self.beta_right, dtype=float, ndmin=1)
        if aL.shape[1] != bL.shape[0] or aR.shape[1] != bR.shape[0]:
            raise SpecError("alpha and beta blocks must agree on the hinge degree")
        if g.shape[0] != min(aL.shape[0], aR.shape[0]):
            raise SpecError("gamma must have min(p_left, p_right) entries")
        for name, v in (("gamma", g), ("alpha_left", aL), ("alpha_right", aR),
                        ("beta_left", bL), ("beta_right", bR)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        object.__setattr__(self, "xi", float(self.xi))
        object.__setattr__(self, "r", float(self.r))

    @property
    def orders(self) -> tuple[int, int, int, int]:
        """``(p_left, p_right, q_left, q_right)``."""
        return (self.alpha_left.shape[0], self.alpha_right.shape[0],
                self.alpha_left.shape[1], self.alpha_right.shape[1])

    @property
    def p(self) -> int:
        return max(self.alpha_left.shape[0], self.alpha_right.shape[0])

    @property
    def size(self) -> int:
        return vector_size(self.orders)

    def to_vector(self) -> np.ndarray:
        """Flatten in the order (gamma, xi, alpha_left, beta_left, alpha_right, beta_right, r)."""
        return np.concatenate([self.gamma, [self.xi], self.alpha_left.ravel(), self.beta_left,
                               self.alpha_right.ravel(), self.beta_right, [self.r]])

    @classmethod
    def from_vector(cls, v, orders) -> "KinkParams":
        pL, pR, qL, qR = orders
        v = np.asarray(v, dtype=float)
        if v.shape != (vector_size(orders),):
            raise ValueError("parameter vector does not match the orders")
        pm = min(pL, pR)
        i = 0
        parts = []
        for n in (pm, 1, pL * qL, qL, pR * qR, qR, 1):
            parts.append(v[i: i + n])
            i += n
        g, xi, aL, bL, aR, bR, r = parts
        return cls(g, xi[0], aL.reshape(pL, qL), bL, aR.reshape(pR, qR), bR, r[0])

    def replace_r(self, r: float) -> "KinkParams":
        v = self.to_vector()
        v[-1] = r
        return KinkParams.from_vector(v, self.orders)


def vector_size(orders) -> int:
    pL, pR, qL, qR = orders
    return min(pL, pR) + 1 + pL * qL + qL + pR * qR + qR + 1


def coordinate_names(orders) -> list[str]:
    """Labels of the flattened coordinates, in :meth:`KinkParams.to_vector` order."""
    pL, pR, qL, qR = orders
    names = [f"gamma[{i + 1}]" for i in range(min(pL, pR))] + ["xi"]
    names += [f"alpha_left[{i + 1},{j + 1}]" for i in range(pL) for j in range(qL)]
    names += [f"beta_left[{j + 1}]" for j in range(qL)]
    names += [f"alpha_right[{i + 1},{j + 1}]" for i in range(pR) for j in range(qR)]
    names += [f"beta_right[{j + 1}]" for j in range(qR)]
    return names + ["r"]


def _hinge_powers(u, r: float, qL: int, qR: int):
    """Hinge powers ``(u-r)_-^j`` (left) and ``(u-r)_+^j`` (right), j = 1..q."""
    u = np.asarray(u, dtype=float)
    d = u - r
    left = d <= 0
    dm = np.where(left, d, 0.0)
    dp = np.where(left, 0.0, d)
    Lm = np.stack([dm ** j for j in range(1, qL + 1)]) if qL else np.zeros((0,) + u.shape)
    Lp = np.stack([dp ** j for j in range(1, qR + 1)]) if qR else np.zeros((0,) + u.shape)
    return left, dm, dp, Lm, Lp


def eval_kink_curves(params: KinkParams, u, check: bool = True):
    """AR curves ``(p, n)`` and noise curve ``(n,)`` of a single kink at ``u``."""
    pL, pR, qL, qR = params.orders
    u = np.atleast_1d(np.asarray(u, dtype=float))
    _, _, _, Lm, Lp = _hinge_powers(u, params.r, qL, qR)
    P = max(pL, pR)
    phi = np.zeros((P, u.size))
    phi[: len(params.gamma)] += params.gamma[:, None]
    phi[:pL] += params.alpha_left @ Lm
    phi[:pR] += params.alpha_right @ Lp
    sigma = params.xi + params.beta_left @ Lm + params.beta_right @ Lp
    if check and np.any(sigma <= SIGMA_MIN):
        raise SpecError("sigma curve is not positive")
    return phi, sigma


def kink_point_derivatives(params: KinkParams, y, lags, u, hessian: bool = True):
    """Per-point log-likelihood, gradient and Hessian over the flattened coordinates.

    Parameters
    ----------
    y : (n,) observations ``X_t``
    lags : (n, P) lagged values ``X_{t-1}, ..., X_{t-P}``
    u : (n,) rescaled times ``t / T``

    Returns
    -------
    ll : (n,)
    grad : (n, z)
    hess : (n, z, z) or None
    """
    pL, pR, qL, qR = params.orders
    pm = min(pL, pR)
    P = max(pL, pR)
    z = params.size
    u = np.asarray(u, dtype=float)
    n = u.size
    left, dm, dp, Lm, Lp = _hinge_powers(u, params.r, qL, qR)
    lf = left.astype(float)
    rt = 1.0 - lf
    # first and second r-derivatives of the hinge powers
    dLm = np.stack([-j * (dm ** (j - 1) if j > 1 else np.ones(n)) * lf for j in range(1, qL + 1)]) if qL else np.zeros((0, n))
    dLp = np.stack([-j * (dp ** (j - 1) if j > 1 else np.ones(n)) * rt for j in range(1, qR + 1)]) if qR else np.zeros((0, n))
    d2Lm = np.stack([j * (j - 1) * (dm ** (j - 2) if j > 2 else np.ones(n)) * lf if j > 1 else np.zeros(n)
                     for j in range(1, qL + 1)]) if qL else np.zeros((0, n))
    d2Lp = np.stack([j * (j - 1) * (dp ** (j - 2) if j > 2 else np.ones(n)) * rt if j > 1 else np.zeros(n)
                     for j in range(1, qR + 1)]) if qR else np.zeros((0, n))

    phi = np.zeros((P, n))
    phi[:pm] += params.gamma[:, None]
    phi[:pL] += params.alpha_left @ Lm
    phi[:pR] += params.alpha_right @ Lp
    sigma = params.xi + params.beta_left @ Lm + params.beta_right @ Lp
    lags = np.asarray(lags, dtype=float)[:, :P]
    e = np.asarray(y, dtype=float) - np.einsum("in,ni->n", phi, lags)
    s2 = sigma ** 2
    ll = -0.5 * np.log(2 * np.pi * s2) - e ** 2 / (2 * s2)

    # gradients of sigma and of the conditional mean mu = sum_i phi_i X_{t-i}
    gs = np.zeros((n, z))
    gm = np.zeros((n, z))
    ir = z - 1
    bL0 = pm + 1 + pL * qL
    aR0 = bL0 + qL
    bR0 = aR0 + pR * qR
    gs[:, pm] = 1.0
    gs[:, bL0: bL0 + qL] = Lm.T
    gs[:, bR0: bR0 + qR] = Lp.T
    gs[:, ir] = params.beta_left @ dLm + params.beta_right @ dLp
    gm[:, :pm] = lags[:, :pm]
    for i in range(pL):
        gm[:, pm + 1 + i * qL: pm + 1 + (i + 1) * qL] = lags[:, i: i + 1] * Lm.T
    for i in range(pR):
        gm[:, aR0 + i * qR: aR0 + (i + 1) * qR] = lags[:, i: i + 1] * Lp.T
    dphi_dr = np.zeros((P, n))
    dphi_dr[:pL] += params.alpha_left @ dLm
    dphi_dr[:pR] += params.alpha_right @ dLp
    gm[:, ir] = np.einsum("in,ni->n", dphi_dr, lags)

    l_s = -1.0 / sigma + e ** 2 / sigma ** 3
    l_m = e / s2
    grad = l_s[:, None] * gs + l_m[:, None] * gm
    if not hessian:
        return ll, grad, None

    l_ss = 1.0 / s2 - 3.0 * e ** 2 / s2 ** 2
    l_sm = -2.0 * e / sigma ** 3
    l_mm = -1.0 / s2
    H = (l_ss[:, None, None] * gs[:, :, None] * gs[:, None, :]
         + l_sm[:, None, None] * (gs[:, :, None] * gm[:, None, :] + gm[:, :, None] * gs[:, None, :])
         + l_mm[:, None, None] * gm[:, :, None] * gm[:, None, :])
    # second derivatives: only pairs involving r are nonzero
    h2s = np.zeros((n, z))
    h2m = np.zeros((n, z))
    h2s[:, bL0: bL0 + qL] = dLm.T
    h2s[:, bR0: bR0 + qR] = dLp.T
    h2s[:, ir] = params.beta_left @ d2Lm + params.beta_right @ d2Lp
    for i in range(pL):
        h2m[:, pm + 1 + i * qL: pm + 1 + (i + 1) * qL] = lags[:, i: i + 1] * dLm.T
    for i in range(pR):
        h2m[:, aR0 + i * qR: aR0 + (i + 1) * qR] = lags[:, i: i + 1] * dLp.T
    d2phi = np.zeros((P, n))
    d2phi[:pL] += params.alpha_left @ d2Lm
    d2phi[:pR] += params.alpha_right @ d2Lp
    h2m[:, ir] = np.einsum("in,ni->n", d2phi, lags)
    extra = l_s[:, None] * h2s + l_m[:, None] * h2m
    H[:, ir, :] += extra
    H[:, :, ir] += extra
    H[:, ir, ir] -= extra[:, ir]
    return ll, grad, H


# -- conversions between hinge and two-segment forms ---------------------------------

def thetas_to_kink(left: SegmentParams, right: SegmentParams, r: float, atol: float = 1e-9) -> KinkParams:
    """Hinge form of two segments that meet continuously at ``r``."""
    pL, pR = left.p, right.p
    pm = min(pL, pR)
    aL = np.array([taylor_shift(row, r) for row in left.phi])
    aR = np.array([taylor_shift(row, r) for row in right.phi])
    sL = taylor_shift(left.sigma, r)
    sR = taylor_shift(right.sigma, r)
    lv = np.zeros(max(pL, pR))
    rv = np.zeros(max(pL, pR))
    lv[:pL] = aL[:, 0]
    rv[:pR] = aR[:, 0]
    if np.max(np.abs(lv - rv)) > atol or abs(sL[0] - sR[0]) > atol:
        raise SpecError("segments are not continuous at the kink")
    return KinkParams(aL[:pm, 0], sL[0], aL[:, 1:], sL[1:], aR[:, 1:], sR[1:], r)


def kink_to_thetas(params: KinkParams) -> tuple[SegmentParams, SegmentParams]:
    """Power-basis coefficients of the left and right segments."""
    pL, pR, qL, qR = params.orders
    pm = len(params.gamma)

    def side(alpha, beta, p):
        rows = []
        for i in range(p):
            level = params.gamma[i] if i < pm else 0.0
            rows.append(taylor_unshift(np.concatenate([[level], alpha[i]]), params.r))
        sig = taylor_unshift(np.concatenate([[params.xi], beta]), params.r)
        return SegmentParams(np.array(rows).reshape(p, -1), sig)

    return side(params.alpha_left, params.beta_left, pL), side(params.alpha_right, params.beta_right, pR)


# -- kink chains ----------------------------------------------------------------------

def lagrange_grid(lo: int, hi: int, q: int) -> np.ndarray:
    """Integer grid ``floor(lo + (hi - lo) j / q)``, j = 0..q (must be distinct)."""
    if q < 1:
        raise SpecError("interior chain segments need degree at least 1")
    grid = np.array([lo + ((hi - lo) * j) // q for j in range(q + 1)], dtype=float)
    if np.any(np.diff(grid) <= 0):
        raise SpecError(f"Lagrange grid points coincide on ({lo}, {hi}] with q={q}")
    return grid


def _lagrange(t: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Lagrange basis polynomials ``(q + 1, n)`` on ``grid`` evaluated at ``t``."""
    lo, hi = grid[0], grid[-1]
    s = (t - lo) / (hi - lo)
    g = (grid - lo) / (hi - lo)
    out = np.ones((len(grid), t.size))
    for j in range(len(grid)):
        for m in range(len(grid)):
            if m != j:
                out[j] *= (s - g[m]) / (g[j] - g[m])
    return out


def chain_basis_size(qs) -> int:
    g = len(qs) - 1
    return g + qs[0] + sum(q - 1 for q in qs[1:-1]) + qs[-1]


def chain_basis(t, T: int, taus, qs) -> np.ndarray:
    """Scalar basis ``(n, nb)`` shared by every AR coordinate and the noise curve.

    Coefficient order: anchors ``A_0..A_{g-1}`` (values at the kinks),
    left hinge powers ``1..q_0``, free interior Lagrange values (``j =
    1..q_k - 1`` per interior segment), right hinge powers ``1..q_g``.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    taus = [int(v) for v in taus]
    g = len(taus)
    if len(qs) != g + 1:
        raise SpecError("a chain with g kinks needs g + 1 degrees")
    nb = chain_basis_size(qs)
    B = np.zeros((t.size, nb))
    u = t / T
    pos = g
    # first segment: A_0 + left hinge around taus[0]
    seg = t <= taus[0]
    B[seg, 0] = 1.0
    d = u[seg] - taus[0] / T
    for j in range(1, qs[0] + 1):
        B[seg, pos + j - 1] = d ** j
    pos += qs[0]
    # interior segments: A_0 + sum_j L_j alpha_j with anchored endpoint values
    for k in range(1, g):
        q = qs[k]
        seg = (t > taus[k - 1]) & (t <= taus[k])
        grid = lagrange_grid(taus[k - 1], taus[k], q)
        L = _lagrange(t[seg], grid)
        B[seg, 0] += 1.0 - L[0] - L[q]
        B[seg, k - 1] += L[0]
        B[seg, k] += L[q]
        for j in range(1, q):
            B[seg, pos + j - 1] = L[j]
        pos += q - 1
    # last segment: A_{g-1} + right hinge around taus[g-1]
    seg = t > taus[g - 1]
    B[seg, g - 1] += 1.0
    d = u[seg] - taus[g - 1] / T
    for j in range(1, qs[g] + 1):
        B[seg, pos + j - 1] = d ** j
    return B


@dataclass(frozen=True)
class KinkChain:
    """Consecutive kinks sharing continuous curves between two jump boundaries.

    ``phi_coef`` is ``(p, nb)`` and ``sigma_coef`` is ``(nb,)`` in the
    :func:`chain_basis` coefficient order.  The chain covers ``(start, end]``.
    """

    T: int
    start: int
    taus: tuple
    end: int
    qs: tuple
    phi_coef: np.ndarray
    sigma_coef: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "taus", tuple(int(v) for v in self.taus))
        object.__setattr__(self, "qs", tuple(int(v) for v in self.qs))
        phi = np.array(self.phi_coef, dtype=float, ndmin=2)
        sig = np.array(self.sigma_coef, dtype=float, ndmin=1)
        nb = chain_basis_size(self.qs)
        if phi.shape[1] != nb or sig.shape != (nb,):
            raise SpecError("chain coefficients do not match the layout")
        edges = [self.start, *self.taus, self.end]
        if any(b <= a for a, b in zip(edges[:-1], edges[1:])):
            raise SpecError("chain boundaries must increase")
        for k in range(1, len(self.taus)):
            lagrange_grid(self.taus[k - 1], self.taus[k], self.qs[k])
        phi.setflags(write=False)
        sig.setflags(write=False)
        object.__setattr__(self, "phi_coef", phi)
        object.__setattr__(self, "sigma_coef", sig)

    @property
    def p(self) -> int:
        return self.phi_coef.shape[0]

    @property
    def g(self) -> int:
        return len(self.taus)

    @property
    def anchors_phi(self) -> np.ndarray:
        return self.phi_coef[:, : self.g]

    @property
    def anchors_sigma(self) -> np.ndarray:
        return self.sigma_coef[: self.g]

    def bounds(self) -> list[tuple[int, int]]:
        edges = [self.start, *self.taus, self.end]
        return list(zip(edges[:-1], edges[1:]))

    def basis(self, t) -> np.ndarray:
        return chain_basis(t, self.T, self.taus, self.qs)

    def curves_at_t(self, t):
        B = self.basis(t)
        return self.phi_coef @ B.T, B @ self.sigma_coef

    def segment_params(self) -> list[SegmentParams]:
        """Power-basis coefficients of every segment of the chain."""
        out = []
        for (a, b), q in zip(self.bounds(), self.qs):
            # exact interpolation at q + 1 distinct points inside the segment
            tt = np.linspace(a + 1, b, q + 1) if q else np.array([0.5 * (a + 1 + b)])
            phi, sig = self.curves_at_t(tt)
            V = np.vander(tt / self.T, q + 1, increasing=True)
            out.append(SegmentParams(np.linalg.solve(V, phi.T).T, np.linalg.solve(V, sig)))
        return out

    def to_single(self) -> KinkParams:
        """Hinge form of a one-kink chain."""
        if self.g != 1:
            raise ValueError("only one-kink chains map to KinkParams")
        q0, q1 = self.qs
        a, s = self.phi_coef, self.sigma_coef
        return KinkParams(a[:, 0], s[0], a[:, 1: 1 + q0], s[1: 1 + q0],
                          a[:, 1 + q0:], s[1 + q0:], self.taus[0] / self.T)


def eval_kink_chain_curves(chain: KinkChain, u, check: bool = True):
    """AR curves ``(p, n)`` and noise curve ``(n,)`` of a chain at ``u``."""
    t = np.atleast_1d(np.asarray(u, dtype=float)) * chain.T
    phi, sigma = chain.curves_at_t(t)
    if check and np.any(sigma <= SIGMA_MIN):
        raise SpecError("sigma curve is not positive")
    return phi, sigma
