"""Piecewise tvAR processes with polynomial parameter curves.

A segment of a piecewise tvAR(p) process follows

    X_t = sum_i phi_i(t/T) X_{t-i} + sigma(t/T) eps_t,

where every curve is a polynomial in rescaled time ``u = t/T`` and the
innovations are iid standard normal.  Time indices are 1-based throughout
the public API: ``x[t - 1]`` holds ``X_t``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

SIGMA_MIN = 1e-8
STABILITY_MARGIN = 0.005
MAX_STABILITY_GRID = 128

JUMP = "jump"
KINK = "kink"
CHANGE_TYPES = (JUMP, KINK)


class SpecError(ValueError):
    """Raised for invalid or unstable model descriptions."""


def horner(coeffs, u):
    """Evaluate ``sum_j coeffs[j] * u**j`` (vectorised in ``u``)."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    for c in np.asarray(coeffs, dtype=float)[::-1]:
        out = out * u + c
    return out


@dataclass(frozen=True)
class PolyCurve:
    """Polynomial curve ``c(u) = sum_j c_j u^j`` on ``[0, 1]``."""

    coeffs: tuple

    def __post_init__(self):
        coeffs = tuple(float(c) for c in np.atleast_1d(self.coeffs))
        if len(coeffs) == 0:
            raise SpecError("a polynomial curve needs at least one coefficient")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def __call__(self, u):
        return horner(self.coeffs, u)


def eval_poly(curve: PolyCurve, u):
    """Horner evaluation of ``curve`` at ``u``."""
    return curve(u)


@dataclass(frozen=True)
class SegmentParams:
    """Coefficients of one tvAR segment.

    Parameters
    ----------
    phi : array_like, shape (p, q + 1)
        Row ``i`` holds the power-basis coefficients of ``phi_{i+1}(u)``.
    sigma : array_like, shape (q + 1,)
        Power-basis coefficients of ``sigma(u)``.
    """

    phi: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float, ndmin=2)
        sigma = np.array(self.sigma, dtype=float, ndmin=1)
        if phi.ndim != 2 or sigma.ndim != 1:
            raise SpecError("phi must be 2-d and sigma 1-d")
        if phi.shape[0] < 1:
            raise SpecError("AR order must be at least 1")
        if phi.shape[1] != sigma.shape[0]:
            raise SpecError("phi and sigma curves must share the degree q")
        phi.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def from_curves(cls, phi: Sequence[Sequence[float]], sigma: Sequence[float]) -> "SegmentParams":
        """Build from ragged coefficient lists, padding with zeros to a common degree."""
        rows = [list(np.atleast_1d(r)) for r in phi]
        sig = list(np.atleast_1d(sigma))
        width = max([len(r) for r in rows] + [len(sig)])
        pad = lambda r: list(r) + [0.0] * (width - len(r))
        return cls(np.array([pad(r) for r in rows]), np.array(pad(sig)))

    @property
    def p(self) -> int:
        return self.phi.shape[0]

    @property
    def q(self) -> int:
        return self.phi.shape[1] - 1

    def phi_curves(self) -> list[PolyCurve]:
        return [PolyCurve(tuple(r)) for r in self.phi]

    def sigma_curve(self) -> PolyCurve:
        return PolyCurve(tuple(self.sigma))

    def phi_at(self, u) -> np.ndarray:
        """AR curves at ``u``; shape ``(p,) + shape(u)``."""
        return np.stack([horner(r, u) for r in self.phi])

    def sigma_at(self, u) -> np.ndarray:
        return horner(self.sigma, u)

    def __eq__(self, other):
        if not isinstance(other, SegmentParams):
            return NotImplemented
        return (self.phi.shape == other.phi.shape
                and np.array_equal(self.phi, other.phi)
                and np.array_equal(self.sigma, other.sigma))

    def __hash__(self):
        return hash((self.phi.tobytes(), self.sigma.tobytes(), self.phi.shape))


def ar_polynomial_modulus(phi: np.ndarray, lam) -> np.ndarray:
    """``|1 - sum_j phi_j exp(-i lam j)|`` for a single coefficient vector."""
    lam = np.asarray(lam, dtype=float)
    j = np.arange(1, len(phi) + 1)
    z = np.exp(-1j * np.multiply.outer(lam, j))
    return np.abs(1.0 - z @ np.asarray(phi, dtype=float))


def ar_spectral_density(phi: np.ndarray, sigma: float, lam) -> np.ndarray:
    """Spectral density of a stationary AR model with the given coefficients."""
    mod = ar_polynomial_modulus(phi, lam)
    if np.any(mod < 1e-12):
        raise SpecError("AR polynomial is numerically zero on the unit circle")
    return sigma ** 2 / (2 * np.pi) / mod ** 2


def tv_spectral_density(seg: SegmentParams, u: float, lam):
    """Time-varying spectral density ``f(u, lam)`` of a tvAR segment."""
    return ar_spectral_density(seg.phi_at(float(u)), float(seg.sigma_at(float(u))), lam)


def companion_radius(phi: np.ndarray) -> float:
    """Largest modulus of the inverse roots of ``1 - sum_i phi_i z^i``."""
    phi = np.asarray(phi, dtype=float)
    p = len(phi)
    if p == 1:
        return abs(phi[0])
    comp = np.zeros((p, p))
    comp[0] = phi
    comp[1:, :-1] = np.eye(p - 1)
    return float(np.max(np.abs(np.linalg.eigvals(comp))))


def check_stability(seg: SegmentParams, u_grid, c: float = STABILITY_MARGIN) -> bool:
    """True iff every root of the AR polynomial lies outside radius ``1 + c``.

    The check runs on (at most) ``MAX_STABILITY_GRID`` equispaced points
    spanning ``u_grid``.
    """
    if c <= 0:
        raise ValueError("stability margin must be positive")
    u = np.asarray(u_grid, dtype=float).ravel()
    if u.size > MAX_STABILITY_GRID:
        u = np.linspace(u.min(), u.max(), MAX_STABILITY_GRID)
    phis = seg.phi_at(u)
    bound = 1.0 / (1.0 + c)
    return all(companion_radius(phis[:, k]) < bound for k in range(u.size))


@dataclass(frozen=True)
class PiecewiseTvarSpec:
    """Generative description of a piecewise tvAR process.

    Segment ``k`` (0-based) covers ``t`` in ``(taus[k-1], taus[k]]`` with
    ``taus[-1] = 0`` and ``taus[m] = T``.  ``types[k]`` labels the change at
    ``taus[k]``.
    """

    T: int
    taus: tuple
    types: tuple
    segments: tuple
    min_length: int = 0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "taus", tuple(int(t) for t in self.taus))
        object.__setattr__(self, "types", tuple(self.types))
        object.__setattr__(self, "segments", tuple(self.segments))
        self.validate()

    @property
    def m(self) -> int:
        return len(self.taus)

    def bounds(self) -> list[tuple[int, int]]:
        edges = [0, *self.taus, self.T]
        return list(zip(edges[:-1], edges[1:]))

    def validate(self, c: float = STABILITY_MARGIN, stability: bool = True):
        if self.T < 2:
            raise SpecError("series length must be at least 2")
        if len(self.types) != self.m or len(self.segments) != self.m + 1:
            raise SpecError("need one type per change and m + 1 segments")
        if any(t not in CHANGE_TYPES for t in self.types):
            raise SpecError(f"change types must be one of {CHANGE_TYPES}")
        edges = [0, *self.taus, self.T]
        if any(b <= a for a, b in zip(edges[:-1], edges[1:])):
            raise SpecError("change locations must be strictly increasing inside (0, T)")
        for (a, b) in self.bounds():
            if b - a <= self.min_length:
                raise SpecError(f"segment ({a}, {b}] is not longer than {self.min_length}")
        for seg, (a, b) in zip(self.segments, self.bounds()):
            u = np.arange(a + 1, b + 1) / self.T
            if np.any(seg.sigma_at(u) <= SIGMA_MIN):
                raise SpecError(f"sigma is not positive on segment ({a}, {b}]")
            if stability and not check_stability(seg, u, c):
                raise SpecError(f"segment ({a}, {b}] violates the stability margin")

    def coefficient_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """AR coefficients ``(T, p_max)`` and noise scales ``(T,)`` for t = 1..T."""
        pmax = max(s.p for s in self.segments)
        phi = np.zeros((self.T, pmax))
        sig = np.zeros(self.T)
        for seg, (a, b) in zip(self.segments, self.bounds()):
            u = np.arange(a + 1, b + 1) / self.T
            phi[a:b, : seg.p] = seg.phi_at(u).T
            sig[a:b] = seg.sigma_at(u)
        return phi, sig


def simulate_recursion(phi: np.ndarray, sigma: np.ndarray, eps: np.ndarray,
                       init: np.ndarray | None = None) -> np.ndarray:
    """Run ``X_t = sum_i phi[t, i] X_{t-i} + sigma[t] eps[t]``.

    ``init`` supplies the most recent ``p`` values before the first step in
    chronological order (zeros when omitted).  ``eps`` may carry a trailing
    replicate axis, in which case all replicates are propagated together.
    """
    n, p = phi.shape
    extra = eps.shape[1:]
    out = np.zeros((n + p,) + extra)
    if init is not None:
        out[:p] = init
    phi_l = phi.tolist()
    shock = sigma.reshape((n,) + (1,) * len(extra)) * eps
    if not extra and p == 1:
        prev = float(out[0])
        col = [row[0] for row in phi_l]
        vals = shock.tolist()
        res = [0.0] * n
        for t in range(n):
            prev = col[t] * prev + vals[t]
            res[t] = prev
        return np.array(res)
    for t in range(n):
        acc = shock[t].copy() if extra else float(shock[t])
        row = phi_l[t]
        for i in range(p):
            if row[i] != 0.0:
                acc = acc + row[i] * out[p + t - 1 - i]
        out[p + t] = acc
    return out[p:]


def simulate(spec: PiecewiseTvarSpec, seed: int, burn_in: int = 200) -> np.ndarray:
    """Simulate one realisation of ``spec``.

    Burn-in samples use the first segment frozen at ``u = 1/T`` and are
    discarded; ``burn_in = 0`` starts the recursion from zeros.  The
    recursion carries lagged values across segment boundaries.
    """
    if burn_in < 0:
        raise ValueError("burn_in must be non-negative")
    phi, sig = spec.coefficient_grid()
    if np.any(sig <= SIGMA_MIN):
        raise SpecError("non-positive sigma on the sample grid")
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(burn_in + spec.T)
    pmax = phi.shape[1]
    init = np.zeros(pmax)
    if burn_in:
        phi0 = np.tile(phi[0], (burn_in, 1))
        sig0 = np.full(burn_in, sig[0])
        pre = simulate_recursion(phi0, sig0, eps[:burn_in])
        k = min(pmax, burn_in)
        init[pmax - k:] = pre[burn_in - k:]
    return simulate_recursion(phi, sig, eps[burn_in:], init)


# -- plain-text serialisation -------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def dump_spec(spec: PiecewiseTvarSpec) -> str:
    """Serialise ``spec`` to a key/value document (lossless at 17 digits)."""
    lines = ["[model]", f"T = {spec.T}", f"segments = {spec.m + 1}"]
    if spec.name:
        lines.append(f"name = {spec.name}")
    if spec.min_length:
        lines.append(f"min_length = {spec.min_length}")
    for k, (seg, (a, b)) in enumerate(zip(spec.segments, spec.bounds())):
        lines += ["", f"[segment {k + 1}]", f"p = {seg.p}", f"q = {seg.q}", f"end = {b}"]
        if k < spec.m:
            lines.append(f"type = {spec.types[k]}")
        for i, row in enumerate(seg.phi):
            lines.append(f"phi{i + 1} = " + " ".join(_fmt(c) for c in row))
        lines.append("sigma = " + " ".join(_fmt(c) for c in seg.sigma))
    return "\n".join(lines) + "\n"


def load_spec(text: str, validate: bool = True) -> PiecewiseTvarSpec:
    """Parse a document written by :func:`dump_spec`."""
    import configparser

    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
        model = cp["model"]
        T = int(model["T"])
        nseg = int(model["segments"])
        taus, types, segs = [], [], []
        for k in range(1, nseg + 1):
            sec = cp[f"segment {k}"]
            p, q = int(sec["p"]), int(sec["q"])
            phi = [[float(v) for v in sec[f"phi{i}"].split()] for i in range(1, p + 1)]
            sigma = [float(v) for v in sec["sigma"].split()]
            if any(len(r) != q + 1 for r in phi) or len(sigma) != q + 1:
                raise SpecError(f"segment {k}: coefficient rows must have q + 1 entries")
            segs.append(SegmentParams(np.array(phi), np.array(sigma)))
            if k < nseg:
                taus.append(int(sec["end"]))
                types.append(sec["type"].strip())
            elif int(sec["end"]) != T:
                raise SpecError("last segment must end at T")
    except (KeyError, configparser.Error, ValueError) as exc:
        if isinstance(exc, SpecError):
            raise
        raise SpecError(f"malformed spec document: {exc}") from exc
    spec = object.__new__(PiecewiseTvarSpec)
    fields = dict(T=T, taus=tuple(taus), types=tuple(types), segments=tuple(segs),
                  min_length=int(model.get("min_length", 0)), name=model.get("name", ""))
    for key, val in fields.items():
        object.__setattr__(spec, key, val)
    if validate:
        spec.validate()
    return spec
