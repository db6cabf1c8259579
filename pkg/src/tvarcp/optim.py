"""Deterministic BFGS minimiser with backtracking Armijo line search.

Infeasible trial points (objective ``inf`` or ``nan``) are treated like a
failed Armijo test, so the search backtracks into the feasible region and
every accepted step strictly decreases the objective.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class OptimizerConfig:
    """Controls for :func:`bfgs`.

    ``gtol`` bounds the gradient in the metric of the current inverse
    Hessian approximation, ``sqrt(g' H g)``, which is invariant to the
    scaling of the coordinates.
    """

    max_iterations: int = 100
    gtol: float = 1e-6
    xtol: float = 1e-12
    multistart: int = 3
    fd_step: float = 1e-6
    armijo: float = 1e-4
    max_backtracks: int = 40

    def __post_init__(self):
        for name in ("max_iterations", "gtol", "xtol", "multistart", "fd_step", "max_backtracks"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    converged: bool
    gradient_norm: float
    history: list


def bfgs(fun: Callable[[np.ndarray], tuple[float, np.ndarray]], x0, config: OptimizerConfig,
         H0: np.ndarray | None = None) -> OptimResult:
    """Minimise ``fun`` (returning value and gradient) from ``x0``.

    ``H0`` is an initial inverse-Hessian approximation; without it the
    identity is rescaled after the first step.
    """
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    if not np.isfinite(f):
        raise FloatingPointError("infeasible starting point")
    n = x.size
    H = np.eye(n) if H0 is None else np.array(H0, dtype=float)
    scale_identity = H0 is None
    history = [f]
    converged = False
    it = 0
    gnorm = float(np.sqrt(max(g @ H @ g, 0.0)))
    if gnorm < config.gtol:
        return OptimResult(x, f, g, 0, True, gnorm, history)
    for it in range(1, config.max_iterations + 1):
        d = -H @ g
        slope = g @ d
        if not slope < 0:
            H = np.eye(n)
            d = -g
            slope = -(g @ g)
        step = 1.0
        accepted = False
        for _ in range(config.max_backtracks):
            xn = x + step * d
            fn, gn = fun(xn)
            if np.isfinite(fn) and fn <= f + config.armijo * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        s = xn - x
        y = gn - g
        x, f, g = xn, fn, gn
        history.append(f)
        sy = s @ y
        if sy > 1e-12 * np.sqrt((s @ s) * (y @ y)):
            if scale_identity and it == 1:
                H = np.eye(n) * (sy / (y @ y))
            rho = 1.0 / sy
            Hy = H @ y
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * (y @ Hy) + rho) * np.outer(s, s)
        gnorm = float(np.sqrt(max(g @ H @ g, 0.0)))
        if gnorm < config.gtol:
            converged = True
            break
        if np.max(np.abs(s)) <= config.xtol * (1.0 + np.max(np.abs(x))):
            converged = gnorm < np.sqrt(config.gtol)
            break
    return OptimResult(x, f, g, it, converged, gnorm, history)


def central_gradient(f: Callable[[np.ndarray], float], x, step: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient with relative step sizes."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g
