"""Simulation models 1-9, the Monte-Carlo driver and coverage metrics.

All models are written in rescaled time ``u = t/T`` with break fractions,
so any ``T`` may be requested; the default lengths are the ones used in
the reference simulation study.
"""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .likelihood import FitError
from .optim import OptimizerConfig
from .pipeline import DEFAULT_LEVELS, DetectorConfig, detect
from .refine import RefineError
from .scan import ScanConfigError
from .tvar import (JUMP, KINK, SIGMA_MIN, PiecewiseTvarSpec, SegmentParams, SpecError,
                   simulate, simulate_recursion)

BURN_IN = 200
THREADS_ENV = "TVARCP_THREADS"


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, os.cpu_count() or 1)


# -- models ------------------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelDef:
    """A simulation model: true change-points and a seeded generator."""

    id: int
    name: str
    T: int
    fractions: tuple  # break locations as fractions of T
    types: tuple
    build: Callable  # (T) -> PiecewiseTvarSpec or grid tuple (phi, sigma) or callable(seed)
    note: str = ""

    def taus(self, T: int | None = None) -> tuple:
        T = T or self.T
        return tuple(int(round(f * T)) for f in self.fractions)

    def simulate(self, seed, T: int | None = None) -> np.ndarray:
        T = T or self.T
        obj = self.build(T)
        if isinstance(obj, PiecewiseTvarSpec):
            return simulate(obj, seed, BURN_IN)
        if callable(obj):
            return obj(seed)
        phi, sig = obj
        return simulate_grid(phi, sig, seed, BURN_IN)

    def spec(self, T: int | None = None):
        obj = self.build(T or self.T)
        return obj if isinstance(obj, PiecewiseTvarSpec) else None


def simulate_grid(phi: np.ndarray, sigma: np.ndarray, seed, burn_in: int = BURN_IN) -> np.ndarray:
    """Simulate from coefficient grids ``phi (T, p)`` and ``sigma (T,)``.

    Uses the same random stream layout and burn-in as :func:`tvar.simulate`.
    """
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    if phi.shape[0] != len(sigma):
        phi = phi.T
    sigma = np.asarray(sigma, dtype=float)
    T, p = phi.shape
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(burn_in + T)
    init = np.zeros(p)
    if burn_in:
        pre = simulate_recursion(np.tile(phi[0], (burn_in, 1)), np.full(burn_in, sigma[0]), eps[:burn_in])
        k = min(p, burn_in)
        init[p - k:] = pre[burn_in - k:]
    return simulate_recursion(phi, sigma, eps[burn_in:], init)


def _seg(phi, sigma=(1.0,)):
    q = max(len(phi), len(sigma)) - 1
    phi = list(phi) + [0.0] * (q + 1 - len(phi))
    sigma = list(sigma) + [0.0] * (q + 1 - len(sigma))
    return SegmentParams([phi], sigma)


def _piecewise(T, fractions, types, segs, name):
    taus = tuple(int(round(f * T)) for f in fractions)
    return PiecewiseTvarSpec(T, taus, types, segs, name=name)


def _model1(T):
    return _piecewise(T, (0.5,), (JUMP,), [
        _seg([0.9, -0.4], [2.0, -1.0]), _seg([-0.7, 0.2], [1.0, 1.0])], "model1")


def _model2(T):
    # 0.75 + 3(u - 1/2) and 0.75 - 3(u - 1/2)
    return _piecewise(T, (0.5,), (KINK,), [_seg([-0.75, 3.0]), _seg([2.25, -3.0])], "model2")


def _model3(T):
    return PiecewiseTvarSpec(T, (), (), [_seg([0.99, -1.98])], name="model3")


def _model4(T):
    u = np.arange(1, T + 1) / T
    sigma = np.maximum(10.0 * np.abs(u - 0.5), SIGMA_MIN)
    return np.full((T, 1), 0.5), sigma


def _model5(T):
    u = np.arange(1, T + 1) / T
    t = np.arange(1, T + 1)
    cut = int(round(0.5 * T))
    phi = np.where(t <= cut, 25.6 * u ** 2 - 12.8 * u + 0.8, -1.6 * np.cos(np.pi * u) - 0.8)
    return phi[:, None], np.ones(T)


def _model6(T):
    return _piecewise(T, (0.5, 0.75), (JUMP, JUMP), [
        _seg([-0.75, 3.0]), _seg([-3.75, 6.0]), _seg([-5.25, 6.0])], "model6")


def _model7(T):
    # continuous zigzag 0.75 +- slope between kinks at T/3 and 2T/3
    return _piecewise(T, (1 / 3, 2 / 3), (KINK, KINK), [
        _seg([-0.75, 4.5]), _seg([2.25, -4.5]), _seg([-3.75, 4.5])], "model7")


def _model8(T):
    return _piecewise(T, (840 / 2048, 1644 / 2048), (JUMP, JUMP), [
        _seg([0.75]), _seg([-0.75]), _seg([0.75])], "model8")


def _model9(T):
    cut = int(round(1150 / 2048 * T))

    def run(seed):
        rng = np.random.default_rng(seed)
        eps = rng.standard_normal(BURN_IN + T + 1)
        x = np.zeros(BURN_IN + T)
        prev = 0.0
        for i in range(BURN_IN + T):
            t = i - BURN_IN + 1
            ar = 0.75 * prev if t <= cut else 0.0
            prev = ar + eps[i + 1] + 0.75 * eps[i]
            x[i] = prev
        return x[BURN_IN:]
    return run


_CATALOG = {
    1: ModelDef(1, "piecewise tvAR(1) with one jump", 2000, (0.5,), (JUMP,), _model1),
    2: ModelDef(2, "piecewise tvAR(1) with one kink", 2000, (0.5,), (KINK,), _model2),
    3: ModelDef(3, "tvAR(1) without change-points", 2048, (), (), _model3),
    4: ModelDef(4, "AR(1) with time-varying noise variance", 2048, (), (), _model4,
                "noise scale clamped at sigma_min where it touches zero"),
    5: ModelDef(5, "tvAR(1) with one jump, cosine second segment", 2048, (0.5,), (JUMP,), _model5),
    6: ModelDef(6, "piecewise tvAR(1) with two jumps", 2048, (0.5, 0.75), (JUMP, JUMP), _model6),
    7: ModelDef(7, "piecewise tvAR(1) with two kinks", 3072, (1 / 3, 2 / 3), (KINK, KINK), _model7,
                "slopes repaired to give a continuous, stable zigzag"),
    8: ModelDef(8, "AR(1) with two sign reversals", 2048, (840 / 2048, 1644 / 2048), (JUMP, JUMP), _model8),
    9: ModelDef(9, "ARMA(1,1) to MA(1)", 2048, (1150 / 2048,), (JUMP,), _model9),
}


def model_catalog() -> dict:
    return dict(_CATALOG)


def get_model(model_id: int) -> ModelDef:
    try:
        return _CATALOG[int(model_id)]
    except (KeyError, ValueError):
        raise SpecError(f"unknown model {model_id!r}; choose 1..9") from None


# -- metrics -------------------------------------------------------------------------------------

def ace(coverages: dict, levels=DEFAULT_LEVELS) -> float:
    """Average absolute gap between empirical and nominal coverage."""
    missing = [a for a in levels if not any(abs(a - k) < 1e-12 for k in coverages)]
    if missing:
        raise KeyError(f"missing coverage for levels {missing}")
    vals = []
    for a in levels:
        c = next(v for k, v in coverages.items() if abs(k - a) < 1e-12)
        vals.append(abs(c - a))
    return float(np.mean(vals))


def ae(p_correct: float) -> float:
    if not 0.0 <= p_correct <= 1.0:
        raise ValueError("p_correct must lie in [0, 1]")
    return abs(p_correct - 1.0)


# -- experiments ---------------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentSpec:
    model: int
    replications: int = 200
    seed: int = 0
    T: int | None = None
    h: int | None = None
    h_tilde: int | None = None
    radii_mode: str = "formula"
    bootstrap_b: int = 1000
    levels: tuple = DEFAULT_LEVELS
    pmax: int = 4
    qmax: int = 2
    threads: int = 1
    intervals: bool = True

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        get_model(self.model)

    @property
    def length(self) -> int:
        return self.T or get_model(self.model).T

    def detector(self, rep: int) -> DetectorConfig:
        return DetectorConfig(self.h, self.h_tilde, self.radii_mode, self.pmax, self.qmax,
                              tuple(self.levels), self.bootstrap_b, (self.seed, rep),
                              OptimizerConfig(multistart=1), self.intervals)


@dataclass
class Replication:
    rep: int
    m_hat: int
    taus: tuple
    types: tuple
    intervals: tuple  # per change-point: ((level, lower, upper), ...)
    h: int = 0
    h_tilde: int = 0
    error: str = ""

    def to_dict(self):
        return {"rep": self.rep, "m_hat": self.m_hat, "taus": list(self.taus), "types": list(self.types),
                "intervals": [[list(c) for c in cp] for cp in self.intervals],
                "h": self.h, "h_tilde": self.h_tilde, "error": self.error}


@dataclass
class LocationStats:
    true_tau: int
    n: int
    mean: float
    median: float
    sd: float
    coverage: dict
    ce: dict
    ace: float

    def to_dict(self):
        return {"true_tau": self.true_tau, "n": self.n, "mean": self.mean, "median": self.median,
                "sd": self.sd, "coverage": {f"{k:.2f}": v for k, v in self.coverage.items()},
                "ce": {f"{k:.2f}": v for k, v in self.ce.items()}, "ace": self.ace}


@dataclass
class ExperimentReport:
    spec: ExperimentSpec
    replications: list
    true_taus: tuple
    mean_m: float
    median_m: float
    sd_m: float
    p_correct: float
    ae: float
    locations: list
    failures: int
    wall_time: float = field(default=0.0, compare=False)

    @property
    def m_hats(self) -> list:
        return [r.m_hat for r in self.replications]

    def to_dict(self, timing: bool = False) -> dict:
        s = self.spec
        out = {
            "model": s.model, "T": s.length, "replications": s.replications, "seed": s.seed,
            "true_taus": list(self.true_taus),
            "radii": sorted({(r.h, r.h_tilde) for r in self.replications if r.h}),
            "bootstrap_b": s.bootstrap_b, "levels": list(s.levels), "pmax": s.pmax, "qmax": s.qmax,
            "m_hat": {"mean": self.mean_m, "median": self.median_m, "sd": self.sd_m,
                      "p_correct": self.p_correct, "ae": self.ae},
            "locations": [loc.to_dict() for loc in self.locations],
            "failures": self.failures,
            "per_replication": [r.to_dict() for r in self.replications],
        }
        out["radii"] = [list(v) for v in out["radii"]]
        if timing:
            out["wall_time"] = self.wall_time
        return out


def replication_seed(seed: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(rep,))


def run_replication(spec: ExperimentSpec, rep: int) -> Replication:
    model = get_model(spec.model)
    x = model.simulate(replication_seed(spec.seed, rep), spec.length)
    try:
        res = detect(x, spec.detector(rep))
    except (FitError, RefineError, SpecError, ScanConfigError, FloatingPointError,
            np.linalg.LinAlgError, ValueError) as exc:
        return Replication(rep, -1, (), (), (), error=f"{type(exc).__name__}: {exc}")
    ivs = tuple(tuple((ci.level, ci.lower, ci.upper) for ci in c.intervals) for c in res.change_points)
    return Replication(rep, res.m, res.taus, res.types, ivs, res.scan.h, res.scan.h_tilde)


def _run_chunk(args):
    spec, reps = args
    return [run_replication(spec, r) for r in reps]


def match_locations(est, true, cap: float) -> list:
    """Pair sorted estimates with sorted truths; pairs farther than ``cap`` are dropped (None)."""
    est = sorted(est)
    out = []
    for e, t in zip(est, sorted(true)):
        out.append(e if abs(e - t) <= cap else None)
    return out


def _match_cap(true_taus, T) -> float:
    edges = [0, *true_taus, T]
    eps_r = min(b - a for a, b in zip(edges[:-1], edges[1:])) / T
    return T * eps_r / 2


def summarise(spec: ExperimentSpec, reps: list, wall_time: float = 0.0) -> ExperimentReport:
    reps = sorted(reps, key=lambda r: r.rep)
    model = get_model(spec.model)
    T = spec.length
    true = model.taus(T)
    m0 = len(true)
    ok = [r for r in reps if not r.error]
    m = np.array([r.m_hat for r in ok], dtype=float)
    mean_m = float(np.mean(m)) if m.size else float("nan")
    median_m = float(np.median(m)) if m.size else float("nan")
    sd_m = float(np.std(m, ddof=1)) if m.size > 1 else 0.0
    p_correct = float(np.mean(m == m0)) if m.size else 0.0
    cap = _match_cap(true, T)
    correct = [r for r in ok if r.m_hat == m0]
    locs = []
    for j, tau0 in enumerate(true):
        vals = []
        cover = {a: 0 for a in spec.levels}
        for r in correct:
            order = np.argsort(r.taus)
            matched = match_locations(r.taus, true, cap)[j]
            if matched is not None:
                vals.append(matched)
            ivs = r.intervals[order[j]] if r.intervals else ()
            for level, lo, up in ivs:
                key = next((a for a in spec.levels if abs(a - level) < 1e-12), None)
                if key is not None and matched is not None and lo <= tau0 <= up:
                    cover[key] += 1
        n = len(correct)
        v = np.array(vals, dtype=float)
        coverage = {a: (cover[a] / n if n else float("nan")) for a in spec.levels}
        ce = {a: abs(coverage[a] - a) for a in spec.levels}
        locs.append(LocationStats(
            tau0, int(v.size),
            float(np.mean(v)) if v.size else float("nan"),
            float(np.median(v)) if v.size else float("nan"),
            float(np.std(v, ddof=1)) if v.size > 1 else 0.0,
            coverage, ce, float(np.mean(list(ce.values()))) if n else float("nan")))
    return ExperimentReport(spec, reps, true, mean_m, median_m, sd_m, p_correct, ae(p_correct),
                            locs, len(reps) - len(ok), wall_time)


def run_experiment(spec: ExperimentSpec, threads: int | None = None) -> ExperimentReport:
    """Run all replications (in worker processes when ``threads > 1``)."""
    t0 = time.perf_counter()
    threads = threads or spec.threads or 1
    idx = list(range(spec.replications))
    if threads <= 1 or spec.replications == 1:
        reps = [run_replication(spec, r) for r in idx]
    else:
        chunks = [idx[i::threads] for i in range(threads)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            reps = [r for part in pool.map(_run_chunk, [(spec, c) for c in chunks if c]) for r in part]
    return summarise(spec, reps, time.perf_counter() - t0)


# -- text output ----------------------------------------------------------------------------------

def _f(v, nd=3):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "-"
    return f"{v:.{nd}f}"


def format_report(report: ExperimentReport) -> str:
    """Aligned text tables: change-point counts, then locations and coverage."""
    s = report.spec
    lines = [f"Model {s.model}  T={s.length}  replications={s.replications}  seed={s.seed}",
             "",
             f"{'Model':>5} {'True':>4} {'Mean':>7} {'Median':>7} {'SD':>7} {'AE':>7}",
             f"{s.model:>5} {len(report.true_taus):>4} {_f(report.mean_m):>7} {_f(report.median_m):>7} "
             f"{_f(report.sd_m):>7} {_f(report.ae):>7}"]
    if report.locations:
        head = f"{'CP':>6} {'n':>4} {'Mean':>8} {'Median':>8} {'SD':>7}"
        head += "".join(f" {'CE' + str(int(round(a * 100))):>6}" for a in s.levels) + f" {'ACE':>6}"
        lines += ["", head]
        for loc in report.locations:
            row = (f"{loc.true_tau:>6} {loc.n:>4} {_f(loc.mean, 1):>8} {_f(loc.median, 1):>8} "
                   f"{_f(loc.sd, 1):>7}")
            row += "".join(f" {_f(loc.ce[a]):>6}" for a in s.levels) + f" {_f(loc.ace):>6}"
            lines.append(row)
    if report.failures:
        lines += ["", f"failed replications: {report.failures}"]
    return "\n".join(lines) + "\n"
