"""The three-step detector: scan, MDL selection, refinement with intervals."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .likelihood import FitError, chain_point_logliks, fit_kink_chain, fit_segment
from .mdl import FitCache, Selection, select
from .optim import OptimizerConfig
from .refine import (RefineError, bootstrap_jump_ci, extended_windows, kink_ci, kink_sandwich,
                     refine_jump, refine_kink)
from .scan import CandidateSet, ScanConfig, candidates_from_maps, maximal_diffs, scan_config_for
from .tvar import JUMP, SpecError

DEFAULT_LEVELS = (0.80, 0.90, 0.95)


@dataclass(frozen=True)
class DetectorConfig:
    h: int | None = None
    h_tilde: int | None = None
    radii_mode: str = "formula"
    pmax: int = 4
    qmax: int = 2
    levels: tuple = DEFAULT_LEVELS
    bootstrap_b: int = 1000
    seed: int | tuple = 0
    optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(multistart=1))
    intervals: bool = True

    def __post_init__(self):
        if self.pmax < 1 or self.qmax < 0:
            raise ValueError("pmax must be >= 1 and qmax >= 0")
        if any(not 0 < a < 1 for a in self.levels):
            raise ValueError("confidence levels must lie in (0, 1)")
        if self.bootstrap_b < 100:
            raise ValueError("bootstrap B must be at least 100")
        object.__setattr__(self, "levels", tuple(float(a) for a in self.levels))


@dataclass
class ChangePointRecord:
    tau: int
    kind: str
    initial: int  # location selected in step 2
    intervals: list = field(default_factory=list)
    method: str = ""


@dataclass
class SegmentRecord:
    start: int  # first time point (1-based)
    end: int
    p: int
    q: int
    phi: np.ndarray  # (p, q + 1) power-basis coefficients in u = t/T
    sigma: np.ndarray
    loglik: float
    model: str  # "segment" or "chain"


@dataclass
class DetectionResult:
    T: int
    change_points: list
    segments: list
    mdl: float
    scan: ScanConfig
    candidates: CandidateSet
    selection: Selection
    seed: object
    warnings: list = field(default_factory=list)
    elapsed: float = 0.0
    version: str = __version__

    @property
    def m(self) -> int:
        return len(self.change_points)

    @property
    def taus(self) -> tuple:
        return tuple(c.tau for c in self.change_points)

    @property
    def types(self) -> tuple:
        return tuple(c.kind for c in self.change_points)

    def interval(self, k: int, level: float):
        for ci in self.change_points[k].intervals:
            if abs(ci.level - level) < 1e-12:
                return ci
        return None

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "T": self.T,
            "m": self.m,
            "seed": _jsonable(self.seed),
            "scan": {"h": self.scan.h, "h_tilde": self.scan.h_tilde, "mode": self.scan.mode},
            "candidates": {"jumps": list(self.candidates.jumps), "kinks": list(self.candidates.kinks)},
            "mdl": {"total": self.selection.score.total,
                    "structure_cost": self.selection.score.structure_cost,
                    "likelihood_term": self.selection.score.likelihood_term,
                    "exact": self.selection.exact},
            "change_points": [
                {"tau": c.tau, "type": c.kind, "initial": c.initial, "method": c.method,
                 "intervals": [{"level": ci.level, "lower": ci.lower, "upper": ci.upper}
                               for ci in c.intervals]}
                for c in self.change_points],
            "segments": [
                {"start": s.start, "end": s.end, "p": s.p, "q": s.q, "model": s.model,
                 "phi": [[float(v) for v in row] for row in s.phi],
                 "sigma": [float(v) for v in s.sigma],
                 "loglik": float(s.loglik) if np.isfinite(s.loglik) else None}
                for s in self.segments],
            "warnings": list(self.warnings),
        }


def _jsonable(seed):
    if isinstance(seed, (tuple, list)):
        return [int(s) for s in seed]
    return int(seed)


def _bootstrap_seed(seed):
    return list(seed) if isinstance(seed, (tuple, list)) else seed


def detect(x, config: DetectorConfig | None = None) -> DetectionResult:
    """Run the full three-step procedure on ``x``."""
    config = config or DetectorConfig()
    t0 = time.perf_counter()
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or not np.all(np.isfinite(x)):
        raise ValueError("input must be a finite one-dimensional series")
    T = len(x)
    scan = scan_config_for(T, config.h, config.h_tilde, config.radii_mode)
    D, D1 = maximal_diffs(x, scan)
    cands = candidates_from_maps(D, D1, scan)
    cache = FitCache(x, config.optimizer)
    sel = select(cands, x, config.pmax, config.qmax, config.optimizer, cache=cache)
    cfg = sel.configuration
    warnings = [] if sel.exact else ["candidate count above the exhaustive cap; greedy search used"]

    records = []
    refined = []
    kink_fits = {}
    jump_fits = {}
    if cfg.m:
        margin = (config.pmax + 1) * (config.qmax + 1) + config.pmax + 1
        windows = extended_windows(cfg.taus, cfg.types, T, scan.h, scan.h_tilde, margin)
        for k, w in enumerate(windows):
            try:
                if not w.feasible:
                    raise RefineError("extended window too small to refine")
                if w.kind == JUMP:
                    res = refine_jump(x, w, (cfg.p[k], cfg.q[k]), (cfg.p[k + 1], cfg.q[k + 1]),
                                      config.optimizer, T)
                    jump_fits[k] = res
                else:
                    orders = (cfg.p[k], cfg.p[k + 1], cfg.q[k], cfg.q[k + 1])
                    res = refine_kink(x, w, orders, config.optimizer, T)
                    kink_fits[k] = res
                refined.append(res.tau)
            except RefineError as exc:
                warnings.append(f"change-point {w.tau} kept at its selected location: {exc}")
                refined.append(w.tau)
        for k, w in enumerate(windows):
            rec = ChangePointRecord(refined[k], w.kind, w.tau)
            if config.intervals and (k in jump_fits or k in kink_fits):
                try:
                    if w.kind == JUMP:
                        jr = jump_fits[k]
                        rec.intervals = bootstrap_jump_ci(
                            w, jr.tau, jr.left.params, jr.right.params, config.bootstrap_b,
                            config.levels, _bootstrap_seed(config.seed), T)
                        rec.method = "bootstrap"
                    else:
                        kr = kink_fits[k]
                        cov = kink_sandwich(kr.eta, x, w)
                        prev = refined[k - 1] if k > 0 else 0
                        nxt = refined[k + 1] if k + 1 < len(refined) else T
                        var_r = max(cov.var_r, 0.0)
                        rec.intervals = [kink_ci(kr.tau, var_r, a, (prev, nxt), T) for a in config.levels]
                        rec.method = "asymptotic-normal"
                except (RefineError, SpecError, FloatingPointError, np.linalg.LinAlgError) as exc:
                    warnings.append(f"no interval for change-point {refined[k]}: {exc}")
            records.append(rec)

    segments = _final_segments(x, cfg, tuple(refined), config.optimizer, warnings)
    return DetectionResult(T, records, segments, sel.score.total, scan, cands, sel, config.seed,
                           warnings, time.perf_counter() - t0)


def _final_segments(x, cfg, taus, optimizer, warnings) -> list[SegmentRecord]:
    T = len(x)
    edges = [0, *taus, T]
    out = []
    for first, last in cfg.blocks():
        a, b = edges[first], edges[last + 1]
        try:
            if first == last:
                fit = fit_segment(x, a, b, cfg.p[first], cfg.q[first], optimizer)
                seg = fit.params
                out.append(SegmentRecord(a + 1, b, seg.p, seg.q, np.array(seg.phi), np.array(seg.sigma),
                                         fit.loglik, "segment"))
            else:
                p = cfg.p[first]
                qs = cfg.q[first: last + 1]
                fit = fit_kink_chain(x, a, taus[first: last], b, p, qs, optimizer)
                chain = fit.params
                for k, seg in enumerate(chain.segment_params()):
                    lo, hi = edges[first + k], edges[first + k + 1]
                    ts = np.arange(max(lo + 1, p + 1), hi + 1)
                    ll = float(np.sum(chain_point_logliks(chain, x, ts)))
                    out.append(SegmentRecord(lo + 1, hi, seg.p, seg.q, np.array(seg.phi),
                                             np.array(seg.sigma), ll, "chain"))
        except (FitError, SpecError, FloatingPointError, np.linalg.LinAlgError) as exc:
            warnings.append(f"final fit failed on ({a}, {b}]: {exc}")
            for k in range(first, last + 1):
                p, q = cfg.p[k], cfg.q[k]
                out.append(SegmentRecord(edges[k] + 1, edges[k + 1], p, q, np.full((p, q + 1), np.nan),
                                         np.full(q + 1, np.nan), float("nan"), "failed"))
    return out
