"""Step 2: MDL selection of change-points, AR orders and curve degrees.

The criterion for a configuration with ``m`` change-points is

    log m + sum_k log(p_k max(q_k, 1))
          + sum_k log(T_k) [(p_k + 1)(q_k + 1{k starts a block}) / 2 + 1]
          - sum of fitted log-likelihoods,

where blocks are maximal runs of segments between consecutive jump-type
boundaries (series endpoints count as jumps).  A block without interior
kinks is one ordinary segment; a block with kinks is one continuous kink
chain fitted jointly.  Since everything except ``log m`` decomposes over
blocks, the exact minimiser is found by dynamic programming over jump
boundaries with the change-point count carried in the state.
"""
from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field

import numpy as np

from .likelihood import FitError, FitResult, fit_kink_chain, fit_segment
from .optim import OptimizerConfig
from .scan import CandidateSet
from .tvar import JUMP, KINK

SUBSET_CAP = 18


@dataclass(frozen=True)
class ModelConfiguration:
    """Selected change-points with labels and per-segment orders/degrees."""

    points: tuple  # ((tau, type), ...) sorted by tau
    p: tuple
    q: tuple
    T: int

    @property
    def m(self) -> int:
        return len(self.points)

    @property
    def taus(self) -> tuple:
        return tuple(t for t, _ in self.points)

    @property
    def types(self) -> tuple:
        return tuple(k for _, k in self.points)

    def bounds(self) -> list[tuple[int, int]]:
        edges = [0, *self.taus, self.T]
        return list(zip(edges[:-1], edges[1:]))

    def blocks(self) -> list[tuple[int, int]]:
        """Maximal segment-index runs ``[first, last]`` between jump-type boundaries."""
        out = []
        start = 0
        for k, kind in enumerate(self.types):
            if kind == JUMP:
                out.append((start, k))
                start = k + 1
        out.append((start, self.m))
        return out

    @property
    def J_cs(self) -> tuple:
        """Segments (1-based) bounded by jump-type boundaries on both sides."""
        return tuple(a + 1 for a, b in self.blocks() if a == b)

    @property
    def K_cs(self) -> tuple:
        """Head segments (1-based) of kink chains."""
        return tuple(a + 1 for a, b in self.blocks() if b > a)


@dataclass(frozen=True)
class MdlScore:
    total: float
    structure_cost: float
    likelihood_term: float
    segments: tuple = ()  # per-segment structure costs


class FitCache:
    """Memoised fits keyed by range, chain layout and orders."""

    def __init__(self, x, config: OptimizerConfig):
        self.x = np.asarray(x, dtype=float)
        self.T = len(self.x)
        self.config = config
        self._store: dict = {}
        self._lock = threading.Lock()

    def _get(self, key, make):
        with self._lock:
            if key in self._store:
                return self._store[key]
        try:
            val = make()
        except (FitError, FloatingPointError, np.linalg.LinAlgError):
            val = None
        with self._lock:
            return self._store.setdefault(key, val)

    def segment(self, a: int, b: int, p: int, q: int) -> FitResult | None:
        return self._get(("seg", a, b, p, q),
                         lambda: fit_segment(self.x, a, b, p, q, self.config))

    def chain(self, a: int, taus: tuple, b: int, p: int, qs: tuple) -> FitResult | None:
        return self._get(("chain", a, tuple(taus), b, p, tuple(qs)),
                         lambda: fit_kink_chain(self.x, a, taus, b, p, qs, self.config))

    def __len__(self):
        return len(self._store)


def _segment_structure(n: int, p: int, q: int, head: bool) -> float:
    return float(np.log(p * max(q, 1)) + np.log(n) * ((p + 1) * (q + (1 if head else 0)) / 2.0 + 1.0))


def min_length(pmax: int, qmax: int) -> int:
    return pmax * (qmax + 1)


def mdl_score(cfg: ModelConfiguration, x, cache: FitCache, pmax: int = 4, qmax: int = 2) -> MdlScore:
    """Score a fully specified configuration (``inf`` if infeasible)."""
    bounds = cfg.bounds()
    if len(cfg.p) != cfg.m + 1 or len(cfg.q) != cfg.m + 1:
        raise ValueError("need one (p, q) per segment")
    if any(b - a <= min_length(pmax, qmax) for a, b in bounds):
        return MdlScore(np.inf, np.inf, -np.inf)
    struct = float(np.log(cfg.m)) if cfg.m > 0 else 0.0
    seg_costs = []
    like = 0.0
    for first, last in cfg.blocks():
        if first == last:
            a, b = bounds[first]
            fit = cache.segment(a, b, cfg.p[first], cfg.q[first])
        else:
            ps = set(cfg.p[first: last + 1])
            qs = cfg.q[first: last + 1]
            if len(ps) != 1 or min(qs) < 1:
                return MdlScore(np.inf, np.inf, -np.inf)
            a, b = bounds[first][0], bounds[last][1]
            fit = cache.chain(a, cfg.taus[first: last], b, ps.pop(), tuple(qs))
        if fit is None or not np.isfinite(fit.loglik):
            return MdlScore(np.inf, np.inf, -np.inf)
        like += fit.loglik
        for k in range(first, last + 1):
            a, b = bounds[k]
            c = _segment_structure(b - a, cfg.p[k], cfg.q[k], k == first)
            seg_costs.append(c)
            struct += c
    return MdlScore(struct - like, struct, like, tuple(seg_costs))


@dataclass
class Selection:
    """Result of :func:`select`."""

    configuration: ModelConfiguration
    score: MdlScore
    exact: bool
    n_fits: int = 0

    @property
    def m(self) -> int:
        return self.configuration.m


@dataclass
class _Block:
    cost: float
    p: tuple
    q: tuple


class _BlockCosts:
    """Minimal block costs over orders and degrees, memoised by layout.

    With ``prune=True`` the largest model of the grid is fitted first; its
    log-likelihood bounds that of every nested smaller model, so once the
    structure cost alone (minus that bound) exceeds the best cost found,
    the remaining trials, visited in increasing structure cost, cannot
    win.  Smaller AR orders score a few more initial points than the
    largest one; ``_slack`` allows for their contribution.
    """

    def __init__(self, cache: FitCache, pmax: int, qmax: int, prune: bool = True, qmin: int = 0):
        self.cache = cache
        self.pmax = pmax
        self.qmax = qmax
        self.qmin = qmin
        self.prune = prune
        self.minlen = min_length(pmax, qmax)
        self._memo: dict = {}

    def __call__(self, a: int, kinks: tuple, b: int) -> _Block:
        key = (a, kinks, b)
        if key not in self._memo:
            self._memo[key] = self._compute(a, kinks, b)
        return self._memo[key]

    def _trials(self, lens, g):
        out = []
        for p in range(1, self.pmax + 1):
            if g == 0:
                for q in range(self.qmin, self.qmax + 1):
                    out.append((_segment_structure(lens[0], p, q, True), p, (q,)))
            else:
                for qs in itertools.product(range(1, self.qmax + 1), repeat=g + 1):
                    c = sum(_segment_structure(n, p, q, k == 0)
                            for k, (n, q) in enumerate(zip(lens, qs)))
                    out.append((c, p, tuple(qs)))
        return out

    def _fit(self, a, kinks, b, p, qs):
        if kinks:
            return self.cache.chain(a, kinks, b, p, qs)
        return self.cache.segment(a, b, p, qs[0])

    def _slack(self, fit, a, kinks, p) -> float:
        extra = self.pmax - p if not kinks else max(a + 1, p + 1, self.pmax + 1) - max(a + 1, p + 1)
        if extra <= 0:
            return 0.0
        params = fit.params
        if kinks:
            sig = [float(np.min(s.sigma_at(np.linspace(0, 1, 5)))) for s in params.segment_params()]
            smin = min(sig)
        else:
            smin = float(np.min(np.abs(params.sigma)))
        smin = max(smin, 1e-3)
        return extra * max(0.0, -0.5 * np.log(2 * np.pi) - np.log(0.5 * smin))

    def _compute(self, a, kinks, b) -> _Block:
        edges = [a, *kinks, b]
        lens = [e1 - e0 for e0, e1 in zip(edges[:-1], edges[1:])]
        best = _Block(np.inf, (), ())
        if min(lens) <= self.minlen:
            return best
        g = len(kinks)
        trials = self._trials(lens, g)
        ceiling = None
        if self.prune:
            top = self._fit(a, kinks, b, self.pmax, (self.qmax,) * (g + 1))
            if top is not None and np.isfinite(top.loglik):
                slack = {p: self._slack(top, a, kinks, p) for p in range(1, self.pmax + 1)}
                ceiling = (top.loglik, slack, max(slack.values()))
            trials.sort(key=lambda v: v[0])
        for struct, p, qs in trials:
            if ceiling is not None:
                if struct - ceiling[0] - ceiling[2] >= best.cost:
                    break
                if struct - ceiling[0] - ceiling[1][p] >= best.cost:
                    continue
            fit = self._fit(a, kinks, b, p, qs)
            if fit is None or not np.isfinite(fit.loglik):
                continue
            cost = struct - fit.loglik
            if cost < best.cost:
                best = _Block(cost, (p,) * (g + 1), qs)
        return best


def _assemble(points, blocks_in_order, T) -> ModelConfiguration:
    ps, qs = [], []
    for blk in blocks_in_order:
        ps.extend(blk.p)
        qs.extend(blk.q)
    return ModelConfiguration(tuple(points), tuple(ps), tuple(qs), T)


def _config_cost(chosen: list, costs: _BlockCosts, T: int):
    """Total MDL of a labelled subset with block-optimal orders."""
    edges_j = [0] + [t for t, k in chosen if k == JUMP] + [T]
    total = float(np.log(len(chosen))) if chosen else 0.0
    blocks = []
    for a, b in zip(edges_j[:-1], edges_j[1:]):
        kinks = tuple(t for t, k in chosen if k == KINK and a < t < b)
        blk = costs(a, kinks, b)
        total += blk.cost
        blocks.append(blk)
    return total, blocks


def select(cands: CandidateSet, x, pmax: int = 4, qmax: int = 2,
           config: OptimizerConfig | None = None, subset_cap: int = SUBSET_CAP,
           cache: FitCache | None = None, qmin: int = 0) -> Selection:
    """Exact MDL minimiser over subsets of the candidates and per-segment orders.

    Chains of kinks share one AR order and use degrees ``q >= 1`` per segment;
    jump-bounded segments use ``p in 1..pmax`` and ``q in 0..qmax``.  Above
    ``subset_cap`` candidates a greedy forward/backward search is used and
    the result is flagged as inexact.
    """
    x = np.asarray(x, dtype=float)
    T = len(x)
    cache = cache or FitCache(x, config or OptimizerConfig(multistart=1))
    costs = _BlockCosts(cache, pmax, qmax, qmin=qmin)
    labelled = cands.labelled()
    if len(labelled) > subset_cap:
        return _greedy(labelled, costs, cache, T, pmax, qmax)

    N = len(labelled)
    # jump-type boundaries: position, label index (None for endpoints)
    jb = [(0, None)] + [(t, i) for i, (t, k) in enumerate(labelled) if k == JUMP] + [(T, None)]
    nb = len(jb)
    INF = np.inf
    f = np.full((nb, N + 1), INF)
    back: dict = {}
    f[0, 0] = 0.0
    for bi in range(1, nb):
        b, _ = jb[bi]
        add_b = 0 if bi == nb - 1 else 1
        for ai in range(bi):
            a, _ = jb[ai]
            inner = [t for t, k in labelled if k == KINK and a < t < b]
            for r in range(len(inner) + 1):
                for sub in itertools.combinations(inner, r):
                    blk = costs(a, sub, b)
                    if not np.isfinite(blk.cost):
                        continue
                    for m0 in range(N + 1):
                        if not np.isfinite(f[ai, m0]):
                            continue
                        m1 = m0 + len(sub) + add_b
                        if m1 > N:
                            continue
                        val = f[ai, m0] + blk.cost
                        if val < f[bi, m1]:
                            f[bi, m1] = val
                            back[(bi, m1)] = (ai, m0, sub, blk)
    totals = [f[nb - 1, m] + (np.log(m) if m > 0 else 0.0) for m in range(N + 1)]
    m_best = int(np.argmin(totals))
    if not np.isfinite(totals[m_best]):
        raise FitError("no feasible configuration (series too short for the order grid)")
    # backtrack
    points, blocks = [], []
    bi, m = nb - 1, m_best
    while bi > 0:
        ai, m0, sub, blk = back[(bi, m)]
        blocks.append(blk)
        if bi != nb - 1:
            points.append((jb[bi][0], JUMP))
        points.extend((t, KINK) for t in sub)
        bi, m = ai, m0
    points.sort()
    blocks.reverse()
    cfg = _assemble(points, blocks, T)
    score = mdl_score(cfg, x, cache, pmax, qmax)
    return Selection(cfg, score, True, len(cache))


def _greedy(labelled, costs: _BlockCosts, cache: FitCache, T, pmax, qmax) -> Selection:
    chosen: list = []
    cur, _ = _config_cost(chosen, costs, T)
    improved = True
    while improved:
        improved = False
        best = (cur, None)
        for item in labelled:
            if item in chosen:
                continue
            trial = sorted(chosen + [item])
            val, _ = _config_cost(trial, costs, T)
            if val < best[0]:
                best = (val, item)
        if best[1] is not None:
            chosen = sorted(chosen + [best[1]])
            cur = best[0]
            improved = True
    improved = True
    while improved and chosen:
        improved = False
        best = (cur, None)
        for item in chosen:
            trial = [c for c in chosen if c != item]
            val, _ = _config_cost(trial, costs, T)
            if val < best[0]:
                best = (val, item)
        if best[1] is not None:
            chosen = [c for c in chosen if c != best[1]]
            cur = best[0]
            improved = True
    _, blocks = _config_cost(chosen, costs, T)
    cfg = _assemble(chosen, blocks, T)
    return Selection(cfg, mdl_score(cfg, cache.x, cache, pmax, qmax), False, len(cache))


def ranked_configurations(cands: CandidateSet, x, pmax: int = 4, qmax: int = 2,
                          config: OptimizerConfig | None = None, top: int = 10,
                          cache: FitCache | None = None) -> list[tuple[float, list]]:
    """Top subsets by MDL (block-optimal orders) for diagnostic dumps."""
    x = np.asarray(x, dtype=float)
    cache = cache or FitCache(x, config or OptimizerConfig(multistart=1))
    costs = _BlockCosts(cache, pmax, qmax)
    labelled = cands.labelled()
    rows = []
    for r in range(len(labelled) + 1):
        for sub in itertools.combinations(labelled, r):
            val, _ = _config_cost(list(sub), costs, len(x))
            rows.append((val, list(sub)))
    rows.sort(key=lambda v: v[0])
    return rows[:top]


def dump_ranked_tsv(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("rank\tmdl\tchange_points\n")
        for i, (val, sub) in enumerate(rows, start=1):
            desc = ",".join(f"{t}:{k}" for t, k in sub)
            fh.write(f"{i}\t{float(val)!r}\t{desc}\n")
