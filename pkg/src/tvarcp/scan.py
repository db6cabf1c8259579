"""Step 1: local periodograms, scan statistics and candidate change-points.

The jump statistic compares local periodograms of two adjacent windows of
length ``h``; the kink statistic is a scaled numerical derivative of it.
Both are maximised over the frequency band ``w = 0..h/2`` and candidates
are the local maxima of the resulting maps.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

RULE_OF_THUMB = (1.76, 0.58, 0.55, 0.07)
# Published radii for the calibration examples, keyed by T.
RADII_TABLE_H = {1000: 100, 2000: 150}
RADII_TABLE_HTILDE = {2000: 150, 4000: 250}
MIN_RADIUS = 8


class ScanConfigError(ValueError):
    """Raised when window radii are unusable for the given series length."""


def _nearest_even(v: float) -> int:
    return int(2 * np.round(v / 2.0))


@dataclass(frozen=True)
class ScanConfig:
    """Window radii for the jump (``h``) and kink (``h_tilde``) scans."""

    h: int
    h_tilde: int
    constants: tuple | None = None
    mode: str = "explicit"

    def validate(self, T: int | None = None):
        for name, v in (("h", self.h), ("h_tilde", self.h_tilde)):
            if int(v) != v or v % 2:
                raise ScanConfigError(f"{name} must be an even integer, got {v}")
            if v < MIN_RADIUS:
                raise ScanConfigError(f"{name} must be at least {MIN_RADIUS}, got {v}")
        if T is not None:
            if not self.h < T / 4:
                raise ScanConfigError(f"h = {self.h} must be below T/4 = {T / 4}")
            if not self.h_tilde < T / 8:
                raise ScanConfigError(f"h_tilde = {self.h_tilde} must be below T/8 = {T / 8}")
        return self


def window_radii(T: int, constants: tuple = RULE_OF_THUMB, mode: str = "formula") -> tuple[int, int]:
    """Rule-of-thumb radii ``h = C T^delta`` and ``h~ = C~ T^(2/3 + delta~)``.

    Both are rounded to the nearest even integer.  With ``mode="table"`` the
    published calibration values replace the formula where available.
    """
    if T < 64:
        raise ScanConfigError("series too short for rule-of-thumb radii (T < 64)")
    if mode not in ("formula", "table"):
        raise ScanConfigError(f"unknown radii mode {mode!r}")
    C, d, Ct, dt = constants
    h = _nearest_even(C * T ** d)
    ht = _nearest_even(Ct * T ** (2.0 / 3.0 + dt))
    if mode == "table":
        h = RADII_TABLE_H.get(T, h)
        ht = RADII_TABLE_HTILDE.get(T, ht)
    ScanConfig(h, ht).validate(T)
    return h, ht


def scan_config_for(T: int, h: int | None = None, h_tilde: int | None = None,
                    mode: str = "formula", constants: tuple = RULE_OF_THUMB) -> ScanConfig:
    """Radii for a series of length ``T``; explicit values override the rule of thumb."""
    if h is None or h_tilde is None:
        h0, ht0 = window_radii(T, constants, mode)
        h = h0 if h is None else h
        h_tilde = ht0 if h_tilde is None else h_tilde
    cfg = ScanConfig(int(h), int(h_tilde), tuple(constants), mode)
    return cfg.validate(T)


# -- periodograms ---------------------------------------------------------------

def local_periodogram(x, t: int, h: int, lam):
    """``I_h(t, lam) = |sum_{k=t-h+1}^{t} X_k e^{-ik lam}|^2 / (2 pi h)``."""
    x = np.asarray(x, dtype=float)
    if not h <= t <= len(x):
        raise IndexError(f"need h <= t <= T, got t={t}, h={h}, T={len(x)}")
    k = np.arange(t - h + 1, t + 1)
    lam = np.asarray(lam, dtype=float)
    dft = np.exp(-1j * np.multiply.outer(lam, k)) @ x[t - h: t]
    return np.abs(dft) ** 2 / (2 * np.pi * h)


def fourier_periodograms(x, h: int) -> np.ndarray:
    """Local periodograms at the Fourier frequencies ``2 pi j / h``.

    Row ``t - h`` holds ``I_h(t, 2 pi j / h)`` for ``j = 0..h/2`` and
    ``t = h..T``.  The time-origin phase does not affect the modulus, so a
    plain length-``h`` transform of each window suffices.
    """
    x = np.asarray(x, dtype=float)
    windows = sliding_window_view(x, h)
    spec = np.fft.rfft(windows, axis=1)
    return (spec.real ** 2 + spec.imag ** 2) / (2 * np.pi * h)


def _band_sums(per: np.ndarray) -> np.ndarray:
    """``sum_{k=-w}^{w} I(k)`` for ``w = 0..h/2`` using ``I(-k) = I(k)``."""
    cum = np.cumsum(per, axis=1)
    return 2.0 * cum - per[:, :1]


def jump_scan_matrix(x, h: int) -> np.ndarray:
    """``D_h(t, w)`` for ``t = h..T-h`` (rows) and ``w = 0..h/2`` (columns)."""
    T = len(x)
    if T < 2 * h:
        raise IndexError("series shorter than two jump windows")
    band = _band_sums(fourier_periodograms(x, h))
    # band row j corresponds to t = h + j
    return (band[h: T - h + 1] - band[: T - 2 * h + 1]) / h


def jump_scan(x, t: int, w: int, h: int) -> float:
    """``D_h(t, w)``; requires ``h <= t <= T - h`` and ``0 <= w <= h/2``."""
    T = len(x)
    if not h <= t <= T - h:
        raise IndexError(f"jump scan needs h <= t <= T-h, got t={t}")
    if not 0 <= w <= h // 2:
        raise IndexError(f"w must lie in 0..h/2, got {w}")
    x = np.asarray(x, dtype=float)
    out = 0.0
    for tt, sign in ((t + h, 1.0), (t, -1.0)):
        per = np.fft.rfft(x[tt - h: tt])
        per = (per.real ** 2 + per.imag ** 2) / (2 * np.pi * h)
        out += sign * (2.0 * np.sum(per[: w + 1]) - per[0])
    return out / h


def kink_scan(x, t: int, w: int, h_tilde: int) -> float:
    """``D1(t, w) = (T/h~)[D_h~(t + h~, w) - D_h~(t - h~, w)]``."""
    T = len(x)
    if not 2 * h_tilde <= t <= T - 2 * h_tilde:
        raise IndexError(f"kink scan needs 2h~ <= t <= T-2h~, got t={t}")
    return T / h_tilde * (jump_scan(x, t + h_tilde, w, h_tilde) - jump_scan(x, t - h_tilde, w, h_tilde))


def kink_scan_matrix(x, h_tilde: int) -> np.ndarray:
    """``D1(t, w)`` for ``t = 2h~..T-2h~`` (rows) and ``w = 0..h~/2``."""
    T = len(x)
    D = jump_scan_matrix(x, h_tilde)  # row j <-> t = h~ + j
    ht = h_tilde
    n = T - 4 * ht + 1
    if n <= 0:
        raise IndexError("series shorter than four kink windows")
    # t + h~ -> row t, t - h~ -> row t - 2h~, with t = 2h~ + i
    return T / ht * (D[2 * ht: 2 * ht + n] - D[:n])


def maximal_diffs(x, config: ScanConfig) -> tuple[np.ndarray, np.ndarray]:
    """Maximal difference maps over ``t = 1..T`` (index ``t - 1``).

    Entries outside the statistic's valid range are zero.
    """
    x = np.asarray(x, dtype=float)
    T = len(x)
    h, ht = config.h, config.h_tilde
    D = np.zeros(T)
    D1 = np.zeros(T)
    if T >= 2 * h:
        D[h - 1: T - h] = np.max(np.abs(jump_scan_matrix(x, h)), axis=1)
    if T >= 4 * ht + 1:
        D1[2 * ht - 1: T - 2 * ht] = np.max(np.abs(kink_scan_matrix(x, ht)), axis=1)
    return D, D1


def local_maxima(stat: np.ndarray, radius: int, lo: int, hi: int,
                 excluded: np.ndarray | None = None) -> list[int]:
    """Indices ``j`` in ``[lo, hi]`` (1-based) maximal over ``[j - radius + 1, j + radius]``.

    The smallest index wins ties, a candidate needs a positive value, and
    a point exactly ``radius`` after an accepted one is dropped so that
    accepted points are more than ``radius`` apart.  Points flagged in
    ``excluded`` (1-based boolean mask) are never accepted.
    """
    T = len(stat)
    padded = np.concatenate([np.full(radius - 1, -np.inf), stat, np.full(radius, -np.inf)])
    win = sliding_window_view(padded, 2 * radius)  # row j-1 covers [j-radius+1, j+radius]
    first = np.argmax(win, axis=1)  # first occurrence resolves ties to the smallest index
    out = []
    for j in range(max(lo, 1), min(hi, T) + 1):
        if excluded is not None and excluded[j]:
            continue
        if stat[j - 1] > 0 and first[j - 1] == radius - 1:
            if out and j - out[-1] <= radius:
                continue
            out.append(j)
    return out


@dataclass(frozen=True)
class CandidateSet:
    """Potential jumps and kinks with their scan values."""

    jumps: tuple
    kinks: tuple
    jump_values: tuple
    kink_values: tuple
    config: ScanConfig
    T: int = 0

    def labelled(self) -> list[tuple[int, str]]:
        """All candidates in time order with their type labels."""
        items = [(j, "jump") for j in self.jumps] + [(k, "kink") for k in self.kinks]
        return sorted(items)

    def __len__(self):
        return len(self.jumps) + len(self.kinks)


def candidates_from_maps(D: np.ndarray, D1: np.ndarray, config: ScanConfig) -> CandidateSet:
    T = len(D)
    h, ht = config.h, config.h_tilde
    jumps = local_maxima(D, h, h, T - h)
    excluded = np.zeros(T + 2, dtype=bool)
    for j in jumps:
        excluded[max(j - h + 1, 0): min(j + h, T) + 1] = True
    kinks = local_maxima(D1, 2 * ht, 2 * ht, T - 2 * ht, excluded)
    return CandidateSet(tuple(jumps), tuple(kinks),
                        tuple(float(D[j - 1]) for j in jumps),
                        tuple(float(D1[k - 1]) for k in kinks), config, T)


def candidates(x, config: ScanConfig) -> CandidateSet:
    """Step-1 candidate sets ``J`` and ``K`` for series ``x``."""
    D, D1 = maximal_diffs(x, config)
    return candidates_from_maps(D, D1, config)


def dump_scan_tsv(path, D: np.ndarray, D1: np.ndarray):
    """Write ``t``, ``D_h(t)`` and ``D1(t)`` as tab-separated columns."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t\tD\tD1\n")
        for t, (a, b) in enumerate(zip(D, D1), start=1):
            fh.write(f"{t}\t{float(a)!r}\t{float(b)!r}\n")
