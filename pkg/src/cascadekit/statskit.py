"""Agreement, discrimination, calibration, correlation and resampling primitives.

Every function accepts plain sequences or numpy arrays. Statistics that are
undefined on their input raise :class:`UndefinedStatistic` rather than
returning a sentinel; the resampling helpers discard and count such
resamples.

Resampling stream: ``bootstrap_ci`` and ``paired_bootstrap_diff`` draw from
``numpy.random.Generator(PCG64(seed))``. Resample ``i`` (0-based) is the
index vector returned by the ``i``-th call ``rng.integers(0, n, size=n)``,
and the statistic sees ``data[idx]``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np
from scipy import stats as _sps

DEFAULT_RESAMPLES = 10_000
DEFAULT_BINS = 10


class UndefinedStatistic(ValueError):
    """The statistic has no value on this input (degenerate marginals, zero variance...)."""


class UnstableStatistic(RuntimeError):
    """More than half of the bootstrap resamples had an undefined statistic."""


@dataclass(frozen=True)
class CiEstimate:
    point: float
    lo: float
    hi: float
    resamples: int
    seed: int
    level: float = 0.95
    discarded: int = 0

    def contains(self, value: float) -> bool:
        return self.lo <= value <= self.hi


@dataclass(frozen=True)
class Bin:
    lower: float
    upper: float
    count: int
    mean_confidence: float | None
    accuracy: float | None


@dataclass(frozen=True)
class BinTable:
    bins: tuple[Bin, ...]

    @property
    def total(self) -> int:
        return sum(b.count for b in self.bins)

    def ece(self) -> float:
        n = self.total
        if n == 0:
            raise UndefinedStatistic("ECE undefined on empty input")
        return sum(b.count / n * abs(b.accuracy - b.mean_confidence) for b in self.bins if b.count)


def _binary_array(x, name: str) -> np.ndarray:
    a = np.asarray(x)
    if a.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if a.dtype != bool and not np.isin(a, (0, 1)).all():
        raise ValueError(f"{name} must be binary")
    return a.astype(np.int64)


def _paired(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be one-dimensional and of equal length")
    return x, y


# -- agreement ---------------------------------------------------------------


def cohen_kappa(pred, gold) -> float:
    """Cohen's kappa between two binary label sequences."""
    p = _binary_array(pred, "pred")
    g = _binary_array(gold, "gold")
    n = p.size
    if n == 0 or g.size != n:
        raise ValueError("pred and gold must be nonempty and of equal length")
    n_p1 = int(p.sum())
    n_g1 = int(g.sum())
    n_agree = n - int(np.count_nonzero(p != g))
    # both constant on the same label: expected agreement is exactly 1
    if (n_p1 in (0, n)) and n_p1 == n_g1:
        raise UndefinedStatistic("undefined kappa: both sequences constant on the same label")
    p_o = n_agree / n
    p_e = (n_p1 * n_g1 + (n - n_p1) * (n - n_g1)) / (n * n)
    return (p_o - p_e) / (1.0 - p_e)


def fleiss_kappa(ratings) -> float:
    """Fleiss' kappa from an items x categories count matrix.

    Every row must sum to the same number of raters (at least 2).
    """
    r = np.asarray(ratings)
    if r.ndim != 2 or r.shape[0] == 0:
        raise ValueError("ratings must be a nonempty 2-D count matrix")
    if (r < 0).any() or not np.all(r == np.round(r)):
        raise ValueError("ratings must be nonnegative integer counts")
    r = r.astype(np.int64)
    m = r.sum(axis=1)
    if (m != m[0]).any():
        raise ValueError("every item must have the same number of raters")
    m = int(m[0])
    if m < 2:
        raise ValueError("at least 2 raters per item required")
    n_items = r.shape[0]
    per_item = ((r * r).sum(axis=1) - m) / (m * (m - 1))
    p_bar = per_item.mean()
    p_j = r.sum(axis=0) / (n_items * m)
    p_e = float((p_j * p_j).sum())
    if np.count_nonzero(p_j) <= 1:
        raise UndefinedStatistic("undefined kappa: every rating falls in one category")
    return float((p_bar - p_e) / (1.0 - p_e))


# -- discrimination and calibration -----------------------------------------


def average_ranks(x) -> np.ndarray:
    """1-based ranks with ties assigned their average rank."""
    return _sps.rankdata(np.asarray(x, dtype=float), method="average")


def auroc(confidence, correct) -> float:
    """Probability that a correct item outranks an incorrect one; ties count 1/2."""
    c = np.asarray(confidence, dtype=float)
    y = _binary_array(correct, "correct")
    if c.shape != y.shape:
        raise ValueError("confidence and correct must have equal length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedStatistic("AUROC undefined: correct has a single class")
    ranks = average_ranks(c)
    # rank sums are exact multiples of 1/2, so the U statistic is exact
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def _bin_index(confidence: np.ndarray, n_bins: int) -> np.ndarray:
    # right-closed bins (k/n, (k+1)/n]; 0.0 falls into the first bin.
    # Rounding absorbs representation error so that e.g. 0.3 lands in (0.2, 0.3].
    scaled = np.round(confidence * n_bins, 9)
    return np.clip(np.ceil(scaled).astype(np.int64) - 1, 0, n_bins - 1)


def reliability_bins(confidence, correct, n_bins: int = DEFAULT_BINS) -> BinTable:
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    c = np.asarray(confidence, dtype=float)
    y = _binary_array(correct, "correct") if len(c) else np.zeros(0, dtype=np.int64)
    if c.shape != y.shape:
        raise ValueError("confidence and correct must have equal length")
    if ((c < 0) | (c > 1)).any():
        raise ValueError("confidence must lie in [0, 1]")
    idx = _bin_index(c, n_bins)
    bins = []
    for b in range(n_bins):
        mask = idx == b
        k = int(mask.sum())
        bins.append(
            Bin(
                lower=b / n_bins,
                upper=(b + 1) / n_bins,
                count=k,
                mean_confidence=float(c[mask].mean()) if k else None,
                accuracy=float(y[mask].mean()) if k else None,
            )
        )
    return BinTable(tuple(bins))


def ece(confidence, correct, n_bins: int = DEFAULT_BINS) -> float:
    """Expected calibration error over equal-width bins of [0, 1]."""
    if len(confidence) == 0:
        raise UndefinedStatistic("ECE undefined on empty input")
    return reliability_bins(confidence, correct, n_bins).ece()


def nce(confidence, correct) -> float:
    """Signed calibration error: mean accuracy minus mean confidence.

    Positive values mean the model is underconfident.
    """
    c = np.asarray(confidence, dtype=float)
    y = _binary_array(correct, "correct")
    if c.size == 0 or c.shape != y.shape:
        raise ValueError("inputs must be nonempty and of equal length")
    return float(y.mean() - c.mean())


# -- correlation and effect size ----------------------------------------------


def _t_two_sided(t: float, df: float) -> float:
    return float(2.0 * _sps.t.sf(abs(t), df))


def pearson_r(x, y) -> float:
    x, y = _paired(x, y)
    if x.size < 3:
        raise ValueError("at least 3 observations required")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise UndefinedStatistic("undefined correlation: zero variance")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def spearman_rho(x, y) -> float:
    x, y = _paired(x, y)
    return pearson_r(average_ranks(x), average_ranks(y))


def correlation_p(r: float, n: int) -> float:
    """Two-sided p-value for a correlation coefficient via the t approximation."""
    if n < 3:
        raise ValueError("at least 3 observations required")
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return _t_two_sided(t, n - 2)


def cohens_d(group_a, group_b) -> float:
    """Standardized mean difference (a - b) with the Bessel-corrected pooled SD."""
    a = np.asarray(group_a, dtype=float)
    b = np.asarray(group_b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("each group needs at least 2 observations")
    pooled = ((a.size - 1) * a.var(ddof=1) + (b.size - 1) * b.var(ddof=1)) / (a.size + b.size - 2)
    if pooled == 0:
        raise UndefinedStatistic("undefined effect size: zero pooled variance")
    return float((a.mean() - b.mean()) / math.sqrt(pooled))


def welch_t_p(group_a, group_b) -> float:
    """Two-sided Welch t-test p-value."""
    a = np.asarray(group_a, dtype=float)
    b = np.asarray(group_b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("each group needs at least 2 observations")
    va = a.var(ddof=1) / a.size
    vb = b.var(ddof=1) / b.size
    diff = a.mean() - b.mean()
    if va + vb == 0:
        if diff == 0:
            return 1.0
        raise UndefinedStatistic("Welch t undefined: zero variance in both groups")
    t = diff / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1))
    return _t_two_sided(t, df)


def mann_whitney_p(group_a, group_b) -> float:
    """Two-sided Mann-Whitney U p-value (alternative to Welch)."""
    a = np.asarray(group_a, dtype=float)
    b = np.asarray(group_b, dtype=float)
    if a.size < 1 or b.size < 1:
        raise ValueError("both groups must be nonempty")
    if np.ptp(np.concatenate([a, b])) == 0:
        return 1.0
    return float(_sps.mannwhitneyu(a, b, alternative="two-sided").pvalue)


def group_difference_p(group_a, group_b, test: str = "welch") -> float:
    if test == "welch":
        return welch_t_p(group_a, group_b)
    if test == "mann-whitney":
        return mann_whitney_p(group_a, group_b)
    raise ValueError(f"unknown test {test!r}")


# -- quantiles ----------------------------------------------------------------


def nearest_rank(values, q: float) -> float:
    """Nearest-rank percentile: the ceil(q*n)-th smallest value, q in (0, 1]."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("percentile of empty sequence")
    if not 0 < q <= 1:
        raise ValueError("q must lie in (0, 1]")
    # tolerance keeps e.g. 0.95 * 20 at rank 19 despite 0.95 being inexact
    rank = max(1, math.ceil(q * v.size - 1e-9))
    return float(v[rank - 1])


# -- resampling ---------------------------------------------------------------


def substream_seed(seed: int, name: str) -> int:
    """Deterministic 64-bit seed for a named substream of a top-level seed."""
    digest = hashlib.sha256(f"{seed}/{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _percentile_interval(values: np.ndarray, level: float) -> tuple[float, float]:
    alpha = (1.0 - level) / 2
    lo, hi = np.percentile(values, [100 * alpha, 100 * (1 - alpha)])
    return float(lo), float(hi)


def _resample_loop(data, fn: Callable[[Any], float], resamples: int, seed: int):
    if resamples < 1:
        raise ValueError("resamples must be >= 1")
    arr = data if isinstance(data, np.ndarray) else np.asarray(data)
    n = len(arr)
    if n == 0:
        raise ValueError("cannot resample empty data")
    rng = np.random.Generator(np.random.PCG64(seed))
    out = np.empty(resamples)
    ok = np.ones(resamples, dtype=bool)
    for i in range(resamples):
        idx = rng.integers(0, n, size=n)
        try:
            out[i] = fn(arr[idx])
        except UndefinedStatistic:
            ok[i] = False
    discarded = int((~ok).sum())
    if discarded * 2 > resamples:
        raise UnstableStatistic(f"unstable statistic: {discarded} of {resamples} resamples undefined")
    return arr, out[ok], discarded


def bootstrap_ci(
    data,
    statistic: Callable[[Any], float],
    resamples: int = DEFAULT_RESAMPLES,
    seed: int = 0,
    level: float = 0.95,
) -> CiEstimate:
    """Percentile bootstrap interval for ``statistic`` evaluated on resamples of ``data``."""
    arr, values, discarded = _resample_loop(data, statistic, resamples, seed)
    point = float(statistic(arr))
    lo, hi = _percentile_interval(values, level)
    return CiEstimate(point, lo, hi, resamples, seed, level, discarded)


def paired_bootstrap_diff(
    data,
    statistic_pair: Callable[[Any], tuple[float, float]],
    resamples: int = DEFAULT_RESAMPLES,
    seed: int = 0,
    level: float = 0.95,
) -> CiEstimate:
    """Percentile interval of ``A - B`` where both statistics see the same resample."""

    def diff(sample):
        a, b = statistic_pair(sample)
        return a - b

    arr, values, discarded = _resample_loop(data, diff, resamples, seed)
    point = float(diff(arr))
    lo, hi = _percentile_interval(values, level)
    return CiEstimate(point, lo, hi, resamples, seed, level, discarded)

