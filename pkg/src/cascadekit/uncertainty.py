"""Human-difficulty proxies and how small-model confidence tracks them.

Two proxies per decision: the agreement category of the three votes, and a
response-time difficulty score. The time score is computed per annotator
position: cap at that annotator's own p95 (nearest rank), z-score with the
sample SD, then take the median of the three z-scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import statskit
from .dataset import Agreement, DecisionSet


@dataclass(frozen=True)
class DifficultyScores:
    decision_ids: tuple[str, ...]
    agreement: tuple[Agreement, ...]
    difficulty: np.ndarray
    z_scores: np.ndarray = field(repr=False)
    caps: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __len__(self) -> int:
        return len(self.decision_ids)

    @property
    def split_indicator(self) -> np.ndarray:
        return np.array([a is Agreement.SPLIT for a in self.agreement], dtype=np.int64)


@dataclass(frozen=True)
class ConfidenceGap:
    mean_unanimous: float
    mean_split: float
    d: float
    p: float
    n_unanimous: int
    n_split: int
    test: str = "welch"

    @property
    def gap(self) -> float:
        return self.mean_unanimous - self.mean_split


@dataclass(frozen=True)
class TimeCorrelation:
    rho: float
    p: float
    n: int


@dataclass(frozen=True)
class ProxyReport:
    pearson_r: float
    pearson_p: float
    cohens_d: float | None
    cohens_d_p: float | None
    split_fraction: float
    n_split: int
    n: int
    undefined: dict[str, str] = field(default_factory=dict)
    confidence_gaps: dict[str, ConfidenceGap] = field(default_factory=dict)
    time_correlations: dict[str, TimeCorrelation] = field(default_factory=dict)


class DegenerateTimes(ValueError):
    pass


def cap_and_standardize(times: np.ndarray, cap_percentile: float = 0.95) -> tuple[np.ndarray, float]:
    """Cap one annotator's times at its nearest-rank percentile, then z-score."""
    cap = statskit.nearest_rank(times, cap_percentile)
    capped = np.minimum(times, cap)
    sd = capped.std(ddof=1)
    if not sd > 0:
        raise DegenerateTimes("degenerate annotator times: zero variance after capping")
    return (capped - capped.mean()) / sd, cap


def response_time_difficulty(dset: DecisionSet, cap_percentile: float = 0.95) -> DifficultyScores:
    if len(dset) < 2:
        raise ValueError("at least 2 decisions required")
    times = np.array([d.annotator_times_s for d in dset], dtype=float)
    z = np.empty_like(times)
    caps = []
    for a in range(times.shape[1]):
        try:
            z[:, a], cap = cap_and_standardize(times[:, a], cap_percentile)
        except DegenerateTimes as exc:
            raise DegenerateTimes(f"{exc} (annotator {dset.annotator_ids[a]!r})") from None
        caps.append(cap)
    return DifficultyScores(
        decision_ids=tuple(d.decision_id for d in dset),
        agreement=tuple(d.agreement for d in dset),
        difficulty=np.median(z, axis=1),
        z_scores=z,
        caps=tuple(caps),
    )


def proxy_correlation(dset: DecisionSet, scores: DifficultyScores) -> ProxyReport:
    """Association between the agreement category and response-time difficulty."""
    split = scores.split_indicator
    n_split = int(split.sum())
    if n_split == 0 or n_split == len(split):
        raise statskit.UndefinedStatistic("undefined proxy correlation: only one agreement category present")
    diff = scores.difficulty
    r = statskit.pearson_r(split, diff)
    undefined = {}
    try:
        d = statskit.cohens_d(diff[split == 1], diff[split == 0])
        d_p = statskit.welch_t_p(diff[split == 1], diff[split == 0])
    except (statskit.UndefinedStatistic, ValueError) as exc:
        # e.g. no spread inside either group; r can still be defined
        d = d_p = None
        undefined["cohens_d"] = str(exc)
    return ProxyReport(
        pearson_r=r,
        pearson_p=statskit.correlation_p(r, len(split)),
        cohens_d=d,
        cohens_d_p=d_p,
        split_fraction=n_split / len(split),
        n_split=n_split,
        n=len(split),
        undefined=undefined,
    )


def _small_confidence(dset: DecisionSet) -> np.ndarray:
    conf = [d.small.confidence for d in dset]
    if any(c is None for c in conf):
        raise ValueError("small-model confidence missing")
    return np.asarray(conf, dtype=float)


def confidence_by_agreement(dset: DecisionSet, test: str = "welch") -> ConfidenceGap:
    """Small-model confidence on unanimous vs split decisions; d > 0 means lower on splits."""
    conf = _small_confidence(dset)
    split = np.array([d.agreement is Agreement.SPLIT for d in dset])
    una, spl = conf[~split], conf[split]
    if una.size == 0 or spl.size == 0:
        raise statskit.UndefinedStatistic("both agreement categories are required")
    return ConfidenceGap(
        mean_unanimous=float(una.mean()),
        mean_split=float(spl.mean()),
        d=statskit.cohens_d(una, spl),
        p=statskit.group_difference_p(una, spl, test),
        n_unanimous=int(una.size),
        n_split=int(spl.size),
        test=test,
    )


def confidence_time_correlation(dset: DecisionSet, scores: DifficultyScores) -> TimeCorrelation:
    conf = _small_confidence(dset)
    if conf.size < 3:
        raise ValueError("at least 3 decisions required")
    if tuple(d.decision_id for d in dset) != scores.decision_ids:
        raise ValueError("difficulty scores do not match the decision set")
    rho = statskit.spearman_rho(conf, scores.difficulty)
    return TimeCorrelation(rho=rho, p=statskit.correlation_p(rho, conf.size), n=int(conf.size))
