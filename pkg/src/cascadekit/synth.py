"""Seeded synthetic decision sets that mimic the marginals of a labeled scoring study.

Generation model, per decision:

* latent truth ~ Bernoulli, three annotators each flip it with ``annotator_noise``;
  the majority of the three votes is the ground truth;
* a latent difficulty ~ N(0, 1), shifted up by ``split_shift`` on split decisions,
  drives model errors (logistic in difficulty) and annotator response times;
* the small model's confidence is a quantized latent score
  ``separation * correct + N(0, 1)``, where ``separation`` is set from the
  target AUROC of the continuous score.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from scipy import special, stats

from .dataset import DatasetError, DecisionSet, ModelOutput, ScoringDecision


@dataclass(frozen=True)
class ConfidenceProfile:
    """How the small model states confidence.

    ``discriminating``: ``n_distinct`` equally frequent levels spaced evenly over
    ``[low, high]``. ``degenerate``: the top ``n_distinct`` levels of a grid with
    spacing ``step`` ending at 1.0, skewed so that the mean is ``ceiling_mean``.
    """

    kind: Literal["discriminating", "degenerate"] = "discriminating"
    target_auroc: float = 0.85
    n_distinct: int = 13
    low: float = 0.40
    high: float = 1.00
    ceiling_mean: float = 0.99
    step: float = 0.05


@dataclass(frozen=True)
class SynthConfig:
    n_decisions: int = 2100
    class_balance_correct: float = 0.25
    small_accuracy: float = 0.92
    large_accuracy: float = 0.93
    confidence_profile: ConfidenceProfile = field(default_factory=ConfidenceProfile)
    annotator_noise: tuple[float, float, float] = (0.035, 0.035, 0.035)
    seed: int = 0
    split_shift: float = 1.0
    difficulty_sensitivity: float = 1.0
    n_criteria: int = 7
    annotator_pace_s: tuple[float, float, float] = (2.6, 4.1, 6.5)
    break_probability: float = 0.01
    small_latency_ms: float = 2049.0
    large_latency_ms: float = 5300.0
    small_tokens: tuple[int, int] = (1800, 60)
    large_tokens: tuple[int, int] = (1800, 700)
    provenance: str = "synthetic"

    @classmethod
    def from_dict(cls, obj: dict) -> "SynthConfig":
        obj = dict(obj)
        if "confidence_profile" in obj:
            obj["confidence_profile"] = ConfidenceProfile(**obj["confidence_profile"])
        noise = obj.get("annotator_noise")
        if isinstance(noise, (int, float)):
            obj["annotator_noise"] = (float(noise),) * 3
        for key in ("annotator_noise", "annotator_pace_s", "small_tokens", "large_tokens"):
            if key in obj:
                obj[key] = tuple(obj[key])
        return cls(**obj)

    @classmethod
    def from_file(cls, path: str | Path) -> "SynthConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


def _check(config: SynthConfig) -> None:
    probs = {
        "class_balance_correct": config.class_balance_correct,
        "small_accuracy": config.small_accuracy,
        "large_accuracy": config.large_accuracy,
        "break_probability": config.break_probability,
    }
    for i, q in enumerate(config.annotator_noise):
        probs[f"annotator_noise[{i}]"] = q
    for name, p in probs.items():
        if not 0.0 <= p <= 1.0:
            raise DatasetError(f"{name} must lie in [0, 1], got {p}")
    if config.n_decisions < 1:
        raise DatasetError("n_decisions must be >= 1")
    if len(config.annotator_noise) != 3:
        raise DatasetError("annotator_noise needs one flip probability per annotator")
    prof = config.confidence_profile
    if prof.n_distinct < 1:
        raise DatasetError("distinct-value count must be >= 1")
    if prof.kind == "discriminating":
        if not 0.5 <= prof.target_auroc < 1.0:
            raise DatasetError(f"infeasible profile: target AUROC {prof.target_auroc} not in [0.5, 1)")
        if prof.n_distinct == 1 and prof.target_auroc != 0.5:
            raise DatasetError("infeasible profile: a single confidence value has AUROC 0.5")
        if prof.n_distinct > 1 and not 0.0 <= prof.low < prof.high <= 1.0:
            raise DatasetError("infeasible profile: need 0 <= low < high <= 1")
        levels = np.round(np.linspace(prof.low, prof.high, prof.n_distinct), 2)
        if len(np.unique(levels)) != prof.n_distinct:
            raise DatasetError("infeasible profile: levels collide on the 0.01 grid")
    elif prof.kind == "degenerate":
        lowest = 1.0 - prof.step * (prof.n_distinct - 1)
        if lowest < 0:
            raise DatasetError("infeasible profile: grid extends below 0")
        if prof.n_distinct == 1 and prof.ceiling_mean != 1.0:
            raise DatasetError("infeasible profile: a single level must sit at 1.0")
        if prof.n_distinct > 1 and not lowest < prof.ceiling_mean < 1.0:
            raise DatasetError(f"infeasible profile: ceiling mean must lie in ({lowest:.2f}, 1)")
    else:
        raise DatasetError(f"unknown confidence profile {prof.kind!r}")


def _solve_intercept(difficulty: np.ndarray, slope: float, target: float) -> float:
    """Intercept c with mean(sigmoid(c - slope*difficulty)) == target."""
    lo, hi = -30.0, 30.0
    for _ in range(100):
        mid = (lo + hi) / 2
        if special.expit(mid - slope * difficulty).mean() < target:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def _quantile_levels(score: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Assign each score a level index so that level frequencies follow ``weights``."""
    order = np.argsort(score, kind="stable")
    cuts = np.round(np.cumsum(weights)[:-1] * score.size).astype(int)
    level = np.empty(score.size, dtype=np.int64)
    level[order] = np.searchsorted(cuts, np.arange(score.size), side="right")
    return level


def _degenerate_weights(values: np.ndarray, mean: float) -> np.ndarray:
    # geometric weights r**j rising toward the top level; solve r for the mean
    j = np.arange(values.size)

    def mean_at(log_r):
        w = np.exp(j * log_r - (j * log_r).max())
        w /= w.sum()
        return float(w @ values)

    lo, hi = -50.0, 50.0
    for _ in range(200):
        mid = (lo + hi) / 2
        if mean_at(mid) < mean:
            lo = mid
        else:
            hi = mid
    w = np.exp(j * lo - (j * lo).max())
    return w / w.sum()


def _confidences(prof: ConfidenceProfile, correct: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = correct.size
    separation = math.sqrt(2.0) * stats.norm.ppf(prof.target_auroc)
    score = separation * correct + rng.standard_normal(n)
    if prof.kind == "discriminating":
        values = np.round(np.linspace(prof.low, prof.high, prof.n_distinct), 2)
        weights = np.full(prof.n_distinct, 1.0 / prof.n_distinct)
    else:
        values = np.round(1.0 - prof.step * np.arange(prof.n_distinct)[::-1], 2)
        weights = np.ones(1) if prof.n_distinct == 1 else _degenerate_weights(values, prof.ceiling_mean)
    # values come from the 0-100 elicitation grid
    values = np.round(values * 100) / 100
    return values[_quantile_levels(score, weights)]


def _lognormal(rng: np.random.Generator, median: float, sigma: float, size) -> np.ndarray:
    return median * np.exp(sigma * rng.standard_normal(size))


def generate_synthetic(config: SynthConfig) -> DecisionSet:
    """Deterministic synthetic DecisionSet; the same config always yields the same set."""
    _check(config)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    n = config.n_decisions
    noise = np.asarray(config.annotator_noise, dtype=float)

    # P(majority flips the truth) for independent, possibly unequal, flip rates
    q1, q2, q3 = noise
    flip_majority = q1 * q2 * (1 - q3) + q1 * (1 - q2) * q3 + (1 - q1) * q2 * q3 + q1 * q2 * q3
    if flip_majority != 0.5:
        latent_rate = (config.class_balance_correct - flip_majority) / (1 - 2 * flip_majority)
    else:
        latent_rate = 0.5
    latent_rate = min(1.0, max(0.0, latent_rate))

    truth = (rng.random(n) < latent_rate).astype(np.int64)
    flips = (rng.random((n, 3)) < noise).astype(np.int64)
    votes = truth[:, None] ^ flips
    gold = (votes.sum(axis=1) >= 2).astype(np.int64)
    split = votes.min(axis=1) != votes.max(axis=1)

    difficulty = rng.standard_normal(n) + config.split_shift * split
    slope = config.difficulty_sensitivity

    def correctness(accuracy: float) -> np.ndarray:
        c = _solve_intercept(difficulty, slope, accuracy)
        return (rng.random(n) < special.expit(c - slope * difficulty)).astype(np.int64)

    small_correct = correctness(config.small_accuracy)
    large_correct = correctness(config.large_accuracy)
    small_label = np.where(small_correct == 1, gold, 1 - gold)
    large_label = np.where(large_correct == 1, gold, 1 - gold)
    confidence = _confidences(config.confidence_profile, small_correct, rng)

    pace = np.asarray(config.annotator_pace_s, dtype=float)
    times = pace[None, :] * np.exp(0.4 * difficulty[:, None] + 0.5 * rng.standard_normal((n, 3)))
    breaks = rng.random((n, 3)) < config.break_probability
    times = np.where(breaks, times + rng.uniform(600.0, 90_000.0, (n, 3)), times)
    times = np.round(times, 3)

    small_lat = np.round(_lognormal(rng, config.small_latency_ms, 0.25, n), 1)
    large_lat = np.round(_lognormal(rng, config.large_latency_ms, 0.6, n), 1)
    s_in = rng.poisson(config.small_tokens[0], n)
    s_out = rng.poisson(config.small_tokens[1], n)
    l_in = rng.poisson(config.large_tokens[0], n)
    l_out = rng.poisson(config.large_tokens[1], n)

    width = len(str(n - 1))
    decisions = []
    for i in range(n):
        crit = i % config.n_criteria
        decisions.append(
            ScoringDecision(
                decision_id=f"d{i:0{width}d}",
                item_id=f"item{crit // 2 + 1}",
                criterion_id=f"c{crit + 1}",
                annotator_votes=tuple(int(v) for v in votes[i]),
                annotator_times_s=tuple(float(t) for t in times[i]),
                small=ModelOutput(
                    predicted_label=int(small_label[i]),
                    confidence=float(confidence[i]),
                    latency_ms=float(small_lat[i]),
                    input_tokens=int(s_in[i]),
                    output_tokens=int(s_out[i]),
                ),
                large=ModelOutput(
                    predicted_label=int(large_label[i]),
                    latency_ms=float(large_lat[i]),
                    input_tokens=int(l_in[i]),
                    output_tokens=int(l_out[i]),
                ),
            )
        )
    return DecisionSet(tuple(decisions), provenance=config.provenance)
