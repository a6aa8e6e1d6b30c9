"""Confidence-routed small -> large cascades: simulation, threshold sweep, selection.

Routing rule: a decision is escalated iff the small model's normalized
confidence is strictly below ``tau``. Escalated decisions take the large
model's label and pay for both calls; latency is sequential.

Money is exact: per-decision costs are Decimal USD (token count times the
per-million price gives micro-dollars exactly), so cost comparisons in the
Pareto filter and selection never see binary-float drift.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

from . import statskit
from .dataset import DecisionSet, ModelOutput, ScoringDecision

DEFAULT_TAUS: tuple[float, ...] = tuple(round(k / 100, 2) for k in range(1, 100))
DEFAULT_DELTA = 0.02
MICRO = Decimal(1_000_000)

Role = Literal["small", "large"]


class CascadeError(ValueError):
    """Cascade analysis cannot proceed on this input."""


# -- pricing ------------------------------------------------------------------


@dataclass(frozen=True)
class Price:
    input_per_million_usd: Decimal
    output_per_million_usd: Decimal

    def __post_init__(self):
        for name in ("input_per_million_usd", "output_per_million_usd"):
            value = getattr(self, name)
            if not isinstance(value, Decimal):
                object.__setattr__(self, name, Decimal(str(value)))
            if getattr(self, name) < 0:
                raise CascadeError(f"{name} must be >= 0")


@dataclass(frozen=True)
class PricingTable:
    small: Price | None = None
    large: Price | None = None

    def get(self, role: Role) -> Price:
        price = getattr(self, role)
        if price is None:
            raise CascadeError(f"missing pricing entry for role {role!r}")
        return price

    def scaled(self, factor) -> "PricingTable":
        f = Decimal(str(factor))

        def s(p):
            return None if p is None else Price(p.input_per_million_usd * f, p.output_per_million_usd * f)

        return PricingTable(s(self.small), s(self.large))

    @classmethod
    def from_dict(cls, obj: dict) -> "PricingTable":
        roles = {}
        for role in ("small", "large"):
            if role in obj and obj[role] is not None:
                roles[role] = Price(
                    Decimal(str(obj[role]["input_per_million_usd"])),
                    Decimal(str(obj[role]["output_per_million_usd"])),
                )
        return cls(**roles)

    def to_dict(self) -> dict:
        out = {}
        for role in ("small", "large"):
            p = getattr(self, role)
            if p is not None:
                out[role] = {
                    "input_per_million_usd": str(p.input_per_million_usd),
                    "output_per_million_usd": str(p.output_per_million_usd),
                }
        return out


UNIT_PRICING = PricingTable(Price(Decimal(1), Decimal(1)), Price(Decimal(1), Decimal(1)))


def load_pricing(path: str | Path, family: str | None = None) -> PricingTable:
    """Read a pricing file: ``{role: {input_per_million_usd, output_per_million_usd}}``.

    A file may instead map family names to such tables; ``family`` picks one.
    """
    obj = json.loads(Path(path).read_text(), parse_float=Decimal)
    if "small" in obj or "large" in obj:
        return PricingTable.from_dict(obj)
    if family is None:
        raise CascadeError("pricing file is keyed by family; pass a family name")
    if family not in obj:
        raise CascadeError(f"no pricing entry for family {family!r}")
    return PricingTable.from_dict(obj[family])


def cost_micro_usd(output: ModelOutput, price: Price) -> Decimal:
    return output.input_tokens * price.input_per_million_usd + output.output_tokens * price.output_per_million_usd


def cost_per_decision(output: ModelOutput, role: Role, pricing: PricingTable) -> Decimal:
    """USD cost of one model call from its token counts."""
    return cost_micro_usd(output, pricing.get(role)) / MICRO


def usd(value: Decimal, places: int = 6) -> str:
    return f"{value.quantize(Decimal(1).scaleb(-places)):f}"


# -- results --------------------------------------------------------------------


@dataclass(frozen=True)
class LatencyStats:
    median_ms: float
    p95_ms: float

    @classmethod
    def of(cls, values) -> "LatencyStats":
        return cls(statskit.nearest_rank(values, 0.5), statskit.nearest_rank(values, 0.95))


@dataclass(frozen=True)
class CascadePoint:
    tau: float
    kappa: float
    accuracy: float
    escalation_rate: float
    cost_per_decision_usd: Decimal
    latency_median_ms: float
    latency_p95_ms: float
    n: int = 0
    n_escalated: int = 0

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "kappa": self.kappa,
            "accuracy": self.accuracy,
            "escalation_rate": self.escalation_rate,
            "n": self.n,
            "n_escalated": self.n_escalated,
            "cost_per_decision_usd": usd(self.cost_per_decision_usd),
            "cost_per_1k_usd": usd(self.cost_per_decision_usd * 1000),
            "latency_median_ms": self.latency_median_ms,
            "latency_p95_ms": self.latency_p95_ms,
        }


@dataclass(frozen=True)
class OperatingPoint:
    point: CascadePoint
    rule_fired: Literal["within_delta", "fallback_max_kappa"]
    delta: float
    large_kappa: float
    frontier: tuple[CascadePoint, ...] = field(repr=False)


@dataclass(frozen=True)
class Routed:
    escalated: bool
    label: int


@dataclass(frozen=True)
class LiftTable:
    tau: float
    n_kept: int
    n_escalated: int
    small_kappa_kept: float
    small_kappa_escalated: float
    large_kappa_escalated: float

    @property
    def separation(self) -> float:
        return self.small_kappa_kept - self.small_kappa_escalated

    @property
    def lift(self) -> float:
        return self.large_kappa_escalated - self.small_kappa_escalated


@dataclass(frozen=True)
class StrategySummary:
    strategy: str
    kappa: float
    accuracy: float
    cost_per_decision_usd: Decimal
    latency: LatencyStats


@dataclass(frozen=True)
class CvFold:
    fold: int
    n_train: int
    n_test: int
    tau: float
    rule_fired: str
    heldout_kappa: float


@dataclass(frozen=True)
class CvResult:
    folds: tuple[CvFold, ...]
    in_sample_tau: float
    in_sample_kappa: float
    seed: int
    stratify_on: str = "majority_label"

    @property
    def mean_kappa(self) -> float:
        return float(np.mean([f.heldout_kappa for f in self.folds]))

    @property
    def sd_kappa(self) -> float:
        return float(np.std([f.heldout_kappa for f in self.folds], ddof=1)) if len(self.folds) > 1 else 0.0

    @property
    def tau_sd(self) -> float:
        return float(np.std([f.tau for f in self.folds], ddof=1)) if len(self.folds) > 1 else 0.0

    @property
    def optimism(self) -> float:
        return self.in_sample_kappa - self.mean_kappa


# -- columnar view ----------------------------------------------------------------


def _kappa(pred: np.ndarray, gold: np.ndarray) -> float:
    return statskit.cohen_kappa(pred, gold)


class CascadeData:
    """Column arrays of a DecisionSet for repeated cascade evaluation."""

    def __init__(self, dset: DecisionSet, pricing: PricingTable | None = None, require_large: bool = True):
        decisions = dset.decisions
        missing = [d.decision_id for d in decisions if d.small.confidence is None]
        if missing:
            raise CascadeError(f"small-model confidence missing for {len(missing)} decisions (e.g. {missing[0]!r})")
        if require_large and not dset.has_large:
            raise CascadeError("large-model output missing; cascade analyses need both tiers")
        self.dset = dset
        self.pricing = pricing
        self.n = len(decisions)
        self.gold = np.fromiter((d.majority for d in decisions), np.int64, self.n)
        self.small_pred = np.fromiter((d.small.predicted_label for d in decisions), np.int64, self.n)
        self.confidence = np.fromiter((d.small.confidence for d in decisions), float, self.n)
        self.small_latency = np.fromiter((d.small.latency_ms for d in decisions), float, self.n)
        if dset.has_large:
            self.large_pred = np.fromiter((d.large.predicted_label for d in decisions), np.int64, self.n)
            self.large_latency = np.fromiter((d.large.latency_ms for d in decisions), float, self.n)
        else:
            self.large_pred = self.large_latency = None
        if pricing is not None:
            self.small_cost = [cost_micro_usd(d.small, pricing.get("small")) for d in decisions]
            self.small_total = sum(self.small_cost, Decimal(0))
            if dset.has_large:
                large_price = pricing.get("large")
                self.large_cost = [cost_micro_usd(d.large, large_price) for d in decisions]
                self.large_total = sum(self.large_cost, Decimal(0))
                self._order = np.argsort(self.confidence, kind="stable")
                self._sorted_conf = self.confidence[self._order]
                prefix = [Decimal(0)]
                for i in self._order:
                    prefix.append(prefix[-1] + self.large_cost[i])
                self._large_prefix = prefix

    def subset(self, indices) -> "CascadeData":
        return CascadeData(self.dset.subset(indices), self.pricing)

    def escalated(self, tau: float) -> np.ndarray:
        return self.confidence < tau

    def large_kappa(self) -> float:
        return _kappa(self.large_pred, self.gold)

    def point(self, tau: float) -> CascadePoint:
        if self.pricing is None:
            raise CascadeError("pricing required to simulate a cascade")
        esc = self.confidence < tau
        final = np.where(esc, self.large_pred, self.small_pred)
        n_esc = int(np.searchsorted(self._sorted_conf, tau, side="left"))
        cost = (self.small_total + self._large_prefix[n_esc]) / self.n / MICRO
        latency = self.small_latency + np.where(esc, self.large_latency, 0.0)
        lat = LatencyStats.of(latency)
        return CascadePoint(
            tau=float(tau),
            kappa=_kappa(final, self.gold),
            accuracy=float(np.mean(final == self.gold)),
            escalation_rate=n_esc / self.n,
            cost_per_decision_usd=cost,
            latency_median_ms=lat.median_ms,
            latency_p95_ms=lat.p95_ms,
            n=self.n,
            n_escalated=n_esc,
        )

    def strategy(self, role: Role) -> StrategySummary:
        pred = self.small_pred if role == "small" else self.large_pred
        latency = self.small_latency if role == "small" else self.large_latency
        if pred is None:
            raise CascadeError("large-model output missing")
        total = self.small_total if role == "small" else self.large_total
        return StrategySummary(
            strategy=f"always_{role}",
            kappa=_kappa(pred, self.gold),
            accuracy=float(np.mean(pred == self.gold)),
            cost_per_decision_usd=total / self.n / MICRO,
            latency=LatencyStats.of(latency),
        )


# -- operations ---------------------------------------------------------------------


def route(decision: ScoringDecision, tau: float) -> Routed:
    conf = decision.small.confidence
    if conf is None:
        raise CascadeError(f"decision {decision.decision_id!r}: small confidence missing")
    if conf < tau:
        if decision.large is None:
            raise CascadeError(f"decision {decision.decision_id!r}: escalated but large output missing")
        return Routed(True, decision.large.predicted_label)
    return Routed(False, decision.small.predicted_label)


def simulate(dset: DecisionSet, tau: float, pricing: PricingTable) -> CascadePoint:
    return CascadeData(dset, pricing).point(tau)


def sweep(dset: DecisionSet, pricing: PricingTable, taus: Sequence[float] = DEFAULT_TAUS) -> list[CascadePoint]:
    data = CascadeData(dset, pricing)
    return [data.point(t) for t in taus]


def pareto_filter(points: Sequence[CascadePoint]) -> list[CascadePoint]:
    """Drop points for which another point is both strictly cheaper and strictly higher-kappa."""
    if not points:
        raise CascadeError("cannot filter an empty sweep")
    # sort by cost; a point is dominated iff some strictly cheaper point has
    # strictly higher kappa, i.e. the running max kappa over cheaper cost groups
    order = sorted(range(len(points)), key=lambda i: points[i].cost_per_decision_usd)
    keep = [False] * len(points)
    best_cheaper = -math.inf
    i = 0
    while i < len(order):
        j = i
        cost = points[order[i]].cost_per_decision_usd
        while j < len(order) and points[order[j]].cost_per_decision_usd == cost:
            j += 1
        group = order[i:j]
        for k in group:
            keep[k] = not points[k].kappa < best_cheaper
        best_cheaper = max(best_cheaper, max(points[k].kappa for k in group))
        i = j
    return [p for p, k in zip(points, keep) if k]


def select_operating_point(
    frontier: Sequence[CascadePoint], large_kappa: float, delta: float = DEFAULT_DELTA
) -> OperatingPoint:
    """Cheapest frontier point within ``delta`` of the large model's kappa, else the max-kappa point."""
    if not frontier:
        raise CascadeError("empty frontier")
    qualifying = [p for p in frontier if large_kappa - p.kappa <= delta]
    if qualifying:
        best = min(qualifying, key=lambda p: (p.cost_per_decision_usd, p.tau))
        rule = "within_delta"
    else:
        best = min(frontier, key=lambda p: (-p.kappa, p.tau))
        rule = "fallback_max_kappa"
    return OperatingPoint(best, rule, delta, large_kappa, tuple(frontier))


def _choose(data: CascadeData, delta: float, taus: Sequence[float]) -> OperatingPoint:
    frontier = pareto_filter([data.point(t) for t in taus])
    return select_operating_point(frontier, data.large_kappa(), delta)


def choose_operating_point(
    dset: DecisionSet, pricing: PricingTable, delta: float = DEFAULT_DELTA, taus: Sequence[float] = DEFAULT_TAUS
) -> OperatingPoint:
    """Sweep, filter and select in one call."""
    return _choose(CascadeData(dset, pricing), delta, taus)


def always(dset: DecisionSet, pricing: PricingTable, role: Role) -> StrategySummary:
    return CascadeData(dset, pricing).strategy(role)


def escalation_lift(dset: DecisionSet, tau: float) -> LiftTable:
    data = CascadeData(dset)
    esc = data.escalated(tau)
    n_esc = int(esc.sum())
    if n_esc == 0:
        raise CascadeError(f"no escalated decisions at tau={tau}")
    if n_esc == data.n:
        raise CascadeError(f"no kept decisions at tau={tau}")
    keep = ~esc
    return LiftTable(
        tau=float(tau),
        n_kept=data.n - n_esc,
        n_escalated=n_esc,
        small_kappa_kept=_kappa(data.small_pred[keep], data.gold[keep]),
        small_kappa_escalated=_kappa(data.small_pred[esc], data.gold[esc]),
        large_kappa_escalated=_kappa(data.large_pred[esc], data.gold[esc]),
    )


def cascade_latencies(dset: DecisionSet, tau: float) -> np.ndarray:
    """Per-decision sequential latency of the cascade."""
    data = CascadeData(dset)
    return data.small_latency + np.where(data.escalated(tau), data.large_latency, 0.0)


def latency_profile(dset: DecisionSet, tau: float) -> dict[str, LatencyStats]:
    data = CascadeData(dset)
    cascade = data.small_latency + np.where(data.escalated(tau), data.large_latency, 0.0)
    return {
        "always_small": LatencyStats.of(data.small_latency),
        "always_large": LatencyStats.of(data.large_latency),
        "cascade": LatencyStats.of(cascade),
    }


def kappa_diff_ci(
    dset: DecisionSet, tau: float, resamples: int = statskit.DEFAULT_RESAMPLES, seed: int = 0
) -> statskit.CiEstimate:
    """Paired bootstrap CI of cascade kappa minus large-alone kappa."""
    data = CascadeData(dset)
    final = np.where(data.escalated(tau), data.large_pred, data.small_pred)
    table = np.column_stack([data.gold, final, data.large_pred])

    def pair(sample):
        return _kappa(sample[:, 1], sample[:, 0]), _kappa(sample[:, 2], sample[:, 0])

    return statskit.paired_bootstrap_diff(table, pair, resamples, seed)


def stratified_folds(labels: np.ndarray, k: int, seed: int) -> list[np.ndarray]:
    """Split indices into k folds, each class dealt round-robin after a seeded shuffle."""
    labels = np.asarray(labels)
    if labels.size < k:
        raise CascadeError(f"stratification failed: {labels.size} decisions for {k} folds")
    rng = np.random.Generator(np.random.PCG64(seed))
    assignment = np.empty(labels.size, dtype=np.int64)
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        if idx.size < k:
            raise CascadeError(f"stratification failed: class {cls} has {idx.size} decisions for {k} folds")
        idx = rng.permutation(idx)
        assignment[idx] = np.arange(idx.size) % k
    return [np.flatnonzero(assignment == f) for f in range(k)]


def cross_validate_selection(
    dset: DecisionSet,
    pricing: PricingTable,
    k: int = 5,
    seed: int = 0,
    delta: float = DEFAULT_DELTA,
    taus: Sequence[float] = DEFAULT_TAUS,
) -> CvResult:
    """k-fold stratified CV of threshold selection.

    Each fold selects tau on the other k-1 folds, using their own large-alone
    kappa, and scores the cascade on the held-out fold.
    """
    data = CascadeData(dset, pricing)
    in_sample = _choose(data, delta, taus)
    folds = stratified_folds(data.gold, k, seed)
    results = []
    for f, test_idx in enumerate(folds):
        train_idx = np.sort(np.concatenate([folds[g] for g in range(k) if g != f]))
        op = _choose(data.subset(train_idx), delta, taus)
        test = data.subset(test_idx)
        results.append(
            CvFold(
                fold=f,
                n_train=int(train_idx.size),
                n_test=int(test_idx.size),
                tau=op.point.tau,
                rule_fired=op.rule_fired,
                heldout_kappa=test.point(op.point.tau).kappa,
            )
        )
    return CvResult(tuple(results), in_sample.point.tau, in_sample.point.kappa, seed)
