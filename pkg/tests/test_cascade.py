from __future__ import annotations

import random
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascadekit import cascade as cc
from cascadekit import statskit
from cascadekit.cascade import CascadeError, CascadePoint, Price, PricingTable
from cascadekit.dataset import DecisionSet, ModelOutput, ScoringDecision

from conftest import GOOD_PRICING

FLAT = PricingTable(Price(1, 4), Price(10, 40))


def decision(i, conf, small_label=1, large_label=1, votes=(1, 1, 1), s_lat=100.0, l_lat=1000.0, s_tok=(1000, 100), l_tok=(1000, 100)):
    return ScoringDecision(
        f"d{i:04d}",
        "item",
        "crit",
        votes,
        (1.0, 2.0, 3.0),
        ModelOutput(small_label, conf, s_lat, *s_tok),
        ModelOutput(large_label, None, l_lat, *l_tok),
    )


def point(tau, kappa, cost):
    return CascadePoint(tau, kappa, 0.0, 0.0, Decimal(cost), 0.0, 0.0)


# -- oracles -----------------------------------------------------------------------


def dominance_oracle(points):
    return [
        p
        for p in points
        if not any(q.cost_per_decision_usd < p.cost_per_decision_usd and q.kappa > p.kappa for q in points)
    ]


def selection_oracle(frontier, large_kappa, delta):
    ok = [p for p in frontier if large_kappa - p.kappa <= delta]
    if ok:
        cheapest = min(p.cost_per_decision_usd for p in ok)
        return min((p for p in ok if p.cost_per_decision_usd == cheapest), key=lambda p: p.tau), "within_delta"
    best = max(p.kappa for p in frontier)
    return min((p for p in frontier if p.kappa == best), key=lambda p: p.tau), "fallback_max_kappa"


def simulate_oracle(dset, tau, pricing):
    """Per-decision loop with Decimal money and nearest-rank percentiles."""
    final, costs, lats = [], [], []
    for d in dset:
        esc = d.small.confidence < tau
        final.append(d.large.predicted_label if esc else d.small.predicted_label)
        c = d.small.input_tokens * pricing.small.input_per_million_usd + d.small.output_tokens * pricing.small.output_per_million_usd
        if esc:
            c += d.large.input_tokens * pricing.large.input_per_million_usd + d.large.output_tokens * pricing.large.output_per_million_usd
        costs.append(c)
        lats.append(d.small.latency_ms + (d.large.latency_ms if esc else 0.0))
    gold = [d.majority for d in dset]
    lats.sort()
    nr = lambda q: lats[max(1, int(np.ceil(q * len(lats) - 1e-9))) - 1]  # noqa: E731
    return statskit.cohen_kappa(final, gold), sum(costs) / len(costs) / Decimal(10**6), nr(0.5), nr(0.95)


# -- routing -----------------------------------------------------------------------


def test_route_boundary_kept():
    d = decision(0, 0.77, small_label=1, large_label=0)
    assert cc.route(d, 0.77) == cc.Routed(False, 1)
    assert cc.route(d, 0.78) == cc.Routed(True, 0)
    assert not cc.route(d, 0.0).escalated
    assert cc.route(decision(1, 1.0), 1.01).escalated


def test_route_missing_confidence():
    d = ScoringDecision("x", "i", "c", (1, 1, 1), (1.0, 1.0, 1.0), ModelOutput(1, None))
    with pytest.raises(CascadeError):
        cc.route(d, 0.5)


# -- cost ----------------------------------------------------------------------------


def test_cost_examples():
    p = PricingTable(Price(1, 4), Price(1, 4))
    assert cc.cost_per_decision(ModelOutput(1, 0.5, 0, 0, 0), "small", p) == 0
    assert cc.cost_per_decision(ModelOutput(1, 0.5, 0, 1000, 100), "small", p) == Decimal("0.0014")
    doubled = cc.cost_per_decision(ModelOutput(1, 0.5, 0, 1234, 567), "small", p.scaled(2))
    assert doubled == 2 * cc.cost_per_decision(ModelOutput(1, 0.5, 0, 1234, 567), "small", p)
    with pytest.raises(CascadeError, match="missing pricing"):
        cc.cost_per_decision(ModelOutput(1), "large", PricingTable(small=Price(1, 1)))


def test_cost_per_1k_example():
    # $0.30 per 1k decisions small-only: 300 micro-dollars per decision
    p = PricingTable(Price("0.1", "0.4"), Price(1, 1))
    dset = DecisionSet(tuple(decision(i, 0.9, votes=(1, 0, i % 2), s_tok=(1800, 300)) for i in range(10)))
    pt = cc.simulate(dset, 0.0, p)
    assert pt.cost_per_decision_usd == Decimal("0.0003")
    assert pt.to_dict()["cost_per_1k_usd"] == "0.300000"


def test_usd_rendering():
    assert cc.usd(Decimal("0.0014")) == "0.001400"
    assert cc.usd(Decimal("1") / 3) == "0.333333"


def test_load_pricing(tmp_path):
    path = tmp_path / "p.json"
    path.write_text('{"small": {"input_per_million_usd": 0.1, "output_per_million_usd": 0.4}, "large": {"input_per_million_usd": 2, "output_per_million_usd": 12}}')
    p = cc.load_pricing(path)
    assert p.small.input_per_million_usd == Decimal("0.1")
    fam = tmp_path / "f.json"
    fam.write_text('{"fam_a": {"small": {"input_per_million_usd": 1, "output_per_million_usd": 2}}}')
    assert cc.load_pricing(fam, "fam_a").small.output_per_million_usd == 2
    with pytest.raises(CascadeError):
        cc.load_pricing(fam)
    with pytest.raises(CascadeError):
        cc.load_pricing(fam, "other")


# -- simulate / sweep ------------------------------------------------------------------


def test_simulate_matches_loop_oracle(small_set):
    for tau in (0.0, 0.3, 0.55, 0.77, 0.9, 1.0, 1.01):
        pt = cc.simulate(small_set, tau, GOOD_PRICING)
        kappa, cost, med, p95 = simulate_oracle(small_set, tau, GOOD_PRICING)
        assert pt.kappa == pytest.approx(kappa, abs=1e-12)
        assert pt.cost_per_decision_usd == cost
        assert (pt.latency_median_ms, pt.latency_p95_ms) == (med, p95)


def test_endpoint_identities(good_set):
    data = cc.CascadeData(good_set, GOOD_PRICING)
    small = data.strategy("small")
    large = data.strategy("large")
    lo = cc.simulate(good_set, 0.0, GOOD_PRICING)
    assert (lo.kappa, lo.cost_per_decision_usd, lo.n_escalated) == (small.kappa, small.cost_per_decision_usd, 0)
    assert (lo.latency_median_ms, lo.latency_p95_ms) == (small.latency.median_ms, small.latency.p95_ms)
    hi = cc.simulate(good_set, 1.01, GOOD_PRICING)
    assert hi.kappa == large.kappa and hi.escalation_rate == 1.0
    assert hi.cost_per_decision_usd == small.cost_per_decision_usd + large.cost_per_decision_usd
    sums = cc.LatencyStats.of(data.small_latency + data.large_latency)
    assert (hi.latency_median_ms, hi.latency_p95_ms) == (sums.median_ms, sums.p95_ms)


def test_sweep_monotone(good_set):
    points = cc.sweep(good_set, GOOD_PRICING)
    assert len(points) == 99
    assert [p.tau for p in points] == list(cc.DEFAULT_TAUS)
    for a, b in zip(points, points[1:]):
        assert a.escalation_rate <= b.escalation_rate
        assert a.cost_per_decision_usd <= b.cost_per_decision_usd
    small_cost = cc.always(good_set, GOOD_PRICING, "small").cost_per_decision_usd
    assert all(p.cost_per_decision_usd >= small_cost for p in points)


def test_constant_confidence_two_points():
    dset = DecisionSet(tuple(decision(i, 0.6, small_label=i % 2, large_label=(i // 2) % 2, votes=(i % 3 == 0,) * 3) for i in range(30)))
    points = cc.sweep(dset, FLAT)
    assert len({(p.kappa, p.cost_per_decision_usd, p.escalation_rate) for p in points}) == 2


def test_cost_decomposition_constant_tokens():
    rng = np.random.default_rng(0)
    dset = DecisionSet(tuple(decision(i, float(rng.integers(0, 101)) / 100, votes=(i % 4 == 0,) * 3) for i in range(200)))
    small_cost = cc.always(dset, FLAT, "small").cost_per_decision_usd
    per_large = cc.cost_per_decision(dset.decisions[0].large, "large", FLAT)
    for tau in (0.1, 0.5, 0.9):
        pt = cc.simulate(dset, tau, FLAT)
        assert pt.cost_per_decision_usd == small_cost + Decimal(pt.n_escalated) / pt.n * per_large


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.05, 0.95))
def test_monotone_transform_preserves_partition(seed, tau):
    rng = np.random.default_rng(seed)
    conf = rng.integers(0, 101, 80) / 100
    dset = DecisionSet(tuple(decision(i, float(c)) for i, c in enumerate(conf)))
    moved = DecisionSet(tuple(decision(i, float(c) ** 2) for i, c in enumerate(conf)))
    a = cc.CascadeData(dset).escalated(tau)
    b = cc.CascadeData(moved).escalated(tau**2)
    assert np.array_equal(a, b)


# -- pareto and selection ---------------------------------------------------------------


def test_pareto_examples():
    single = [point(0.5, 0.8, 1)]
    assert cc.pareto_filter(single) == single
    pts = [point(0.1, 0.8, 1), point(0.2, 0.7, 2)]
    assert cc.pareto_filter(pts) == [pts[0]]
    with pytest.raises(CascadeError):
        cc.pareto_filter([])


def test_pareto_keeps_equal_cost_and_equal_kappa():
    pts = [point(0.1, 0.8, 1), point(0.2, 0.7, 1), point(0.3, 0.8, 2)]
    assert cc.pareto_filter(pts) == pts


def random_sweep(rng):
    costs = sorted(rng.choice([Decimal(rng.randint(0, 30)) / 7 for _ in range(99)]) for _ in range(99))
    kappas = [round(rng.uniform(0.5, 0.9), rng.choice([2, 3, 12])) for _ in range(99)]
    return [point(round((i + 1) / 100, 2), k, c) for i, (k, c) in enumerate(zip(kappas, costs))]


@given(st.integers(0, 2**32), st.floats(0.0, 0.05))
def test_pareto_and_selection_match_oracles(seed, delta):
    rng = random.Random(seed)
    pts = random_sweep(rng)
    frontier = cc.pareto_filter(pts)
    assert frontier == dominance_oracle(pts)
    large_kappa = rng.uniform(0.6, 0.95)
    op = cc.select_operating_point(frontier, large_kappa, delta)
    best, rule = selection_oracle(frontier, large_kappa, delta)
    assert (op.point, op.rule_fired) == (best, rule)
    assert op.point in frontier


def test_selection_examples():
    a = point(0.1, 0.80, 1)
    b = point(0.2, 0.85, 2)
    c = point(0.3, 0.86, 3)
    op = cc.select_operating_point([a, b, c], 0.86)
    assert op.point is b and op.rule_fired == "within_delta"
    op = cc.select_operating_point([a, b, c], 0.86 + 0.05)
    assert op.point is c and op.rule_fired == "fallback_max_kappa"
    # equal cost qualifiers: lower tau wins
    x, y = point(0.4, 0.85, 2), point(0.3, 0.85, 2)
    assert cc.select_operating_point([x, y], 0.85).point is y
    # equal max kappa in fallback: lower tau wins
    assert cc.select_operating_point([point(0.5, 0.7, 3), point(0.2, 0.7, 4)], 0.9).point.tau == 0.2


def test_selection_never_dominated(good_set):
    op = cc.choose_operating_point(good_set, GOOD_PRICING)
    assert op.point in op.frontier
    if op.rule_fired == "within_delta":
        assert op.large_kappa - op.point.kappa <= op.delta
        cheaper = [p for p in op.frontier if p.cost_per_decision_usd < op.point.cost_per_decision_usd]
        assert all(op.large_kappa - p.kappa > op.delta for p in cheaper)


# -- lift and latency --------------------------------------------------------------------


def lift_fixture():
    decisions = []
    for i in range(40):
        gold = i % 2
        votes = (gold,) * 3
        if i < 20:  # confident and right
            decisions.append(decision(i, 0.9, small_label=gold, large_label=gold, votes=votes))
        else:  # unsure; small wrong on most, large right
            small = 1 - gold if i % 4 else gold
            decisions.append(decision(i, 0.3, small_label=small, large_label=gold, votes=votes))
    return DecisionSet(tuple(decisions))


def test_lift_constructed():
    dset = lift_fixture()
    lift = cc.escalation_lift(dset, 0.5)
    assert (lift.n_kept, lift.n_escalated) == (20, 20)
    assert lift.small_kappa_kept == 1.0
    assert lift.large_kappa_escalated == 1.0
    assert lift.separation > 0 and lift.lift > 0
    gold = [d.majority for d in dset.decisions[20:]]
    small = [d.small.predicted_label for d in dset.decisions[20:]]
    assert lift.small_kappa_escalated == pytest.approx(statskit.cohen_kappa(small, gold))
    assert lift.separation == lift.small_kappa_kept - lift.small_kappa_escalated


def test_lift_empty_subsets():
    dset = lift_fixture()
    with pytest.raises(CascadeError, match="no escalated"):
        cc.escalation_lift(dset, 0.0)
    with pytest.raises(CascadeError, match="no kept"):
        cc.escalation_lift(dset, 1.01)


def test_latency_two_point_mixture():
    # 7 of 100 escalated, constant latencies
    decisions = [decision(i, 0.1 if i < 7 else 0.9, s_lat=2049.0, l_lat=5300.0, votes=(i % 2,) * 3) for i in range(100)]
    prof = cc.latency_profile(DecisionSet(tuple(decisions)), 0.5)
    assert prof["cascade"].median_ms == 2049.0
    assert prof["cascade"].p95_ms == 2049.0 + 5300.0
    assert prof["always_small"].median_ms == 2049.0


def test_latency_endpoints(good_set):
    prof0 = cc.latency_profile(good_set, 0.0)
    assert prof0["cascade"] == prof0["always_small"]
    prof1 = cc.latency_profile(good_set, 1.01)
    assert prof1["cascade"].median_ms >= prof1["always_large"].median_ms


# -- kappa difference CI -------------------------------------------------------------------


def test_kappa_diff_ci_zero_cases(small_set):
    ci = cc.kappa_diff_ci(small_set, 1.01, resamples=200, seed=3)
    assert ci.point == ci.lo == ci.hi == 0.0
    same = DecisionSet(
        tuple(
            decision(i, 0.5, small_label=(i * 7) % 3 == 0, large_label=(i * 7) % 3 == 0, votes=(i % 2,) * 3)
            for i in range(60)
        )
    )
    ci = cc.kappa_diff_ci(same, 0.0, resamples=200, seed=3)
    assert ci.lo == ci.hi == 0.0


def test_kappa_diff_ci_deterministic(small_set):
    a = cc.kappa_diff_ci(small_set, 0.7, resamples=300, seed=9)
    b = cc.kappa_diff_ci(small_set, 0.7, resamples=300, seed=9)
    assert a == b


# -- cross-validation -----------------------------------------------------------------------


def test_stratified_folds_balanced():
    labels = np.array([1] * 25 + [0] * 75)
    folds = cc.stratified_folds(labels, 5, seed=4)
    assert sorted(np.concatenate(folds).tolist()) == list(range(100))
    for f in folds:
        assert labels[f].sum() == 5 and f.size == 20
    again = cc.stratified_folds(labels, 5, seed=4)
    assert all(np.array_equal(a, b) for a, b in zip(folds, again))


def test_stratification_failure():
    with pytest.raises(CascadeError, match="stratification failed"):
        cc.stratified_folds(np.array([1, 1, 0, 0, 0, 0, 0]), 5, seed=0)


def test_cv_deterministic(small_set):
    a = cc.cross_validate_selection(small_set, GOOD_PRICING, k=5, seed=3)
    b = cc.cross_validate_selection(small_set, GOOD_PRICING, k=5, seed=3)
    assert a == b
    assert len(a.folds) == 5 and sum(f.n_test for f in a.folds) == len(small_set)


def test_cv_zero_optimism_when_every_threshold_equal():
    # small and large always agree with the majority: every tau gives kappa 1
    decisions = [decision(i, (i % 10) / 10, small_label=i % 3 == 0, large_label=i % 3 == 0, votes=(i % 3 == 0,) * 3) for i in range(100)]
    res = cc.cross_validate_selection(DecisionSet(tuple(decisions)), FLAT, k=5, seed=0)
    assert res.optimism == 0.0
    assert res.tau_sd == 0.0
