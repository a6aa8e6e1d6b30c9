"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import difflib
import random
import time
from decimal import Decimal

import numpy as np
import pytest

from cascadekit import cascade as cc
from cascadekit import statskit as sk
from cascadekit.dataset import load_decisions
from cascadekit.report import distinct_confidence_stats
from cascadekit.router.backends import Completion, MockBackend, static_verdict
from cascadekit.router.gateway import BackendConfig, Backends, DecisionLog, ScoreRequest, attach_labels, route_request
from cascadekit.router.prompt import ELICITATION, parse_verdict, render_prompt
from cascadekit.synth import generate_synthetic
from cascadekit.uncertainty import cap_and_standardize, response_time_difficulty

from conftest import DEGENERATE_CONFIG, DEGENERATE_PRICING, GOOD_CONFIG, GOOD_PRICING

SEED = 42


@pytest.fixture
def verdict(capsys, request):
    """Yield a recorder; on teardown print one PASS/FAIL line outside capture."""
    lines = []

    def record(label: str, ok: bool, detail: str) -> None:
        lines.append(f"[acceptance] criterion {label}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail

    yield record
    # record() always runs before its assert, so no line means an earlier exception
    with capsys.disabled():
        label = request.node.name.split("_")[2]
        print("\n" + (lines[-1] if lines else f"[acceptance] criterion {label}: FAIL (raised before verdict)"))


# -- oracles --------------------------------------------------------------------------


def kappa_direct(pred, gold):
    n = len(pred)
    a = sum(1 for p, g in zip(pred, gold) if p == 1 and g == 1)
    b = sum(1 for p, g in zip(pred, gold) if p == 1 and g == 0)
    c = sum(1 for p, g in zip(pred, gold) if p == 0 and g == 1)
    d = n - a - b - c
    p_o = (a + d) / n
    p_e = ((a + b) * (a + c) + (c + d) * (b + d)) / (n * n)
    return (p_o - p_e) / (1 - p_e)


def fleiss_direct(rows):
    n = len(rows)
    m = 3
    p_bar = sum((r[0] * (r[0] - 1) + r[1] * (r[1] - 1)) / (m * (m - 1)) for r in rows) / n
    p1 = sum(r[0] for r in rows) / (n * m)
    p_e = p1 * p1 + (1 - p1) * (1 - p1)
    return (p_bar - p_e) / (1 - p_e)


def auroc_pairs(conf, correct):
    pos = conf[correct == 1]
    neg = conf[correct == 0]
    gt = (pos[:, None] > neg[None, :]).sum()
    eq = (pos[:, None] == neg[None, :]).sum()
    return (gt + 0.5 * eq) / (pos.size * neg.size)


def ranks_pairs(x):
    below = (x[None, :] < x[:, None]).sum(axis=1)
    ties = (x[None, :] == x[:, None]).sum(axis=1)
    return below + (ties + 1) / 2


def dominance_oracle(points):
    return [p for p in points if not any(q.cost_per_decision_usd < p.cost_per_decision_usd and q.kappa > p.kappa for q in points)]


# -- criteria --------------------------------------------------------------------------


def test_criterion_1_statistics_oracles(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(10, 501))
        pred = rng.integers(0, 2, n)
        gold = np.where(rng.random(n) < 0.8, pred, 1 - pred)
        if len(set(gold)) == 1 and len(set(pred)) == 1:
            gold[0] = 1 - gold[0]
        worst = max(worst, abs(sk.cohen_kappa(pred, gold) - kappa_direct(pred.tolist(), gold.tolist())))

        met = rng.integers(0, 4, n)
        rows = [(int(k), 3 - int(k)) for k in met]
        worst = max(worst, abs(sk.fleiss_kappa(rows) - fleiss_direct(rows)))

        conf = rng.integers(0, 21, n) / 20
        correct = rng.integers(0, 2, n)
        correct[:2] = (0, 1)
        worst = max(worst, abs(sk.auroc(conf, correct) - auroc_pairs(conf, correct)))

        x = rng.integers(0, 30, n).astype(float)
        y = x + rng.integers(-10, 10, n)
        ref = sk.pearson_r(ranks_pairs(x), ranks_pairs(y))
        worst = max(worst, abs(sk.spearman_rho(x, y) - ref))
    elapsed = time.perf_counter() - start
    verdict("1", worst <= 1e-12 and elapsed < 10, f"max abs error {worst:.2e}, {elapsed:.2f}s")


def test_criterion_2_pareto_selection(verdict):
    start = time.perf_counter()
    rng = random.Random(SEED)
    mismatches = 0
    fallbacks = 0
    for _ in range(500):
        costs = sorted(Decimal(rng.randint(0, 60)) / 13 for _ in range(99))
        points = [
            cc.CascadePoint(round((i + 1) / 100, 2), round(rng.uniform(0.5, 0.9), rng.choice([2, 3, 12])), 0.0, 0.0, c, 0.0, 0.0)
            for i, c in enumerate(costs)
        ]
        frontier = cc.pareto_filter(points)
        if frontier != dominance_oracle(points):
            mismatches += 1
            continue
        large_kappa = rng.uniform(0.6, 0.95)
        delta = rng.choice([0.0, 0.01, 0.02, 0.05])
        op = cc.select_operating_point(frontier, large_kappa, delta)
        ok = [p for p in frontier if large_kappa - p.kappa <= delta]
        if ok:
            best = min(ok, key=lambda p: (p.cost_per_decision_usd, p.tau))
            expected = (best, "within_delta")
        else:
            fallbacks += 1
            best = min(frontier, key=lambda p: (-p.kappa, p.tau))
            expected = (best, "fallback_max_kappa")
        # exhaustive: no frontier point beats the choice under the rule
        if ok:
            beaten = any(p.cost_per_decision_usd < op.point.cost_per_decision_usd for p in ok)
        else:
            beaten = any(p.kappa > op.point.kappa for p in frontier)
        if (op.point, op.rule_fired) != expected or beaten:
            mismatches += 1
    elapsed = time.perf_counter() - start
    verdict("2", mismatches == 0 and elapsed < 5, f"{mismatches} mismatches in 500 sweeps, {fallbacks} fallbacks, {elapsed:.2f}s")


def _q(x: Decimal) -> Decimal:
    # per-decision means are divided separately, so the last of 28 digits can differ
    return x.quantize(Decimal("1e-18"))


def test_criterion_3_endpoint_identities(verdict, good_set, degenerate_set, small_set):
    problems = []
    for name, dset, pricing in (
        ("good", good_set, GOOD_PRICING),
        ("degenerate", degenerate_set, DEGENERATE_PRICING),
        ("small", small_set, GOOD_PRICING),
    ):
        data = cc.CascadeData(dset, pricing)
        small, large = data.strategy("small"), data.strategy("large")
        lo, hi = cc.simulate(dset, 0.0, pricing), cc.simulate(dset, 1.01, pricing)
        if (lo.kappa, lo.cost_per_decision_usd, lo.latency_median_ms, lo.latency_p95_ms) != (
            small.kappa,
            small.cost_per_decision_usd,
            small.latency.median_ms,
            small.latency.p95_ms,
        ):
            problems.append(f"{name}: tau=0 differs from always-small")
        sums = cc.LatencyStats.of(data.small_latency + data.large_latency)
        # escalating everything: large verdicts, both calls paid, latencies summed
        if (hi.kappa, _q(hi.cost_per_decision_usd), hi.latency_median_ms, hi.latency_p95_ms) != (
            large.kappa,
            _q(small.cost_per_decision_usd + large.cost_per_decision_usd),
            sums.median_ms,
            sums.p95_ms,
        ):
            problems.append(f"{name}: tau=1.01 differs from always-large")
        pts = cc.sweep(dset, pricing)
        for a, b in zip(pts, pts[1:]):
            if a.escalation_rate > b.escalation_rate or a.cost_per_decision_usd > b.cost_per_decision_usd:
                problems.append(f"{name}: not monotone at tau={b.tau}")
                break
    verdict("3", not problems, "; ".join(problems) or "3 fixtures, exact equality, monotone over 99 thresholds")


def test_criterion_4_response_time_pipeline(verdict, good_set):
    times = np.array([d.annotator_times_s for d in good_set])
    worst_mean = worst_sd = 0.0
    for a in range(3):
        z, _ = cap_and_standardize(times[:, a])
        worst_mean = max(worst_mean, abs(z.mean()))
        worst_sd = max(worst_sd, abs(z.std(ddof=1) - 1))
    scores = response_time_difficulty(good_set)
    worst_mean = max(worst_mean, float(np.abs(scores.z_scores.mean(axis=0)).max()))
    worst_sd = max(worst_sd, float(np.abs(scores.z_scores.std(axis=0, ddof=1) - 1).max()))

    rng = np.random.default_rng(SEED)
    worst_affine = 0.0
    from dataclasses import replace

    for _ in range(5):
        scale = rng.uniform(0.01, 100, 3)
        shift = rng.uniform(0, 50, 3)
        moved = tuple(
            replace(d, annotator_times_s=tuple(float(t) for t in np.asarray(d.annotator_times_s) * scale + shift))
            for d in good_set
        )
        out = response_time_difficulty(replace(good_set, decisions=moved)).difficulty
        worst_affine = max(worst_affine, float(np.abs(out - scores.difficulty).max()))
    ok = worst_mean < 1e-9 and worst_sd < 1e-9 and worst_affine < 1e-9
    verdict("4", ok, f"|mean| {worst_mean:.1e}, |SD-1| {worst_sd:.1e}, affine drift {worst_affine:.1e}")


def _marginals(dset):
    gold = np.array([d.majority for d in dset])
    small = np.array([d.small.predicted_label for d in dset])
    large = np.array([d.large.predicted_label for d in dset])
    conf = np.array([d.small.confidence for d in dset])
    return gold.mean(), (small == gold).mean(), (large == gold).mean(), sk.auroc(conf, (small == gold).astype(int))


def test_criterion_5_good_signal_regime(verdict):
    start = time.perf_counter()
    dset = generate_synthetic(GOOD_CONFIG)
    balance, small_acc, large_acc, auc = _marginals(dset)
    distinct, _ = distinct_confidence_stats(dset)
    fixture_ok = (
        len(dset) == 2100
        and abs(balance - 0.25) < 0.02
        and abs(small_acc - 0.92) < 0.015
        and abs(large_acc - 0.93) < 0.015
        and auc >= 0.85
        and distinct >= 10
    )
    op = cc.choose_operating_point(dset, GOOD_PRICING)
    large_cost = cc.always(dset, GOOD_PRICING, "large").cost_per_decision_usd
    reduction = float(1 - op.point.cost_per_decision_usd / large_cost)
    ci = cc.kappa_diff_ci(dset, op.point.tau, resamples=10_000, seed=sk.substream_seed(SEED, "criterion5"))
    elapsed = time.perf_counter() - start
    ok = (
        fixture_ok
        and op.rule_fired == "within_delta"
        and op.point.escalation_rate < 0.20
        and reduction > 0.60
        and ci.contains(0.0)
        and elapsed < 120
    )
    verdict(
        "5",
        ok,
        f"balance {balance:.3f}, acc {small_acc:.3f}/{large_acc:.3f}, AUROC {auc:.3f}, {distinct} values; "
        f"{op.rule_fired} tau {op.point.tau}, escalation {op.point.escalation_rate:.1%}, "
        f"cost -{reduction:.1%}, CI [{ci.lo:.4f}, {ci.hi:.4f}], {elapsed:.1f}s",
    )


def test_criterion_6_degenerate_regime(verdict):
    dset = generate_synthetic(DEGENERATE_CONFIG)
    distinct, variance = distinct_confidence_stats(dset)
    op = cc.choose_operating_point(dset, DEGENERATE_PRICING)
    ci = cc.kappa_diff_ci(dset, op.point.tau, resamples=10_000, seed=sk.substream_seed(SEED, "criterion6"))
    ok = distinct == 3 and variance < 0.001 and op.rule_fired == "fallback_max_kappa" and ci.hi < 0
    verdict(
        "6",
        ok,
        f"{distinct} values, variance {variance:.5f}, {op.rule_fired} tau {op.point.tau}, CI [{ci.lo:.4f}, {ci.hi:.4f}]",
    )


def test_criterion_7_cv_stability(verdict):
    dset = generate_synthetic(GOOD_CONFIG)
    seed = sk.substream_seed(SEED, "cv")
    res = cc.cross_validate_selection(dset, GOOD_PRICING, k=5, seed=seed)
    again = cc.cross_validate_selection(dset, GOOD_PRICING, k=5, seed=seed)
    ok = abs(res.optimism) < 0.01 and res.tau_sd <= 0.05 and res == again
    verdict(
        "7",
        ok,
        f"optimism {res.optimism:+.4f}, tau SD {res.tau_sd:.3f}, fold taus {[f.tau for f in res.folds]}, deterministic {res == again}",
    )


def test_criterion_8_router_replay(verdict, tmp_path):
    start = time.perf_counter()
    rng = np.random.default_rng(SEED)
    n = 1000
    confidences = {f"q{i:04d}": int(c) for i, c in enumerate(rng.integers(0, 101, n))}
    labels = {k: bool(v) for k, v in zip(confidences, rng.integers(0, 2, n))}
    tau = 0.77

    def small(prompt):
        rid = prompt.split("<Criterion>")[1].split("</Criterion>")[0]
        if confidences[rid] == 13:  # a few garbled replies exercise the parse-failure path
            return Completion("no verdict today", 1500, 5)
        return Completion(static_verdict(labels[rid], confidences[rid]), 1800, 60)

    backends = Backends(
        MockBackend("small-mock", small),
        BackendConfig("small-mock", "mock://", 1000),
        MockBackend("large-mock", Completion(static_verdict(True), 1800, 700)),
        BackendConfig("large-mock", "mock://", 1000),
    )
    log = DecisionLog(tmp_path / "decisions.jsonl")
    responses = {}
    latency_ok = True
    for rid in confidences:
        req = ScoreRequest("problem", "answer", rid, "conversation", request_id=rid)
        resp, trace = route_request(req, tau, backends, GOOD_PRICING)
        log.append(req, resp, trace)
        responses[rid] = resp
        spans = resp.latency_ms["small"] + resp.latency_ms.get("large", 0.0)
        latency_ok &= resp.latency_ms["total"] == spans and resp.latency_ms["total"] >= resp.latency_ms["small"]

    annotations = {rid: ([1, 1, 0], [2.0, 3.0, 4.0]) for rid in confidences}
    labelled = tmp_path / "labelled.jsonl"
    written = attach_labels(log.path, annotations, labelled)
    dset = load_decisions(labelled)
    mismatch = sum(cc.route(d, tau).escalated != responses[d.decision_id].escalated for d in dset)
    parse_failed = [rid for rid, r in responses.items() if r.small_status != "ok"]
    forced_ok = all(responses[rid].escalated for rid in parse_failed)
    expected_esc = sum(1 for c in confidences.values() if c / 100 < tau or c == 13)
    got_esc = sum(r.escalated for r in responses.values())
    elapsed = time.perf_counter() - start
    ok = (
        mismatch == 0
        and latency_ok
        and written + len(parse_failed) == n
        and forced_ok
        and got_esc == expected_esc
        and elapsed < 30
    )
    verdict(
        "8",
        ok,
        f"{n} requests, {got_esc} escalated, {mismatch} mismatches vs offline route, "
        f"{len(parse_failed)} forced escalations, {written} log rows reloaded, {elapsed:.1f}s",
    )


def test_criterion_9_prompt_fidelity(verdict):
    req = ScoreRequest("Solve 3x = 12.", "x = 4", "Names the inverse operation.", "Proctor: How?\nStudent: Divide by 3.")
    small = render_prompt(req, True)
    large = render_prompt(req, False)
    sentence = "What is the probability that your scoring judgment is correct? 0 = no confidence, 100 = certain."
    diff = [ln[2:] for ln in difflib.ndiff(small.splitlines(), large.splitlines()) if ln.startswith(("- ", "+ "))]
    only_conf = bool(diff) and all("3_Confidence" in ln for ln in diff) and "3_Confidence" not in large
    schema = parse_verdict('{"1_Reasoning":"ok","2_IsSatisfied":"true","3_Confidence":90}', "small")
    boolean = parse_verdict('{"1_Reasoning":"x","2_IsSatisfied":false}', "large")
    wrapped = parse_verdict('Here you go:\n{"1_Reasoning":"fine","2_IsSatisfied":true,"3_Confidence":72}\nDone.', "small")
    parses = (
        (schema.reasoning, schema.is_satisfied, schema.confidence) == ("ok", True, 90)
        and (boolean.reasoning, boolean.is_satisfied, boolean.confidence) == ("x", False, None)
        and wrapped.is_satisfied is True
        and wrapped.confidence == 72
        and any("non-clean" in w for w in wrapped.warnings)
    )
    ok = sentence in small and ELICITATION == sentence and only_conf and parses
    verdict("9", ok, f"elicitation present, {len(diff)} differing lines all 3_Confidence, 3 parse variants ok")


if __name__ == "__main__":  # pragma: no cover
    import sys

    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
