from __future__ import annotations

from decimal import Decimal

import pytest

from cascadekit.cascade import Price, PricingTable
from cascadekit.synth import ConfidenceProfile, SynthConfig, generate_synthetic

# Good-signal family: strong discrimination, cheap small tier.
GOOD_CONFIG = SynthConfig(
    small_accuracy=0.915,
    large_accuracy=0.93,
    confidence_profile=ConfidenceProfile(target_auroc=0.88),
    difficulty_sensitivity=4.0,
    seed=1,
)
GOOD_PRICING = PricingTable(Price(Decimal("0.8"), Decimal("4")), Price(Decimal("4"), Decimal("2.5")))

# Degenerate family: three confidence levels bunched near 1.0.
DEGENERATE_CONFIG = SynthConfig(
    small_accuracy=0.895,
    large_accuracy=0.925,
    confidence_profile=ConfidenceProfile(kind="degenerate", n_distinct=3, ceiling_mean=0.993, target_auroc=0.68),
    difficulty_sensitivity=4.0,
    seed=1,
)
DEGENERATE_PRICING = PricingTable(Price(Decimal("0.1"), Decimal("0.4")), Price(Decimal("2"), Decimal("12")))


@pytest.fixture(scope="session")
def good_set():
    return generate_synthetic(GOOD_CONFIG)


@pytest.fixture(scope="session")
def degenerate_set():
    return generate_synthetic(DEGENERATE_CONFIG)


@pytest.fixture(scope="session")
def small_set():
    return generate_synthetic(SynthConfig(n_decisions=300, seed=5, difficulty_sensitivity=3.0, small_accuracy=0.85))
