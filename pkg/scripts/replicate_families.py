"""Generate three seeded model-family fixtures and run the full report over them.

    python3 scripts/replicate_families.py --out runs/families [--resamples 2000]

Writes ``<out>/data/{good,intermediate,degenerate}.jsonl``, a family-keyed
``pricing.json`` and the report run directory ``<out>/report``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from cascadekit import ConfidenceProfile, SynthConfig, generate_synthetic, save_decisions
from cascadekit.report import ReportConfig, run_full_report

FAMILIES = {
    "good": (
        SynthConfig(
            small_accuracy=0.915,
            large_accuracy=0.93,
            confidence_profile=ConfidenceProfile(target_auroc=0.88),
            difficulty_sensitivity=4.0,
            seed=1,
        ),
        {"small": {"input_per_million_usd": "0.8", "output_per_million_usd": "4"},
         "large": {"input_per_million_usd": "4", "output_per_million_usd": "2.5"}},
    ),
    "intermediate": (
        SynthConfig(
            small_accuracy=0.90,
            large_accuracy=0.93,
            confidence_profile=ConfidenceProfile(target_auroc=0.75, n_distinct=6),
            difficulty_sensitivity=3.0,
            seed=2,
        ),
        {"small": {"input_per_million_usd": "0.15", "output_per_million_usd": "0.6"},
         "large": {"input_per_million_usd": "2.5", "output_per_million_usd": "10"}},
    ),
    "degenerate": (
        SynthConfig(
            small_accuracy=0.895,
            large_accuracy=0.925,
            confidence_profile=ConfidenceProfile(kind="degenerate", n_distinct=3, ceiling_mean=0.993, target_auroc=0.68),
            difficulty_sensitivity=4.0,
            seed=1,
        ),
        {"small": {"input_per_million_usd": "0.1", "output_per_million_usd": "0.4"},
         "large": {"input_per_million_usd": "2", "output_per_million_usd": "12"}},
    ),
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/families")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--resamples", type=int, default=10_000)
    args = parser.parse_args(argv)

    out = Path(args.out)
    data = out / "data"
    data.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, (config, _) in FAMILIES.items():
        path = data / f"{name}.jsonl"
        save_decisions(generate_synthetic(config), path)
        paths.append(path)
    pricing = out / "pricing.json"
    pricing.write_text(json.dumps({name: p for name, (_, p) in FAMILIES.items()}, indent=2))

    report = run_full_report(paths, pricing, ReportConfig(seed=args.seed, resamples=args.resamples), out / "report")
    for table in sorted(report.tables.values(), key=lambda t: t.number):
        print(f"{table.name:<32} {'ok' if table.ok else 'ERROR'}")
    print(f"report written to {out / 'report'}")
    return 0 if report.ok else 1


if __name__ == "__main__":
    sys.exit(main())
