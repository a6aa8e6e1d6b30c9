"""Command-line entry point: ``cascadekit <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import cascade, uncertainty
from .cascade import UNIT_PRICING, load_pricing
from .dataset import DatasetError, load_decisions, save_decisions
from .synth import SynthConfig, generate_synthetic


def _pricing(path: str | None, dset_path: str, default=None):
    if path is None:
        if default is None:
            raise SystemExit("error: --pricing is required")
        return default
    return load_pricing(path, Path(dset_path).stem)


def _emit_csv(rows: list[dict], out: str | None) -> None:
    fh = open(out, "w", newline="", encoding="utf-8") if out else sys.stdout
    try:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if out:
            fh.close()


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


def cmd_validate(args) -> int:
    dset = load_decisions(args.path, require_confidence=False)
    split = sum(d.agreement.value == "split" for d in dset)
    _print_json(
        {
            "path": args.path,
            "n": len(dset),
            "split": split,
            "has_large": dset.has_large,
            "annotator_ids": list(dset.annotator_ids),
            "provenance": dset.provenance,
        }
    )
    return 0


def cmd_synth(args) -> int:
    config = SynthConfig.from_file(args.config) if args.config else SynthConfig()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    dset = generate_synthetic(config)
    save_decisions(dset, args.out)
    print(f"wrote {len(dset)} decisions to {args.out}", file=sys.stderr)
    return 0


def cmd_difficulty(args) -> int:
    dset = load_decisions(args.path, require_confidence=False)
    scores = uncertainty.response_time_difficulty(dset, args.cap)
    rows = [
        {"decision_id": i, "agreement": a.value, "difficulty": f"{s:.12g}"}
        for i, a, s in zip(scores.decision_ids, scores.agreement, scores.difficulty)
    ]
    _emit_csv(rows, args.out)
    return 0


def cmd_sweep(args) -> int:
    dset = load_decisions(args.path)
    points = cascade.sweep(dset, _pricing(args.pricing, args.path))
    frontier = {p.tau for p in cascade.pareto_filter(points)}
    rows = [{**p.to_dict(), "pareto": p.tau in frontier} for p in points]
    _emit_csv(rows, args.out)
    return 0


def cmd_select(args) -> int:
    dset = load_decisions(args.path)
    op = cascade.choose_operating_point(dset, _pricing(args.pricing, args.path), args.delta)
    _print_json(
        {
            "rule_fired": op.rule_fired,
            "delta": op.delta,
            "large_kappa": op.large_kappa,
            "frontier_size": len(op.frontier),
            "point": op.point.to_dict(),
        }
    )
    return 0


def cmd_cv(args) -> int:
    dset = load_decisions(args.path)
    res = cascade.cross_validate_selection(dset, _pricing(args.pricing, args.path, UNIT_PRICING), args.k, args.seed)
    _print_json(
        {
            "seed": res.seed,
            "stratify_on": res.stratify_on,
            "folds": [f.__dict__ for f in res.folds],
            "in_sample_tau": res.in_sample_tau,
            "in_sample_kappa": res.in_sample_kappa,
            "heldout_kappa_mean": res.mean_kappa,
            "heldout_kappa_sd": res.sd_kappa,
            "tau_sd": res.tau_sd,
            "optimism": res.optimism,
        }
    )
    return 0


def cmd_lift(args) -> int:
    dset = load_decisions(args.path)
    lift = cascade.escalation_lift(dset, args.tau)
    _print_json({**lift.__dict__, "separation": lift.separation, "lift": lift.lift})
    return 0


def cmd_report(args) -> int:
    from .report import ReportConfig, run_full_report

    tables = tuple(int(t) for t in args.tables.split(",")) if args.tables else None
    config = ReportConfig(seed=args.seed, resamples=args.resamples, delta=args.delta, tables=tables)
    report = run_full_report(args.paths, args.pricing, config, args.out)
    for t in sorted(report.tables.values(), key=lambda t: t.number):
        status = "ok" if t.ok else "ERROR " + "; ".join(f"{e['family']}: {e['error']}" for e in t.errors)
        print(f"{t.name}: {status}", file=sys.stderr)
    return 0 if report.ok else 1


def cmd_serve(args) -> int:
    from .router.service import serve

    serve(args.config)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cascadekit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a decision file and summarize it")
    p.add_argument("path")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("synth", help="generate a seeded synthetic decision file")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("difficulty", help="per-decision response-time difficulty")
    p.add_argument("path")
    p.add_argument("--cap", type=float, default=0.95)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_difficulty)

    p = sub.add_parser("sweep", help="cascade metrics over the threshold grid")
    p.add_argument("path")
    p.add_argument("--pricing", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("select", help="choose the operating threshold")
    p.add_argument("path")
    p.add_argument("--pricing", required=True)
    p.add_argument("--delta", type=float, default=cascade.DEFAULT_DELTA)
    p.set_defaults(fn=cmd_select)

    p = sub.add_parser("cv", help="cross-validate threshold selection")
    p.add_argument("path")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pricing")
    p.set_defaults(fn=cmd_cv)

    p = sub.add_parser("lift", help="escalation lift at a threshold")
    p.add_argument("path")
    p.add_argument("--tau", type=float, required=True)
    p.set_defaults(fn=cmd_lift)

    p = sub.add_parser("report", help="compute the full table set")
    p.add_argument("paths", nargs="+")
    p.add_argument("--pricing")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--resamples", type=int, default=10_000)
    p.add_argument("--delta", type=float, default=cascade.DEFAULT_DELTA)
    p.add_argument("--out")
    p.add_argument("--tables", help="comma-separated table numbers")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("serve", help="run the scoring gateway")
    p.add_argument("--config")
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.fn(args)
    except (DatasetError, cascade.CascadeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
