"""End-to-end analysis report: every table from one or more family decision files.

Each decision file holds one model family (a small and a large model scored on
the same decisions). Output layout, one directory per run::

    report.json              all tables, parameters and seeds
    tableNN_<name>.csv       one file per table
    fig_<name>.csv           plot-ready series

A table that cannot be computed for a family gets an ``error`` row for that
family; the rest of the report is still produced.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import cascade, statskit, uncertainty
from .dataset import Agreement, DecisionSet, load_decisions

TABLE_NAMES = {
    2: "table02_human_agreement",
    3: "table03_agreement_distribution",
    4: "table04_accuracy",
    5: "table05_discrimination",
    6: "table06_agreement_gap",
    7: "table07_time_correlation",
    8: "table08_cost",
    9: "table09_operating_point",
    10: "table10_kappa_difference",
    11: "table11_separation",
    12: "table12_lift",
    13: "table13_latency",
    14: "table14_calibration",
    15: "table15_stratified_calibration",
    16: "table16_cross_validation",
}


@dataclass(frozen=True)
class ReportConfig:
    seed: int = 42
    resamples: int = statskit.DEFAULT_RESAMPLES
    delta: float = cascade.DEFAULT_DELTA
    n_bins: int = statskit.DEFAULT_BINS
    cv_folds: int = 5
    cap_percentile: float = 0.95
    p_test: str = "welch"
    taus: tuple[float, ...] = cascade.DEFAULT_TAUS
    tables: tuple[int, ...] | None = None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["taus"] = [self.taus[0], self.taus[-1], len(self.taus)]
        return out


@dataclass
class TableResult:
    number: int
    name: str
    rows: list[dict] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)
    params: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.errors


@dataclass
class AnalysisReport:
    config: ReportConfig
    families: dict[str, dict]
    tables: dict[int, TableResult]
    figures: dict[str, list[dict]]

    @property
    def ok(self) -> bool:
        return all(t.ok for t in self.tables.values())

    def to_json(self) -> str:
        obj = {
            "config": self.config.to_dict(),
            "families": self.families,
            "tables": {
                t.name: {
                    "status": "ok" if t.ok else "error",
                    "params": t.params,
                    "rows": t.rows,
                    "errors": t.errors,
                }
                for t in self.tables.values()
            },
            "figures": sorted(self.figures),
        }
        return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Decimal):
        return cascade.usd(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


# -- small-model descriptive statistics --------------------------------------------


def distinct_confidence_stats(dset: DecisionSet) -> tuple[int, float]:
    """Number of distinct normalized confidences and their population variance."""
    conf = np.array([d.small.confidence for d in dset], dtype=float)
    if np.isnan(conf).any():
        raise ValueError("small-model confidence missing")
    return int(np.unique(conf).size), float(conf.var())


def _correctness(dset: DecisionSet) -> tuple[np.ndarray, np.ndarray]:
    conf = np.array([d.small.confidence for d in dset], dtype=float)
    if np.isnan(conf).any():
        raise ValueError("small-model confidence missing")
    correct = np.array([d.small.predicted_label == d.majority for d in dset], dtype=np.int64)
    return conf, correct


@dataclass(frozen=True)
class StratumCalibration:
    subset: str
    n: int
    auroc: float | None
    ece: float | None
    error: str | None = None


def stratified_calibration(dset: DecisionSet, n_bins: int = statskit.DEFAULT_BINS) -> dict[str, StratumCalibration]:
    """AUROC and ECE within the unanimous and split strata."""
    conf, correct = _correctness(dset)
    split = np.array([d.agreement is Agreement.SPLIT for d in dset])
    out = {}
    for name, mask in (("unanimous", ~split), ("split", split)):
        n = int(mask.sum())
        if n == 0:
            out[name] = StratumCalibration(name, 0, None, None, "empty stratum")
            continue
        try:
            auc = statskit.auroc(conf[mask], correct[mask])
        except statskit.UndefinedStatistic as exc:
            out[name] = StratumCalibration(name, n, None, statskit.ece(conf[mask], correct[mask], n_bins), f"undefined: {exc}")
            continue
        out[name] = StratumCalibration(name, n, auc, statskit.ece(conf[mask], correct[mask], n_bins))
    return out


# -- per-family context ---------------------------------------------------------------


class _Family:
    def __init__(self, name: str, dset: DecisionSet, pricing: cascade.PricingTable | None, config: ReportConfig):
        self.name = name
        self.dset = dset
        self.pricing = pricing
        self.config = config
        self._cache: dict[str, Any] = {}

    def _memo(self, key: str, fn: Callable[[], Any]):
        if key not in self._cache:
            try:
                self._cache[key] = (True, fn())
            except Exception as exc:  # noqa: BLE001 - stored and re-raised per table
                self._cache[key] = (False, exc)
        ok, value = self._cache[key]
        if not ok:
            raise value
        return value

    def seed(self, table: str, *parts: str) -> int:
        return statskit.substream_seed(self.config.seed, "/".join((table, self.name) + parts))

    def data(self) -> cascade.CascadeData:
        def build():
            if self.pricing is None:
                raise cascade.CascadeError(f"no pricing for family {self.name!r}")
            return cascade.CascadeData(self.dset, self.pricing)

        return self._memo("data", build)

    def sweep(self) -> list[cascade.CascadePoint]:
        return self._memo("sweep", lambda: [self.data().point(t) for t in self.config.taus])

    def operating_point(self) -> cascade.OperatingPoint:
        def build():
            frontier = cascade.pareto_filter(self.sweep())
            return cascade.select_operating_point(frontier, self.data().large_kappa(), self.config.delta)

        return self._memo("op", build)

    def difficulty(self) -> uncertainty.DifficultyScores:
        return self._memo(
            "difficulty", lambda: uncertainty.response_time_difficulty(self.dset, self.config.cap_percentile)
        )

    def prepare(self) -> None:
        for fn in (self.operating_point, self.difficulty):
            try:
                fn()
            except Exception:  # noqa: BLE001 - surfaced by the tables that need it
                pass


def _kappa_ci(pred, gold, resamples, seed) -> statskit.CiEstimate:
    table = np.column_stack([gold, pred])
    return statskit.bootstrap_ci(
        table, lambda s: statskit.cohen_kappa(s[:, 1], s[:, 0]), resamples=resamples, seed=seed
    )


# -- table builders: each returns rows for one family -----------------------------------


def _t02(f: _Family) -> list[dict]:
    rows = []
    by_criterion: dict[tuple[str, str], list] = {}
    for d in f.dset:
        by_criterion.setdefault((d.item_id, d.criterion_id), []).append(d.annotator_votes)
    for (item, crit), votes in sorted(by_criterion.items()):
        counts = np.array([[3 - sum(v), sum(v)] for v in votes])
        row = {"family": f.name, "item_id": item, "criterion_id": crit, "n": len(votes)}
        try:
            row["fleiss_kappa"] = statskit.fleiss_kappa(counts)
        except statskit.UndefinedStatistic as exc:
            row["fleiss_kappa"] = None
            row["note"] = str(exc)
        rows.append(row)
    return rows


def _t03(f: _Family) -> list[dict]:
    proxy = uncertainty.proxy_correlation(f.dset, f.difficulty())
    return [
        {
            "family": f.name,
            "n": proxy.n,
            "n_unanimous": proxy.n - proxy.n_split,
            "n_split": proxy.n_split,
            "split_fraction": proxy.split_fraction,
            "proxy_pearson_r": proxy.pearson_r,
            "proxy_pearson_p": proxy.pearson_p,
            "split_vs_unanimous_time_d": proxy.cohens_d,
            "split_vs_unanimous_time_p": proxy.cohens_d_p,
        }
    ]


class _Partial(Exception):
    """Some rows were computed before a failure."""

    def __init__(self, rows: list[dict], cause: Exception):
        super().__init__(f"{type(cause).__name__}: {cause}")
        self.rows = rows


def _t04(f: _Family) -> list[dict]:
    gold = np.array([d.majority for d in f.dset])
    rows = []
    for role in ("small", "large"):
        if role == "large" and not f.dset.has_large:
            raise _Partial(rows, cascade.CascadeError("large-model output missing"))
        pred = np.array([getattr(d, role).predicted_label for d in f.dset])
        seed = f.seed("table04", role)
        ci = _kappa_ci(pred, gold, f.config.resamples, seed)
        rows.append(
            {
                "family": f.name,
                "tier": role,
                "accuracy": float(np.mean(pred == gold)),
                "kappa": ci.point,
                "ci_lo": ci.lo,
                "ci_hi": ci.hi,
                "resamples": ci.resamples,
                "seed": seed,
            }
        )
    return rows


def _t05(f: _Family) -> list[dict]:
    conf, correct = _correctness(f.dset)
    distinct, variance = distinct_confidence_stats(f.dset)
    return [
        {
            "family": f.name,
            "auroc": statskit.auroc(conf, correct),
            "distinct_values": distinct,
            "variance": variance,
            "mean_confidence": float(conf.mean()),
        }
    ]


def _t06(f: _Family) -> list[dict]:
    g = uncertainty.confidence_by_agreement(f.dset, f.config.p_test)
    return [
        {
            "family": f.name,
            "mean_unanimous": g.mean_unanimous,
            "mean_split": g.mean_split,
            "gap": g.gap,
            "cohens_d": g.d,
            "p": g.p,
            "test": g.test,
            "n_unanimous": g.n_unanimous,
            "n_split": g.n_split,
        }
    ]


def _t07(f: _Family) -> list[dict]:
    c = uncertainty.confidence_time_correlation(f.dset, f.difficulty())
    return [{"family": f.name, "spearman_rho": c.rho, "p": c.p, "n": c.n}]


def _t08(f: _Family) -> list[dict]:
    data = f.data()
    rows = []
    for role in ("small", "large"):
        s = data.strategy(role)
        rows.append(
            {
                "family": f.name,
                "tier": role,
                "cost_per_decision_usd": s.cost_per_decision_usd,
                "cost_per_1k_usd": s.cost_per_decision_usd * 1000,
            }
        )
    return rows


def _t09(f: _Family) -> list[dict]:
    op = f.operating_point()
    data = f.data()
    p = op.point
    final = np.where(data.escalated(p.tau), data.large_pred, data.small_pred)
    seed = f.seed("table09")
    ci = _kappa_ci(final, data.gold, f.config.resamples, seed)
    large = data.strategy("large")
    return [
        {
            "family": f.name,
            "tau": p.tau,
            "kappa": p.kappa,
            "ci_lo": ci.lo,
            "ci_hi": ci.hi,
            "escalation_rate": p.escalation_rate,
            "n_escalated": p.n_escalated,
            "rule_fired": op.rule_fired,
            "delta": op.delta,
            "large_kappa": op.large_kappa,
            "cost_per_decision_usd": p.cost_per_decision_usd,
            "cost_reduction_vs_large": float(1 - p.cost_per_decision_usd / large.cost_per_decision_usd)
            if large.cost_per_decision_usd
            else None,
            "median_latency_reduction_vs_large": 1 - p.latency_median_ms / large.latency.median_ms
            if large.latency.median_ms
            else None,
            "frontier_size": len(op.frontier),
            "resamples": ci.resamples,
            "seed": seed,
        }
    ]


def _t10(f: _Family) -> list[dict]:
    tau = f.operating_point().point.tau
    seed = f.seed("table10")
    ci = cascade.kappa_diff_ci(f.dset, tau, f.config.resamples, seed)
    return [
        {
            "family": f.name,
            "tau": tau,
            "kappa_difference": ci.point,
            "ci_lo": ci.lo,
            "ci_hi": ci.hi,
            "resamples": ci.resamples,
            "discarded": ci.discarded,
            "seed": seed,
        }
    ]


def _lift(f: _Family) -> cascade.LiftTable:
    return f._memo("lift", lambda: cascade.escalation_lift(f.dset, f.operating_point().point.tau))


def _t11(f: _Family) -> list[dict]:
    lt = _lift(f)
    return [
        {
            "family": f.name,
            "tau": lt.tau,
            "n_kept": lt.n_kept,
            "kappa_kept": lt.small_kappa_kept,
            "kappa_escalated": lt.small_kappa_escalated,
            "separation": lt.separation,
        }
    ]


def _t12(f: _Family) -> list[dict]:
    lt = _lift(f)
    return [
        {
            "family": f.name,
            "tau": lt.tau,
            "n_escalated": lt.n_escalated,
            "small_kappa_escalated": lt.small_kappa_escalated,
            "large_kappa_escalated": lt.large_kappa_escalated,
            "lift": lt.lift,
        }
    ]


def _t13(f: _Family) -> list[dict]:
    tau = f.operating_point().point.tau
    prof = cascade.latency_profile(f.dset, tau)
    return [
        {"family": f.name, "strategy": k, "tau": tau, "median_ms": v.median_ms, "p95_ms": v.p95_ms}
        for k, v in (("always_large", prof["always_large"]), ("always_small", prof["always_small"]), ("cascade", prof["cascade"]))
    ]


def _t14(f: _Family) -> list[dict]:
    conf, correct = _correctness(f.dset)
    return [
        {
            "family": f.name,
            "ece": statskit.ece(conf, correct, f.config.n_bins),
            "nce": statskit.nce(conf, correct),
            "n_bins": f.config.n_bins,
        }
    ]


def _t15(f: _Family) -> list[dict]:
    cells = stratified_calibration(f.dset, f.config.n_bins)
    return [{"family": f.name, **asdict(c)} for c in cells.values()]


def _t16(f: _Family) -> list[dict]:
    seed = f.seed("table16")
    cv = cascade.cross_validate_selection(
        f.dset, f.pricing, f.config.cv_folds, seed, f.config.delta, f.config.taus
    )
    return [
        {
            "family": f.name,
            "in_sample_tau": cv.in_sample_tau,
            "in_sample_kappa": cv.in_sample_kappa,
            "cv_kappa_mean": cv.mean_kappa,
            "cv_kappa_sd": cv.sd_kappa,
            "optimism": cv.optimism,
            "tau_sd": cv.tau_sd,
            "fold_taus": " ".join(f"{fold.tau:.2f}" for fold in cv.folds),
            "fold_kappas": " ".join(f"{fold.heldout_kappa:.6f}" for fold in cv.folds),
            "k": len(cv.folds),
            "stratify_on": cv.stratify_on,
            "seed": seed,
        }
    ]


BUILDERS: dict[int, tuple[Callable[[_Family], list[dict]], str]] = {
    2: (_t02, "statskit.fleiss_kappa per criterion"),
    3: (_t03, "uncertainty.proxy_correlation"),
    4: (_t04, "statskit.cohen_kappa + bootstrap_ci"),
    5: (_t05, "statskit.auroc + distinct_confidence_stats"),
    6: (_t06, "uncertainty.confidence_by_agreement"),
    7: (_t07, "uncertainty.confidence_time_correlation"),
    8: (_t08, "cascade.cost_per_decision"),
    9: (_t09, "cascade.sweep + pareto_filter + select_operating_point"),
    10: (_t10, "cascade.kappa_diff_ci"),
    11: (_t11, "cascade.escalation_lift"),
    12: (_t12, "cascade.escalation_lift"),
    13: (_t13, "cascade.latency_profile"),
    14: (_t14, "statskit.ece + statskit.nce"),
    15: (_t15, "stratified_calibration"),
    16: (_t16, "cascade.cross_validate_selection"),
}


# -- figures ------------------------------------------------------------------------


def _figures(families: Sequence[_Family], config: ReportConfig) -> dict[str, list[dict]]:
    sweep_rows, bins_rows, hist_rows, strategy_rows, latency_rows = [], [], [], [], []
    for f in families:
        try:
            op = f.operating_point()
            for p in f.sweep():
                row = {"family": f.name, **p.to_dict(), "operating_point": p.tau == op.point.tau}
                sweep_rows.append(row)
            data = f.data()
            for role in ("small", "large"):
                s = data.strategy(role)
                strategy_rows.append(
                    {"family": f.name, "strategy": s.strategy, "kappa": s.kappa,
                     "cost_per_decision_usd": s.cost_per_decision_usd}
                )
            strategy_rows.append(
                {"family": f.name, "strategy": "cascade", "kappa": op.point.kappa,
                 "cost_per_decision_usd": op.point.cost_per_decision_usd}
            )
            casc = cascade.cascade_latencies(f.dset, op.point.tau)
            for d, lat_c in zip(f.dset, casc):
                latency_rows.append(
                    {"family": f.name, "decision_id": d.decision_id,
                     "always_large_ms": d.large.latency_ms, "cascade_ms": float(lat_c)}
                )
        except Exception:  # noqa: BLE001 - the cascade tables carry the error
            pass
        try:
            conf, correct = _correctness(f.dset)
        except ValueError:
            continue
        for b in statskit.reliability_bins(conf, correct, config.n_bins).bins:
            bins_rows.append({"family": f.name, **asdict(b)})
        values, idx = np.unique(conf, return_inverse=True)
        for i, v in enumerate(values):
            m = idx == i
            hist_rows.append(
                {"family": f.name, "confidence": float(v), "n_correct": int(correct[m].sum()),
                 "n_incorrect": int((1 - correct[m]).sum())}
            )
    return {
        "fig_sweep_curve": sweep_rows,
        "fig_reliability_bins": bins_rows,
        "fig_confidence_histogram": hist_rows,
        "fig_cost_accuracy": strategy_rows,
        "fig_latency_samples": latency_rows,
    }


# -- orchestration --------------------------------------------------------------------


def _build_table(number: int, families: Sequence[_Family], config: ReportConfig) -> TableResult:
    fn, operation = BUILDERS[number]
    result = TableResult(number, TABLE_NAMES[number], params={"operation": operation})
    for f in families:
        try:
            result.rows.extend(fn(f))
        except _Partial as exc:
            result.rows.extend(exc.rows)
            result.errors.append({"family": f.name, "error": str(exc)})
        except Exception as exc:  # noqa: BLE001 - error-tag the table, keep going
            result.errors.append({"family": f.name, "error": f"{type(exc).__name__}: {exc}"})
    return result


def _family_names(paths: Sequence[Path]) -> list[str]:
    names = []
    for p in paths:
        name = p.stem
        k = 2
        while name in names:
            name = f"{p.stem}_{k}"
            k += 1
        names.append(name)
    return names


def _load_pricing(pricing_path, name):
    if pricing_path is None:
        return None
    return cascade.load_pricing(pricing_path, name)


def build_report(
    families: dict[str, DecisionSet],
    pricing: dict[str, cascade.PricingTable | None],
    config: ReportConfig = ReportConfig(),
    sources: dict[str, str] | None = None,
) -> AnalysisReport:
    fams = [_Family(name, dset, pricing.get(name), config) for name, dset in families.items()]
    # shared intermediates first, so concurrent tables only read them
    for f in fams:
        f.prepare()
        if f.dset.has_large:
            try:
                _lift(f)
            except Exception:  # noqa: BLE001
                pass
    numbers = sorted(config.tables) if config.tables else sorted(BUILDERS)
    unknown = [n for n in numbers if n not in BUILDERS]
    if unknown:
        raise ValueError(f"unknown tables: {unknown}; available: {sorted(BUILDERS)}")
    with ThreadPoolExecutor() as pool:
        results = list(pool.map(lambda n: _build_table(n, fams, config), numbers))
    meta = {
        f.name: {
            "source": (sources or {}).get(f.name, f.dset.provenance),
            "provenance": f.dset.provenance,
            "n": len(f.dset),
            "has_large": f.dset.has_large,
            "pricing": None if f.pricing is None else f.pricing.to_dict(),
        }
        for f in fams
    }
    return AnalysisReport(config, meta, {r.number: r for r in results}, _figures(fams, config))


def _csv_text(rows: list[dict]) -> str:
    columns: list[str] = []
    for row in rows:
        for k in row:
            if k not in columns:
                columns.append(k)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _csv_cell(v) for k, v in row.items()})
    return buf.getvalue()


def _csv_cell(v):
    if isinstance(v, Decimal):
        return cascade.usd(v)
    if v is None:
        return ""
    return v


def write_report(report: AnalysisReport, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for t in report.tables.values():
        rows = t.rows + [{**e} for e in t.errors]
        path = out / f"{t.name}.csv"
        path.write_text(_csv_text(rows), encoding="utf-8")
        written.append(path)
    for name, rows in report.figures.items():
        path = out / f"{name}.csv"
        path.write_text(_csv_text(rows), encoding="utf-8")
        written.append(path)
    path = out / "report.json"
    path.write_text(report.to_json(), encoding="utf-8")
    written.append(path)
    return written


def run_full_report(
    decisions_paths: str | Path | Sequence[str | Path],
    pricing_path: str | Path | None,
    config: ReportConfig = ReportConfig(),
    out_dir: str | Path | None = None,
) -> AnalysisReport:
    """Load each family file, compute every requested table, and optionally write the run directory."""
    if isinstance(decisions_paths, (str, Path)):
        decisions_paths = [decisions_paths]
    paths = [Path(p) for p in decisions_paths]
    names = _family_names(paths)
    families = {}
    pricing = {}
    for name, path in zip(names, paths):
        families[name] = load_decisions(path)
        try:
            pricing[name] = _load_pricing(pricing_path, name)
        except cascade.CascadeError:
            pricing[name] = None
    report = build_report(families, pricing, config, {n: str(p) for n, p in zip(names, paths)})
    if out_dir is not None:
        write_report(report, out_dir)
    return report
