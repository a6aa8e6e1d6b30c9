"""Decision records: data model, JSONL ingestion, ground truth and agreement categories.

A record file holds one JSON object per line. An optional first line of the
form ``{"_meta": {"annotator_ids": [...], "provenance": "..."}}`` carries
set-level fields; without it, annotators default to ``a1, a2, a3`` and the
provenance to the file name.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

N_ANNOTATORS = 3
DEFAULT_ANNOTATORS = ("a1", "a2", "a3")


class DatasetError(ValueError):
    """Raised for malformed or inconsistent decision records."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class Agreement(str, enum.Enum):
    UNANIMOUS = "unanimous"
    SPLIT = "split"


@dataclass(frozen=True)
class ModelOutput:
    predicted_label: int
    confidence: float | None = None
    latency_ms: float = 0.0
    input_tokens: int = 0
    output_tokens: int = 0

    def __post_init__(self):
        if self.predicted_label not in (0, 1):
            raise DatasetError(f"predicted_label must be binary, got {self.predicted_label!r}")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise DatasetError(f"confidence {self.confidence} outside [0, 1]")
        if not math.isfinite(self.latency_ms) or self.latency_ms < 0:
            raise DatasetError(f"latency_ms must be finite and >= 0, got {self.latency_ms}")
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise DatasetError("token counts must be >= 0")


@dataclass(frozen=True)
class ScoringDecision:
    decision_id: str
    item_id: str
    criterion_id: str
    annotator_votes: tuple[int, int, int]
    annotator_times_s: tuple[float, float, float]
    small: ModelOutput
    large: ModelOutput | None = None
    extra: dict[str, Any] | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.annotator_votes) != N_ANNOTATORS or len(self.annotator_times_s) != N_ANNOTATORS:
            raise DatasetError(
                f"decision {self.decision_id!r}: expected {N_ANNOTATORS} votes and times, "
                f"got {len(self.annotator_votes)} votes and {len(self.annotator_times_s)} times"
            )
        if any(v not in (0, 1) for v in self.annotator_votes):
            raise DatasetError(f"decision {self.decision_id!r}: votes must be binary")
        if any(not math.isfinite(t) or t < 0 for t in self.annotator_times_s):
            raise DatasetError(f"decision {self.decision_id!r}: times must be finite and >= 0")

    @property
    def majority(self) -> int:
        return majority_label(self.annotator_votes)

    @property
    def agreement(self) -> Agreement:
        return agreement_category(self.annotator_votes)


@dataclass(frozen=True)
class DecisionSet:
    decisions: tuple[ScoringDecision, ...]
    annotator_ids: tuple[str, str, str] = DEFAULT_ANNOTATORS
    provenance: str = ""

    def __post_init__(self):
        if not self.decisions:
            raise DatasetError("empty decision set")
        if len(self.annotator_ids) != N_ANNOTATORS:
            raise DatasetError(f"expected {N_ANNOTATORS} annotator ids")
        seen = set()
        for d in self.decisions:
            if d.decision_id in seen:
                raise DatasetError(f"duplicate decision_id {d.decision_id!r}")
            seen.add(d.decision_id)

    def __len__(self) -> int:
        return len(self.decisions)

    def __iter__(self):
        return iter(self.decisions)

    def subset(self, indices: Iterable[int]) -> "DecisionSet":
        return replace(self, decisions=tuple(self.decisions[i] for i in indices))

    @property
    def has_large(self) -> bool:
        return all(d.large is not None for d in self.decisions)


def majority_label(votes: Sequence[int]) -> int:
    """Label held by at least 2 of the 3 voters."""
    if len(votes) != N_ANNOTATORS:
        raise DatasetError(f"expected {N_ANNOTATORS} votes, got {len(votes)}")
    return int(sum(votes) >= 2)


def agreement_category(votes: Sequence[int]) -> Agreement:
    if len(votes) != N_ANNOTATORS:
        raise DatasetError(f"expected {N_ANNOTATORS} votes, got {len(votes)}")
    return Agreement.UNANIMOUS if len(set(votes)) == 1 else Agreement.SPLIT


def normalize_confidence(value: Any) -> float:
    """Map a raw confidence to [0, 1].

    JSON integers are read on the 0-100 elicitation scale. Reals in [0, 1] are
    taken as already normalized; reals in (1, 100] are read on the 0-100 scale.
    """
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise DatasetError(f"confidence must be numeric, got {value!r}")
    if not math.isfinite(value) or value < 0 or value > 100:
        raise DatasetError(f"confidence {value!r} outside [0, 100]")
    if isinstance(value, int) or value > 1.0:
        return value / 100
    return float(value)


def _binary(value: Any, what: str) -> int:
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, int) and value in (0, 1):
        return value
    raise DatasetError(f"{what} must be a boolean or 0/1, got {value!r}")


def _output_from_json(obj: Any, role: str, require_confidence: bool) -> ModelOutput:
    if not isinstance(obj, dict):
        raise DatasetError(f"{role} must be an object")
    if "label" not in obj:
        raise DatasetError(f"{role}.label missing")
    conf = obj.get("confidence")
    if role == "small":
        if conf is None and require_confidence:
            raise DatasetError("small.confidence missing")
        conf = None if conf is None else normalize_confidence(conf)
    else:
        conf = None
    return ModelOutput(
        predicted_label=_binary(obj["label"], f"{role}.label"),
        confidence=conf,
        latency_ms=float(obj.get("latency_ms", 0.0)),
        input_tokens=int(obj.get("input_tokens", 0)),
        output_tokens=int(obj.get("output_tokens", 0)),
    )


def decision_from_json(obj: dict, require_confidence: bool = True) -> ScoringDecision:
    try:
        decision_id = obj["decision_id"]
    except KeyError:
        raise DatasetError("decision_id missing") from None
    if not isinstance(decision_id, str):
        raise DatasetError("decision_id must be a string")
    votes = obj.get("votes")
    times = obj.get("times_s")
    if not isinstance(votes, list) or not isinstance(times, list):
        raise DatasetError(f"decision {decision_id!r}: votes and times_s must be lists")
    if len(votes) != N_ANNOTATORS or len(times) != N_ANNOTATORS:
        raise DatasetError(
            f"decision {decision_id!r}: expected {N_ANNOTATORS} votes and times, "
            f"got {len(votes)} votes and {len(times)} times"
        )
    if "small" not in obj:
        raise DatasetError(f"decision {decision_id!r}: small output missing")
    try:
        small = _output_from_json(obj["small"], "small", require_confidence)
        large = obj.get("large")
        large = None if large is None else _output_from_json(large, "large", False)
        return ScoringDecision(
            decision_id=decision_id,
            item_id=str(obj.get("item_id", "")),
            criterion_id=str(obj.get("criterion_id", "")),
            annotator_votes=tuple(_binary(v, "vote") for v in votes),
            annotator_times_s=tuple(float(t) for t in times),
            small=small,
            large=large,
            extra=obj.get("extra"),
        )
    except DatasetError as exc:
        if decision_id in str(exc):
            raise
        raise DatasetError(f"decision {decision_id!r}: {exc}") from None


def load_decisions(path: str | Path, require_confidence: bool = True) -> DecisionSet:
    """Read and validate a JSONL decision file."""
    path = Path(path)
    annotators = DEFAULT_ANNOTATORS
    provenance = path.name
    decisions = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"malformed JSON ({exc.msg})", line=lineno) from None
            if not isinstance(obj, dict):
                raise DatasetError("record must be a JSON object", line=lineno)
            if "_meta" in obj:
                meta = obj["_meta"]
                annotators = tuple(meta.get("annotator_ids", annotators))
                provenance = meta.get("provenance", provenance)
                continue
            try:
                d = decision_from_json(obj, require_confidence)
            except DatasetError as exc:
                raise DatasetError(str(exc), line=lineno) from None
            if d.decision_id in seen:
                raise DatasetError(f"duplicate decision_id {d.decision_id!r}", line=lineno)
            seen.add(d.decision_id)
            decisions.append(d)
    if not decisions:
        raise DatasetError("empty decision set")
    return DecisionSet(tuple(decisions), annotators, provenance)


def _output_to_json(out: ModelOutput, with_confidence: bool) -> dict:
    obj: dict[str, Any] = {"label": bool(out.predicted_label)}
    if with_confidence:
        obj["confidence"] = out.confidence
    obj.update(
        latency_ms=out.latency_ms,
        input_tokens=out.input_tokens,
        output_tokens=out.output_tokens,
    )
    return obj


def decision_to_json(d: ScoringDecision) -> dict:
    obj = {
        "decision_id": d.decision_id,
        "item_id": d.item_id,
        "criterion_id": d.criterion_id,
        "votes": [bool(v) for v in d.annotator_votes],
        "times_s": list(d.annotator_times_s),
        "small": _output_to_json(d.small, True),
        "large": None if d.large is None else _output_to_json(d.large, False),
    }
    if d.extra is not None:
        obj["extra"] = d.extra
    return obj


def dumps_decisions(dset: DecisionSet) -> str:
    meta = {"_meta": {"annotator_ids": list(dset.annotator_ids), "provenance": dset.provenance}}
    lines = [json.dumps(meta)]
    lines.extend(json.dumps(decision_to_json(d)) for d in dset.decisions)
    return "\n".join(lines) + "\n"


def save_decisions(dset: DecisionSet, path: str | Path) -> None:
    Path(path).write_text(dumps_decisions(dset), encoding="utf-8")
