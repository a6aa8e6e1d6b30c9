"""Inference-time cascade: small model first, escalate below tau, log every decision."""

from __future__ import annotations

import json
import math
import os
import threading
import time
import uuid
from dataclasses import asdict, dataclass, field, replace
from decimal import Decimal
from pathlib import Path
from typing import Any

from ..cascade import MICRO, Price, PricingTable
from .backends import Backend, BackendError, Completion, backend_from_endpoint
from .prompt import ParseError, ParsedVerdict, parse_verdict, render_prompt

CONFIG_ENV = "CASCADEKIT_CONFIG"


class GatewayError(RuntimeError):
    """A request could not be scored; ``diagnostics`` holds what is known."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class ScoreRequest:
    problem: str
    student_answer: str
    criterion: str
    conversation: str
    request_id: str = ""
    item_id: str = ""
    criterion_id: str = ""

    def __post_init__(self):
        for name in ("problem", "student_answer", "criterion", "conversation"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be nonempty")
        if not self.request_id:
            object.__setattr__(self, "request_id", uuid.uuid4().hex)


@dataclass(frozen=True)
class ScoreResponse:
    request_id: str
    is_satisfied: bool
    reasoning: str
    escalated: bool
    small_confidence: float | None
    tau: float
    latency_ms: dict[str, float]
    cost_usd_estimate: float
    backend_ids: dict[str, str]
    small_status: str = "ok"
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        out = asdict(self)
        out["warnings"] = list(self.warnings)
        return out


@dataclass(frozen=True)
class BackendConfig:
    id: str
    endpoint: str
    timeout_ms: float = 30_000
    max_retries: int = 1
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.timeout_ms > 0:
            raise ValueError("timeout_ms must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    @classmethod
    def from_dict(cls, obj: dict) -> "BackendConfig":
        return cls(
            id=obj["id"],
            endpoint=obj["endpoint"],
            timeout_ms=float(obj.get("timeout_ms", 30_000)),
            max_retries=int(obj.get("max_retries", 1)),
            options=dict(obj.get("options", {})),
        )


@dataclass(frozen=True)
class GatewayConfig:
    tau: float
    small: BackendConfig
    large: BackendConfig | None = None
    delta: float = 0.02
    pricing: PricingTable = field(default_factory=PricingTable)
    log_path: str | None = None
    host: str = "127.0.0.1"
    port: int = 8080

    def __post_init__(self):
        if not math.isfinite(self.tau) or self.tau < 0:
            raise ValueError(f"tau must be finite and >= 0, got {self.tau}")

    @classmethod
    def from_dict(cls, obj: dict) -> "GatewayConfig":
        backends = obj.get("backends", {})
        if "small" not in backends:
            raise ValueError("config needs backends.small")
        return cls(
            tau=float(obj["tau"]),
            delta=float(obj.get("delta", 0.02)),
            small=BackendConfig.from_dict(backends["small"]),
            large=BackendConfig.from_dict(backends["large"]) if backends.get("large") else None,
            pricing=PricingTable.from_dict(obj.get("pricing", {})),
            log_path=obj.get("log_path"),
            host=obj.get("host", "127.0.0.1"),
            port=int(obj.get("port", 8080)),
        )

    @classmethod
    def from_file(cls, path: str | Path | None = None) -> "GatewayConfig":
        path = os.environ.get(CONFIG_ENV) or path
        if not path:
            raise ValueError(f"no config path given and {CONFIG_ENV} unset")
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_tau(self, tau: float) -> "GatewayConfig":
        return replace(self, tau=float(tau))

    def to_dict(self) -> dict:
        def b(cfg):
            return None if cfg is None else asdict(cfg)

        return {
            "tau": self.tau,
            "delta": self.delta,
            "backends": {"small": b(self.small), "large": b(self.large)},
            "pricing": self.pricing.to_dict(),
            "log_path": self.log_path,
            "host": self.host,
            "port": self.port,
        }


@dataclass
class Backends:
    small: Backend
    small_config: BackendConfig
    large: Backend | None = None
    large_config: BackendConfig | None = None

    @classmethod
    def from_config(cls, config: GatewayConfig) -> "Backends":
        small = backend_from_endpoint(config.small.id, config.small.endpoint, config.small.options)
        large = None
        if config.large is not None:
            large = backend_from_endpoint(config.large.id, config.large.endpoint, config.large.options)
        return cls(small, config.small, large, config.large)


@dataclass
class _Call:
    text: str | None
    latency_ms: float
    input_tokens: int
    output_tokens: int
    attempts: int
    error: str | None = None


def _estimate_tokens(text: str) -> int:
    # rough 4-characters-per-token estimate for backends that do not report usage
    return math.ceil(len(text) / 4)


def _call(backend: Backend, cfg: BackendConfig, prompt: str) -> _Call:
    """Call with retries on transport failure; the span covers every attempt."""
    start = time.perf_counter()
    attempts = 0
    last_error = None
    while attempts <= cfg.max_retries:
        attempts += 1
        try:
            reply = backend.complete(prompt, cfg.timeout_ms / 1000)
        except BackendError as exc:
            last_error = str(exc)
            continue
        elapsed = (time.perf_counter() - start) * 1000
        if isinstance(reply, Completion):
            text = reply.text
            in_tok = reply.input_tokens if reply.input_tokens is not None else _estimate_tokens(prompt)
            out_tok = reply.output_tokens if reply.output_tokens is not None else _estimate_tokens(text)
        else:
            text = reply
            in_tok, out_tok = _estimate_tokens(prompt), _estimate_tokens(reply)
        return _Call(text, elapsed, in_tok, out_tok, attempts)
    elapsed = (time.perf_counter() - start) * 1000
    return _Call(None, elapsed, 0, 0, attempts, last_error)


def _cost(call: _Call, price: Price | None) -> Decimal:
    if price is None:
        return Decimal(0)
    return (call.input_tokens * price.input_per_million_usd + call.output_tokens * price.output_per_million_usd) / MICRO


def route_request(
    request: ScoreRequest, tau: float, backends: Backends, pricing: PricingTable | None = None
) -> tuple[ScoreResponse, dict]:
    """Score one request through the cascade.

    Returns the response and a trace with both model outputs for the decision log.
    """
    pricing = pricing or PricingTable()
    warnings: list[str] = []
    small_call = _call(backends.small, backends.small_config, render_prompt(request, include_confidence=True))
    small_verdict: ParsedVerdict | None = None
    small_status = "ok"
    if small_call.text is None:
        small_status = "failed"
        warnings.append(f"small backend failed after {small_call.attempts} attempts: {small_call.error}")
        confidence = None
    else:
        try:
            small_verdict = parse_verdict(small_call.text, "small")
            warnings.extend(small_verdict.warnings)
            confidence = small_verdict.confidence / 100
        except ParseError as exc:
            small_status = "parse_failed"
            warnings.append(f"small response unparseable ({exc.kind}): treated as confidence 0")
            confidence = None

    # a failed or unparseable small call always escalates, even at tau 0
    escalated = confidence is None or confidence < tau
    trace: dict[str, Any] = {
        "small": {
            "status": small_status,
            "label": None if small_verdict is None else small_verdict.is_satisfied,
            "confidence": confidence,
            "latency_ms": small_call.latency_ms,
            "input_tokens": small_call.input_tokens,
            "output_tokens": small_call.output_tokens,
            "raw": small_call.text,
        },
        "large": None,
    }
    small_cost = _cost(small_call, pricing.small)
    latency = {"small": small_call.latency_ms, "total": small_call.latency_ms}
    backend_ids = {"small": backends.small.describe()}

    if not escalated:
        verdict = small_verdict
        cost = small_cost
    else:
        if backends.large is None:
            raise GatewayError(
                "escalation required but no large backend configured",
                {"small": trace["small"], "warnings": warnings},
            )
        large_call = _call(backends.large, backends.large_config, render_prompt(request, include_confidence=False))
        backend_ids["large"] = backends.large.describe()
        latency["large"] = large_call.latency_ms
        latency["total"] = small_call.latency_ms + large_call.latency_ms
        diagnostics = {"small": trace["small"], "latency_ms": latency, "warnings": warnings}
        if large_call.text is None:
            raise GatewayError(f"large backend failed after {large_call.attempts} attempts: {large_call.error}", diagnostics)
        try:
            verdict = parse_verdict(large_call.text, "large")
        except ParseError as exc:
            raise GatewayError(f"large response unparseable ({exc.kind}): {exc}", diagnostics) from exc
        warnings.extend(f"large: {w}" for w in verdict.warnings)
        trace["large"] = {
            "label": verdict.is_satisfied,
            "latency_ms": large_call.latency_ms,
            "input_tokens": large_call.input_tokens,
            "output_tokens": large_call.output_tokens,
            "raw": large_call.text,
        }
        cost = small_cost + _cost(large_call, pricing.large)

    response = ScoreResponse(
        request_id=request.request_id,
        is_satisfied=verdict.is_satisfied,
        reasoning=verdict.reasoning,
        escalated=escalated,
        small_confidence=confidence,
        tau=tau,
        latency_ms=latency,
        cost_usd_estimate=float(cost),
        backend_ids=backend_ids,
        small_status=small_status,
        warnings=tuple(warnings),
    )
    return response, trace


class DecisionLog:
    """Append-only JSONL sink in the decision-record schema, labels left empty."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        # fail fast if the path is not writable
        with self.path.open("a", encoding="utf-8"):
            pass
        self._lock = threading.Lock()

    @staticmethod
    def record(request: ScoreRequest, response: ScoreResponse, trace: dict) -> dict:
        def output(t, with_conf):
            if t is None:
                return None
            obj = {"label": t["label"]}
            if with_conf:
                obj["confidence"] = t["confidence"]
            obj.update(latency_ms=t["latency_ms"], input_tokens=t["input_tokens"], output_tokens=t["output_tokens"])
            return obj

        return {
            "decision_id": request.request_id,
            "item_id": request.item_id,
            "criterion_id": request.criterion_id,
            "votes": None,
            "times_s": None,
            "small": output(trace["small"], True),
            "large": output(trace["large"], False),
            "extra": {
                "request": asdict(request),
                "response": response.to_dict(),
                "small_status": trace["small"]["status"],
            },
        }

    def append(self, request: ScoreRequest, response: ScoreResponse, trace: dict) -> None:
        line = json.dumps(self.record(request, response, trace), sort_keys=True) + "\n"
        with self._lock:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line)


def attach_labels(log_path: str | Path, labels: dict[str, tuple[list, list]], out_path: str | Path) -> int:
    """Copy logged decisions that have labels into a loadable decision file.

    ``labels`` maps decision_id to ``(votes, times_s)``. Returns the number of records written.
    """
    written = 0
    with Path(log_path).open(encoding="utf-8") as src, Path(out_path).open("w", encoding="utf-8") as dst:
        for line in src:
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec["decision_id"] not in labels or rec["small"] is None or rec["small"]["label"] is None:
                continue
            votes, times = labels[rec["decision_id"]]
            rec["votes"], rec["times_s"] = list(votes), list(times)
            dst.write(json.dumps(rec, sort_keys=True) + "\n")
            written += 1
    return written
