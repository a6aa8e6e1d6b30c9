"""Model backends: a two-method contract plus in-tree mocks and a generic HTTP client.

A backend implements ``complete(prompt, timeout_s)`` returning the raw
completion text (or a :class:`Completion` carrying token counts) and
``describe()`` returning an identifier. Transport problems raise
:class:`BackendError`; the gateway retries those, never parse failures.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from typing import Callable, Protocol, Union
from urllib.parse import parse_qs, urlparse


class BackendError(RuntimeError):
    """Transport-level failure: connection, timeout, non-2xx status."""


class BackendTimeout(BackendError):
    pass


@dataclass(frozen=True)
class Completion:
    text: str
    input_tokens: int | None = None
    output_tokens: int | None = None


Reply = Union[str, Completion]


class Backend(Protocol):
    def complete(self, prompt: str, timeout_s: float) -> Reply: ...

    def describe(self) -> str: ...


class MockBackend:
    """Scripted backend for tests and demos.

    ``responder`` is a fixed reply or a function of the prompt. The first
    ``fail_first`` calls raise :class:`BackendError`; a ``delay_s`` longer than
    the timeout raises :class:`BackendTimeout` after waiting out the timeout.
    """

    def __init__(
        self,
        name: str,
        responder: Reply | Callable[[str], Reply],
        delay_s: float = 0.0,
        fail_first: int = 0,
    ):
        self.name = name
        self.responder = responder
        self.delay_s = delay_s
        self._failures_left = fail_first
        self._lock = threading.Lock()
        self.calls = 0

    def complete(self, prompt: str, timeout_s: float) -> Reply:
        with self._lock:
            self.calls += 1
            fail = self._failures_left > 0
            if fail:
                self._failures_left -= 1
        if fail:
            raise BackendError(f"{self.name}: scripted transport failure")
        if self.delay_s > timeout_s:
            time.sleep(timeout_s)
            raise BackendTimeout(f"{self.name}: timed out after {timeout_s:.3f}s")
        if self.delay_s:
            time.sleep(self.delay_s)
        return self.responder(prompt) if callable(self.responder) else self.responder

    def describe(self) -> str:
        return self.name


def static_verdict(is_satisfied: bool, confidence: int | None = None, reasoning: str = "mock verdict") -> str:
    obj = {"1_Reasoning": reasoning, "2_IsSatisfied": is_satisfied}
    if confidence is not None:
        obj["3_Confidence"] = confidence
    return json.dumps(obj)


class HttpBackend:
    """POSTs ``{"prompt": ..., **options}`` and reads ``text`` (and optional token counts) from the JSON reply."""

    def __init__(self, name: str, endpoint: str, options: dict | None = None, client=None):
        import httpx

        self.name = name
        self.endpoint = endpoint
        self.options = options or {}
        self._client = client or httpx.Client()
        self._httpx = httpx

    def complete(self, prompt: str, timeout_s: float) -> Reply:
        try:
            resp = self._client.post(self.endpoint, json={"prompt": prompt, **self.options}, timeout=timeout_s)
            resp.raise_for_status()
            body = resp.json()
        except self._httpx.TimeoutException as exc:
            raise BackendTimeout(f"{self.name}: {exc}") from exc
        except (self._httpx.HTTPError, ValueError) as exc:
            raise BackendError(f"{self.name}: {exc}") from exc
        if isinstance(body, str):
            return body
        return Completion(str(body.get("text", "")), body.get("input_tokens"), body.get("output_tokens"))

    def describe(self) -> str:
        return self.name


def backend_from_endpoint(name: str, endpoint: str, options: dict | None = None) -> Backend:
    """Build a backend from an endpoint locator.

    ``http(s)://...`` gives an :class:`HttpBackend`. ``mock://static?is_satisfied=true&confidence=90&delay_ms=5``
    gives a fixed-verdict mock; ``mock://fail`` always fails.
    """
    url = urlparse(endpoint)
    if url.scheme in ("http", "https"):
        return HttpBackend(name, endpoint, options)
    if url.scheme != "mock":
        raise ValueError(f"unsupported backend endpoint {endpoint!r}")
    q = {k: v[-1] for k, v in parse_qs(url.query).items()}
    if url.netloc == "fail":
        return MockBackend(name, "", fail_first=10**12)
    if url.netloc == "static":
        conf = int(q["confidence"]) if "confidence" in q else None
        reply = static_verdict(q.get("is_satisfied", "true").lower() == "true", conf)
        return MockBackend(name, reply, delay_s=float(q.get("delay_ms", 0)) / 1000)
    raise ValueError(f"unknown mock backend {url.netloc!r}")
