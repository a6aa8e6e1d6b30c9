"""Live scoring gateway: prompt, backends, routing and the HTTP service."""

from .backends import Backend, BackendError, BackendTimeout, Completion, MockBackend, backend_from_endpoint, static_verdict
from .gateway import (
    BackendConfig,
    Backends,
    DecisionLog,
    GatewayConfig,
    GatewayError,
    ScoreRequest,
    ScoreResponse,
    attach_labels,
    route_request,
)
from .prompt import ELICITATION, ParsedVerdict, ParseError, parse_verdict, render_prompt

__all__ = [
    "Backend",
    "BackendConfig",
    "BackendError",
    "BackendTimeout",
    "Backends",
    "Completion",
    "DecisionLog",
    "ELICITATION",
    "GatewayConfig",
    "GatewayError",
    "MockBackend",
    "ParseError",
    "ParsedVerdict",
    "ScoreRequest",
    "ScoreResponse",
    "attach_labels",
    "backend_from_endpoint",
    "parse_verdict",
    "render_prompt",
    "route_request",
    "static_verdict",
]
