"""HTTP front end for the scoring gateway."""

from __future__ import annotations

import logging
import socket
import threading
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .gateway import Backends, DecisionLog, GatewayConfig, GatewayError, ScoreRequest, route_request

log = logging.getLogger(__name__)


class ScoreBody(BaseModel):
    problem: str = Field(min_length=1)
    student_answer: str = Field(min_length=1)
    criterion: str = Field(min_length=1)
    conversation: str = Field(min_length=1)
    request_id: str = ""
    item_id: str = ""
    criterion_id: str = ""


class TauBody(BaseModel):
    tau: float = Field(ge=0)


@dataclass(frozen=True)
class _Snapshot:
    config: GatewayConfig
    backends: Backends


class GatewayState:
    """Holds the live config; a swap replaces the whole snapshot at once."""

    def __init__(self, config: GatewayConfig, backends: Backends | None = None):
        self._lock = threading.Lock()
        self._snap = _Snapshot(config, backends or Backends.from_config(config))
        self.log = DecisionLog(config.log_path) if config.log_path else None

    def snapshot(self) -> _Snapshot:
        with self._lock:
            return self._snap

    def set_tau(self, tau: float) -> GatewayConfig:
        with self._lock:
            self._snap = _Snapshot(self._snap.config.with_tau(tau), self._snap.backends)
            return self._snap.config


def create_app(config: GatewayConfig, backends: Backends | None = None) -> FastAPI:
    state = GatewayState(config, backends)
    app = FastAPI(title="cascadekit gateway")
    app.state.gateway = state

    # sync handlers run in the threadpool, so blocking backends do not stall the loop
    @app.post("/v1/score")
    def score(body: ScoreBody):
        snap = state.snapshot()
        request = ScoreRequest(**body.model_dump())
        try:
            response, trace = route_request(request, snap.config.tau, snap.backends, snap.config.pricing)
        except GatewayError as exc:
            raise HTTPException(status_code=502, detail={"error": str(exc), "diagnostics": exc.diagnostics})
        if state.log is not None:
            state.log.append(request, response, trace)
        return response.to_dict()

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "tau": state.snapshot().config.tau}

    @app.get("/v1/config")
    def get_config():
        return state.snapshot().config.to_dict()

    @app.put("/v1/config/tau")
    def put_tau(body: TauBody):
        cfg = state.set_tau(body.tau)
        log.info("tau set to %s", cfg.tau)
        return {"tau": cfg.tau}

    return app


def serve(config_path: str | Path | None = None) -> None:
    """Run the gateway until interrupted. Bind and log-path errors surface before serving."""
    import uvicorn

    config = GatewayConfig.from_file(config_path)
    app = create_app(config)
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((config.host, config.port))
    except OSError as exc:
        sock.close()
        raise OSError(f"cannot bind {config.host}:{config.port}: {exc}") from exc
    server = uvicorn.Server(uvicorn.Config(app, log_level="info"))
    server.run(sockets=[sock])
