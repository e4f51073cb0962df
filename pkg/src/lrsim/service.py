"""Streaming simulation service: one WebSocket session per connection,
JSON text frames, plus a health endpoint and optional static hosting for
the browser cockpit.
"""

from __future__ import annotations

import asyncio
import base64
import os
from typing import Literal, Optional, Union

import anyio.to_thread
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from pydantic import BaseModel, Field, TypeAdapter, ValidationError

from .errors import ConfigError, InputError, LrsimError, NumericalError
from .sim import ActionCommand, SimulatorEngine


class ResetRequest(BaseModel):
    type: Literal["reset"]
    warmup: int = 5
    seed_episode: Optional[str] = None
    rng_seed: int = 0


class ActionRequest(BaseModel):
    type: Literal["action"]
    steer_deg: float
    speed_mps: float


ClientMessage = TypeAdapter(Union[ResetRequest, ActionRequest])


class ReadyResponse(BaseModel):
    type: Literal["ready"] = "ready"
    t: int
    width: int
    height: int
    latent_dim: int
    band: list[float]
    rate_hz: float
    steer_range: list[float] = Field(default_factory=lambda: list(ActionCommand.STEER_RANGE))
    speed_range: list[float] = Field(default_factory=lambda: list(ActionCommand.SPEED_RANGE))


class FrameResponse(BaseModel):
    type: Literal["frame"] = "frame"
    t: int
    width: int
    height: int
    rgb_b64: str
    latent_norm: float
    in_band: bool


class ErrorResponse(BaseModel):
    type: Literal["error"] = "error"
    message: str


class HealthResponse(BaseModel):
    status: str
    width: int
    height: int
    latent_dim: int
    hidden_dim: int
    rate_hz: float
    band: list[float]


def _resolve_episode(path: str, root: str) -> str:
    """Episodes are served from the configured root only."""
    full = os.path.realpath(os.path.join(root, path))
    if not full.startswith(os.path.realpath(root) + os.sep) and full != os.path.realpath(root):
        raise InputError(f"episode path {path!r} escapes the episode root")
    if not os.path.exists(full):
        raise InputError(f"seed episode not found: {path}")
    return full


def create_app(engine: SimulatorEngine, static_dir: str | None = None,
               episode_root: str | None = None, default_episode: str | None = None) -> FastAPI:
    app = FastAPI(title="lrsim", version="0.1.0")
    root = os.path.abspath(episode_root or os.getcwd())

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", width=engine.ae.width, height=engine.ae.height,
                              latent_dim=engine.ae.latent_dim, hidden_dim=engine.rnn.hidden,
                              rate_hz=engine.rate_hz, band=list(engine.band))

    @app.websocket("/session")
    async def session_socket(ws: WebSocket):
        await ws.accept()
        session = None

        async def send(model: BaseModel):
            await ws.send_text(model.model_dump_json())

        try:
            while True:
                raw = await ws.receive_text()
                try:
                    msg = ClientMessage.validate_json(raw)
                except ValidationError as e:
                    await send(ErrorResponse(message=f"malformed message: {e.errors()[0].get('msg', 'invalid')}"))
                    continue

                if isinstance(msg, ResetRequest):
                    try:
                        seed = None
                        if msg.warmup > 0:
                            rel = msg.seed_episode or default_episode
                            if rel is None:
                                raise InputError("reset needs seed_episode when warmup > 0")
                            seed = _resolve_episode(rel, root)
                        session = await anyio.to_thread.run_sync(
                            engine.new_session, seed, msg.warmup, msg.rng_seed)
                        await send(ReadyResponse(t=session.t, width=engine.ae.width,
                                                 height=engine.ae.height,
                                                 latent_dim=engine.ae.latent_dim,
                                                 band=list(engine.band), rate_hz=engine.rate_hz))
                    except (InputError, ConfigError) as e:
                        await send(ErrorResponse(message=str(e)))
                else:
                    if session is None:
                        await send(ErrorResponse(message="no session: send a reset first"))
                        continue
                    try:
                        frame = await anyio.to_thread.run_sync(
                            engine.step, session, ActionCommand(msg.steer_deg, msg.speed_mps))
                        await send(FrameResponse(t=frame.t, width=frame.width, height=frame.height,
                                                 rgb_b64=base64.b64encode(frame.rgb).decode("ascii"),
                                                 latent_norm=frame.latent_norm, in_band=frame.in_band))
                    except NumericalError as e:
                        await send(ErrorResponse(message=f"session failed: {e}"))
                    except (InputError, LrsimError) as e:
                        await send(ErrorResponse(message=str(e)))
        except WebSocketDisconnect:
            pass
        except asyncio.CancelledError:
            try:
                await send(ErrorResponse(message="server shutting down"))
                await ws.close()
            except Exception:
                pass
            raise

    if static_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
