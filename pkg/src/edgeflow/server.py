"""Live-mode engine: wall-clock environment workers plus the HTTP surface
(POST /ingest/{source_id}, GET /status)."""

from __future__ import annotations

import threading
import time
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .errors import TranslateError, UnknownSource
from .ingest import MqttReceiver
from .pipeline import Pipelines
from .types import EngineConfig


class Engine:
    """Owns the pipelines and one worker thread per environment."""

    def __init__(self, config: EngineConfig, out_dir: str | Path = "run_out",
                 poll_interval_s: float = 0.05):
        self.config = config
        self.pipelines = Pipelines(config, out_dir, fresh_sinks=False)
        self.metrics = self.pipelines.metrics
        self.router = self.pipelines.router
        self.poll_interval_s = poll_interval_s
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self.receivers: list[MqttReceiver] = []
        for source in config.sources:
            if source.kind == "mqtt":
                self.receivers.append(MqttReceiver(source, self.router, self.metrics))
            else:
                self.metrics.set_source_status(source.source_id, "ready")

    def start(self) -> None:
        now = time.time_ns()
        self.pipelines.start(default_ns=now)
        for env_id, runtime in self.pipelines.runtimes.items():
            thread = threading.Thread(target=self._env_loop, args=(runtime,),
                                      daemon=True, name=f"env-{env_id}")
            thread.start()
            self._threads.append(thread)
        for receiver in self.receivers:
            receiver.start()

    def stop(self) -> None:
        self._stop.set()
        for receiver in self.receivers:
            receiver.stop()
        for thread in self._threads:
            thread.join(timeout=5)
        self.pipelines.flush_all()
        self.pipelines.write_metrics()
        self.pipelines.close()

    def _env_loop(self, runtime) -> None:
        while not self._stop.is_set():
            runtime.poll(self.poll_interval_s)
            runtime.advance_to(time.time_ns())


def create_app(engine: Engine) -> FastAPI:
    app = FastAPI(title="edgeflow engine", docs_url=None, redoc_url=None)

    @app.post("/ingest/{source_id}")
    async def ingest(source_id: str, request: Request) -> JSONResponse:
        body = await request.body()
        try:
            outcomes = engine.router.ingest(source_id, body, time.time_ns(),
                                            protocol="http")
        except UnknownSource:
            return JSONResponse({"error": "UnknownSource",
                                 "detail": f"no source {source_id!r}"}, status_code=404)
        except TranslateError as e:
            return JSONResponse({"error": type(e).__name__, "detail": str(e)},
                                status_code=400)
        if outcomes and all(not accepted for _, accepted in outcomes):
            return JSONResponse({"error": "QueuesFull",
                                 "detail": "every subscribed queue dropped the item"},
                                status_code=503)
        return JSONResponse({"status": "accepted"}, status_code=202)

    @app.get("/status")
    def status() -> JSONResponse:
        return JSONResponse(engine.metrics.snapshot())

    return app
