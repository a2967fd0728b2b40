"""Engine-as-a-service HTTP wrapper.

Endpoints:
    POST /translate    TranslationJob JSON -> TranslationResult JSON
    POST /admin/stm    StmEndpointConfig JSON -> {"previous": <redacted cfg>}
    GET  /admin/config active engine config, secrets redacted
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any

from .core import ScaleError, job_from_dict
from .demo_store import DemoPool
from .engine import Engine
from .mockserv import PortInUse
from .stm_client import StmEndpointConfig


class EngineServer:
    def __init__(
        self,
        engine: Engine,
        pool: DemoPool | None = None,
        registry: dict[str, str] | None = None,
        host: str = "127.0.0.1",
        port: int = 0,
    ):
        from .core import load_language_registry

        self.engine = engine
        self.pool = pool
        self.registry = registry or load_language_registry()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _send(self, status: int, payload: dict[str, Any]) -> None:
                body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def _read_json(self) -> dict[str, Any] | None:
                length = int(self.headers.get("Content-Length", "0"))
                try:
                    data = json.loads(self.rfile.read(length).decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError):
                    self._send(400, {"error": "request body is not valid JSON"})
                    return None
                if not isinstance(data, dict):
                    self._send(400, {"error": "request body must be a JSON object"})
                    return None
                return data

            def do_GET(self):
                if self.path == "/admin/config":
                    self._send(200, outer.engine.snapshot().to_dict(redact_secrets=True))
                else:
                    self._send(404, {"error": f"unknown path {self.path}"})

            def do_POST(self):
                data = self._read_json()
                if data is None:
                    return
                if self.path == "/translate":
                    try:
                        job = job_from_dict(data, outer.registry)
                        result = outer.engine.translate(job, outer.pool)
                    except (ScaleError, KeyError, TypeError, ValueError) as exc:
                        self._send(400, {"error": str(exc)})
                        return
                    self._send(200, result.to_dict())
                elif self.path == "/admin/stm":
                    try:
                        new_cfg = StmEndpointConfig.from_dict(data)
                    except (KeyError, TypeError, ValueError) as exc:
                        self._send(400, {"error": str(exc)})
                        return
                    previous = outer.engine.update_stm(new_cfg)
                    self._send(200, {"previous": previous.to_dict(redact_secrets=True)})
                else:
                    self._send(404, {"error": f"unknown path {self.path}"})

        try:
            self._server = ThreadingHTTPServer((host, port), Handler)
        except OSError as exc:
            raise PortInUse(f"cannot bind {host}:{port}: {exc}") from exc
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "EngineServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def __enter__(self) -> "EngineServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
