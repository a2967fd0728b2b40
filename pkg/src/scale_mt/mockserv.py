"""Scripted mock servers for the STM / LLM / scorer / aligner wire protocols.

A script maps the SHA-256 fingerprint of the canonical JSON request body to
a canned response. Anything unscripted is answered 404 with the offending
fingerprint echoed back, which makes request drift in end-to-end tests easy
to diagnose. Every server records its requests, retrievable both in-process
(``server.log``) and over HTTP (``GET /_log``).

Script file format::

    {"entries": [
        {"request": {...},            # body to match (hashed at load), or
         "fingerprint": "hex...",     # a precomputed fingerprint
         "status": 200,               # optional, default 200
         "delay_ms": 0,               # optional artificial latency
         "response": {...}}           # JSON body to return
    ]}
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any

from .core import ScaleError
from .http_util import fingerprint

KIND_PATHS = {
    "stm": ("/translate",),
    "llm": ("/chat",),
    "scorer": ("/score", "/logprobs"),
    "aligner": ("/align",),
}


class PortInUse(ScaleError):
    """Requested port is already bound."""


@dataclass
class ScriptEntry:
    response: dict[str, Any]
    status: int = 200
    delay_ms: float = 0.0


@dataclass
class LoggedRequest:
    path: str
    body: dict[str, Any]
    fingerprint: str

    def to_dict(self) -> dict[str, Any]:
        return {"path": self.path, "body": self.body, "fingerprint": self.fingerprint}


def make_script(
    entries: list[tuple[dict[str, Any], dict[str, Any]]] | None = None,
) -> dict[str, ScriptEntry]:
    """Build an in-memory script from (request_body, response_body) pairs."""
    script: dict[str, ScriptEntry] = {}
    for body, response in entries or []:
        script[fingerprint(body)] = ScriptEntry(response=response)
    return script


def load_script(path: str) -> dict[str, ScriptEntry]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    script: dict[str, ScriptEntry] = {}
    for entry in data.get("entries", []):
        if "fingerprint" in entry:
            key = entry["fingerprint"]
        else:
            key = fingerprint(entry["request"])
        script[key] = ScriptEntry(
            response=entry["response"],
            status=int(entry.get("status", 200)),
            delay_ms=float(entry.get("delay_ms", 0.0)),
        )
    return script


def dump_script(entries: list[dict[str, Any]], path: str) -> None:
    """Write a script file from raw entry dicts (see module docstring)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"entries": entries}, fh, ensure_ascii=False, indent=2)


class MockServer:
    """A scripted wire-protocol server for one endpoint kind."""

    def __init__(
        self,
        kind: str,
        script: dict[str, ScriptEntry],
        host: str = "127.0.0.1",
        port: int = 0,
    ):
        if kind not in KIND_PATHS:
            raise ValueError(f"kind must be one of {sorted(KIND_PATHS)}, got {kind!r}")
        self.kind = kind
        self.script = dict(script)
        self.log: list[LoggedRequest] = []
        self._log_lock = threading.Lock()
        paths = KIND_PATHS[kind]
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # silence stderr chatter
                pass

            def _send(self, status: int, payload: dict[str, Any]) -> None:
                body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self):
                if self.path == "/_log":
                    with outer._log_lock:
                        entries = [r.to_dict() for r in outer.log]
                    self._send(200, {"entries": entries})
                else:
                    self._send(404, {"error": f"unknown path {self.path}"})

            def do_POST(self):
                if self.path not in paths:
                    self._send(404, {"error": f"unknown path {self.path}"})
                    return
                length = int(self.headers.get("Content-Length", "0"))
                raw = self.rfile.read(length)
                try:
                    body = json.loads(raw.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError):
                    self._send(400, {"error": "request body is not valid JSON"})
                    return
                fp = fingerprint(body)
                with outer._log_lock:
                    outer.log.append(LoggedRequest(self.path, body, fp))
                entry = outer.script.get(fp)
                if entry is None:
                    self._send(404, {"error": "unscripted request", "fingerprint": fp})
                    return
                if entry.delay_ms > 0:
                    time.sleep(entry.delay_ms / 1000.0)
                self._send(entry.status, entry.response)

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

    def start(self) -> "MockServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)

    def request_count(self) -> int:
        with self._log_lock:
            return len(self.log)

    def clear_log(self) -> None:
        with self._log_lock:
            self.log.clear()

    def __enter__(self) -> "MockServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def serve_mock(kind: str, script_file: str, port: int, host: str = "127.0.0.1") -> MockServer:
    """Load a script file and start serving it; returns the running server."""
    return MockServer(kind, load_script(script_file), host=host, port=port).start()
