"""HTTP server implementing the draft-translation wire protocol.

    POST /translate  -> ranked paths with token probabilities
    GET  /healthz    -> {"model_id": ...}

Generation is GPU/CPU-bound, so a single generation runs at a time; the
HTTP layer queues waiting requests FIFO up to a configurable depth and
answers 503 beyond it. Schema violations get 400; asking for more paths
than the beam can carry gets 422.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any

from .translator import Seq2SeqTranslator

SAMPLING_MODES = ("beam", "temperature")


@dataclass(frozen=True)
class AdapterConfig:
    model_path: str
    device: str = "cpu"
    beam_size: int = 4
    max_new_tokens: int = 64
    host: str = "127.0.0.1"
    port: int = 0
    queue_depth: int = 8

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.queue_depth < 0:
            raise ValueError("queue_depth must be >= 0")


def _validate_request(data: Any) -> str | None:
    if not isinstance(data, dict):
        return "request body must be a JSON object"
    for key, kind in (
        ("source_lang", str),
        ("target_lang", str),
        ("text", str),
        ("num_paths", int),
        ("return_token_probs", bool),
        ("sampling", str),
    ):
        if key not in data:
            return f"missing required field {key!r}"
        value = data[key]
        if kind is int:
            if not isinstance(value, int) or isinstance(value, bool):
                return f"field {key!r} must be int"
        elif not isinstance(value, kind):
            return f"field {key!r} must be {kind.__name__}"
    if "temperature" not in data:
        return "missing required field 'temperature'"
    if not data["text"]:
        return "'text' must be non-empty"
    if data["num_paths"] < 1:
        return "'num_paths' must be >= 1"
    if data["sampling"] not in SAMPLING_MODES:
        return f"'sampling' must be one of {SAMPLING_MODES}"
    temperature = data["temperature"]
    if data["sampling"] == "temperature":
        if not isinstance(temperature, (int, float)) or isinstance(temperature, bool) or temperature <= 0:
            return "'temperature' must be > 0 for temperature sampling"
    elif temperature is not None:
        return "'temperature' must be null for beam sampling"
    return None


class AdapterServer:
    def __init__(self, config: AdapterConfig, translator: Seq2SeqTranslator | None = None):
        self.config = config
        self.translator = translator or Seq2SeqTranslator(config.model_path, config.device)
        self._generate_lock = threading.Lock()
        self._waiting = 0
        self._waiting_lock = threading.Lock()
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

            def do_GET(self):
                if self.path == "/healthz":
                    self._send(200, {"model_id": outer.translator.model_id})
                else:
                    self._send(404, {"error": f"unknown path {self.path}"})

            def do_POST(self):
                if self.path != "/translate":
                    self._send(404, {"error": f"unknown path {self.path}"})
                    return
                length = int(self.headers.get("Content-Length", "0"))
                try:
                    data = json.loads(self.rfile.read(length).decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError):
                    self._send(400, {"error": "request body is not valid JSON"})
                    return
                problem = _validate_request(data)
                if problem is not None:
                    self._send(400, {"error": problem})
                    return
                if data["num_paths"] > outer.config.beam_size:
                    self._send(
                        422,
                        {
                            "error": (
                                f"num_paths {data['num_paths']} exceeds beam capacity "
                                f"{outer.config.beam_size}"
                            )
                        },
                    )
                    return
                with outer._waiting_lock:
                    if outer._waiting >= outer.config.queue_depth:
                        self._send(503, {"error": "generation queue is full"})
                        return
                    outer._waiting += 1
                try:
                    with outer._generate_lock:  # single in-flight generation
                        start = time.perf_counter()
                        paths = outer.translator.generate_paths(
                            data["source_lang"],
                            data["target_lang"],
                            data["text"],
                            data["num_paths"],
                            beam_size=outer.config.beam_size,
                            max_new_tokens=outer.config.max_new_tokens,
                            sampling=data["sampling"],
                            temperature=data["temperature"],
                        )
                        latency_ms = (time.perf_counter() - start) * 1000.0
                finally:
                    with outer._waiting_lock:
                        outer._waiting -= 1
                self._send(
                    200,
                    {
                        "model_id": outer.translator.model_id,
                        "paths": [
                            {
                                "text": path.text,
                                "tokens": (
                                    [{"text": t, "prob": p} for t, p in path.tokens]
                                    if data["return_token_probs"]
                                    else []
                                ),
                                "seq_logprob": path.reported_logprob,
                            }
                            for path in paths
                        ],
                        "latency_ms": latency_ms,
                    },
                )

        self._server = ThreadingHTTPServer((config.host, config.port), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "AdapterServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def __enter__(self) -> "AdapterServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def serve_translate(config: AdapterConfig) -> AdapterServer:
    """Load the model and start serving the wire protocol."""
    return AdapterServer(config).start()
