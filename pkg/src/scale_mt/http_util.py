"""Shared HTTP plumbing: retrying JSON POSTs and canonical request hashing.

Retry policy (used by every endpoint client): exponential backoff with
factor 2 starting at 200 ms, retrying only on transport errors and HTTP
5xx. 4xx responses are terminal. A run makes at most ``max_retries + 1``
attempts.
"""

from __future__ import annotations

import hashlib
import json
import time
from typing import Any

import requests

from .core import ScaleError

RETRY_BASE_DELAY_S = 0.2


class TransportFailure(ScaleError):
    """All attempts failed on transport errors or HTTP 5xx."""


class EndpointRejected(ScaleError):
    """Terminal HTTP 4xx from the endpoint."""

    def __init__(self, status_code: int, detail: str):
        super().__init__(f"endpoint rejected request ({status_code}): {detail}")
        self.status_code = status_code
        self.detail = detail


class MalformedResponse(ScaleError):
    """2xx response whose body is not the expected JSON."""


def canonical_json(obj: Any) -> str:
    """Stable serialization: sorted keys, no whitespace, raw unicode."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def fingerprint(body: Any) -> str:
    """SHA-256 hex digest of the canonical JSON form of a request body."""
    return hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest()


def post_json(
    url: str,
    body: dict[str, Any],
    *,
    timeout_s: float,
    max_retries: int,
    api_key: str | None = None,
) -> tuple[dict[str, Any], float]:
    """POST a JSON body, returning ``(payload, wall_ms)``.

    ``wall_ms`` covers the successful attempt only; retried attempts and
    backoff sleeps are excluded.
    """
    headers = {}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    delay = RETRY_BASE_DELAY_S
    last_error: Exception | None = None
    for attempt in range(max_retries + 1):
        try:
            t0 = time.perf_counter()
            resp = requests.post(url, json=body, timeout=timeout_s, headers=headers)
            elapsed_ms = (time.perf_counter() - t0) * 1000.0
        except requests.RequestException as exc:
            last_error = exc
        else:
            if resp.status_code >= 500:
                last_error = EndpointRejected(resp.status_code, resp.text[:500])
            elif resp.status_code >= 400:
                raise EndpointRejected(resp.status_code, resp.text[:500])
            else:
                try:
                    data = resp.json()
                except ValueError as exc:
                    raise MalformedResponse(f"non-JSON response from {url}") from exc
                if not isinstance(data, dict):
                    raise MalformedResponse(f"expected JSON object from {url}")
                return data, elapsed_ms
        if attempt < max_retries:
            time.sleep(delay)
            delay *= 2
    raise TransportFailure(f"{url} unavailable after {max_retries + 1} attempts: {last_error}")
