"""Client for a chat-completions style LLM endpoint.

The LLM is an opaque remote service; this client only assembles the wire
message, enforces a per-endpoint concurrency gate, and normalizes the
completion (stop-sequence stripped, whitespace trimmed).

Wire protocol (JSON over HTTP):

    POST {base_url}/chat
    {"model_id": "...", "messages": [{"role": "system", "content": "..."},
     ...], "temperature": 0.0, "max_tokens": 512, "stop": ["<|im_end|>"]}

    200 -> {"text": "...", "usage": {"prompt_tokens": 1234,
           "completion_tokens": 56}, "latency_ms": 7430.0}
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Any, Sequence

from .core import ScaleError
from .http_util import EndpointRejected, MalformedResponse, TransportFailure, post_json

ROLES = ("system", "user", "assistant")


class LlmUnavailable(ScaleError):
    """Transport failed or the endpoint kept returning 5xx."""


class LlmProtocolError(ScaleError):
    """The endpoint answered, but not with a valid protocol message."""


class LlmEmptyCompletion(ScaleError):
    """Completion was empty after stop-stripping and trimming."""


@dataclass(frozen=True)
class ChatMessage:
    role: str  # "system" | "user" | "assistant"
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        if self.role != "assistant" and not self.content:
            raise ValueError(f"{self.role} message content must be non-empty")

    def to_dict(self) -> dict[str, str]:
        return {"role": self.role, "content": self.content}

    @classmethod
    def from_dict(cls, data: dict[str, str]) -> "ChatMessage":
        return cls(role=data["role"], content=data["content"])


@dataclass(frozen=True)
class LlmEndpointConfig:
    base_url: str
    model_id: str
    timeout_ms: int = 120000
    max_retries: int = 2
    # Deterministic by default: draft diversity lives on the STM side.
    temperature: float = 0.0
    max_tokens: int = 512
    stop_sequences: tuple[str, ...] = ("<|im_end|>",)
    max_concurrent: int = 4
    api_key: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))
        if not self.base_url.startswith(("http://", "https://")):
            raise ValueError(f"base_url must be an absolute http(s) URL: {self.base_url!r}")
        if self.timeout_ms < 100:
            raise ValueError("timeout_ms must be >= 100")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")

    def to_dict(self, redact_secrets: bool = False) -> dict[str, Any]:
        return {
            "base_url": self.base_url,
            "model_id": self.model_id,
            "timeout_ms": self.timeout_ms,
            "max_retries": self.max_retries,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "stop_sequences": list(self.stop_sequences),
            "max_concurrent": self.max_concurrent,
            "api_key": ("***" if redact_secrets else self.api_key) if self.api_key else None,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "LlmEndpointConfig":
        return cls(
            base_url=data["base_url"],
            model_id=data["model_id"],
            timeout_ms=int(data.get("timeout_ms", 120000)),
            max_retries=int(data.get("max_retries", 2)),
            temperature=float(data.get("temperature", 0.0)),
            max_tokens=int(data.get("max_tokens", 512)),
            stop_sequences=tuple(data.get("stop_sequences", ("<|im_end|>",))),
            max_concurrent=int(data.get("max_concurrent", 4)),
            api_key=data.get("api_key"),
        )


@dataclass(frozen=True)
class ChatCompletion:
    text: str
    llm_latency_ms: float
    usage: dict[str, int]  # prompt_tokens, completion_tokens


# Admission gates, one per endpoint base URL, sized at first use.
_gates: dict[str, threading.BoundedSemaphore] = {}
_gates_lock = threading.Lock()


def _gate_for(cfg: LlmEndpointConfig) -> threading.BoundedSemaphore:
    with _gates_lock:
        gate = _gates.get(cfg.base_url)
        if gate is None:
            gate = threading.BoundedSemaphore(cfg.max_concurrent)
            _gates[cfg.base_url] = gate
        return gate


def chat_request_body(cfg: LlmEndpointConfig, messages: Sequence[ChatMessage]) -> dict[str, Any]:
    """The exact JSON body ``complete_chat`` sends; exposed so tests and
    mock scripts can fingerprint it."""
    return {
        "model_id": cfg.model_id,
        "messages": [m.to_dict() for m in messages],
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_tokens,
        "stop": list(cfg.stop_sequences),
    }


def strip_completion(raw: str, stop_sequences: Sequence[str]) -> str:
    """Remove at most one trailing stop sequence, then trim whitespace."""
    text = raw.rstrip()
    for stop in stop_sequences:
        if stop and text.endswith(stop):
            text = text[: -len(stop)]
            break
    return text.strip()


def complete_chat(cfg: LlmEndpointConfig, messages: Sequence[ChatMessage]) -> ChatCompletion:
    """Send a chat prompt and return the normalized completion.

    The message list must start with exactly one system message.
    ``llm_latency_ms`` measures the successful HTTP call only.
    """
    messages = list(messages)
    if not messages or messages[0].role != "system":
        raise ValueError("messages must begin with a system message")
    if sum(1 for m in messages if m.role == "system") != 1:
        raise ValueError("messages must contain exactly one system message")

    body = chat_request_body(cfg, messages)
    url = cfg.base_url.rstrip("/") + "/chat"
    with _gate_for(cfg):
        try:
            data, elapsed_ms = post_json(
                url,
                body,
                timeout_s=cfg.timeout_ms / 1000.0,
                max_retries=cfg.max_retries,
                api_key=cfg.api_key,
            )
        except TransportFailure as exc:
            raise LlmUnavailable(str(exc)) from exc
        except (EndpointRejected, MalformedResponse) as exc:
            raise LlmProtocolError(str(exc)) from exc

    if "text" not in data or not isinstance(data["text"], str):
        raise LlmProtocolError("response must carry a string 'text' field")
    usage = data.get("usage")
    if (
        not isinstance(usage, dict)
        or not isinstance(usage.get("prompt_tokens"), int)
        or not isinstance(usage.get("completion_tokens"), int)
        or usage["prompt_tokens"] < 0
        or usage["completion_tokens"] < 0
    ):
        raise LlmProtocolError("response must carry usage.prompt_tokens/completion_tokens")

    text = strip_completion(data["text"], cfg.stop_sequences)
    if not text:
        raise LlmEmptyCompletion("endpoint returned an empty completion")
    return ChatCompletion(
        text=text,
        llm_latency_ms=elapsed_ms,
        usage={
            "prompt_tokens": usage["prompt_tokens"],
            "completion_tokens": usage["completion_tokens"],
        },
    )
