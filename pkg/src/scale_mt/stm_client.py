"""Client for the specialized translation model (STM) wire protocol.

The STM endpoint is the swappable unit of the system: pointing this client
at a stronger model upgrades translations without touching the LLM side.

Wire protocol (JSON over HTTP):

    POST {base_url}/translate
    {"source_lang": "xho_Latn", "target_lang": "eng_Latn", "text": "...",
     "num_paths": 3, "return_token_probs": true, "sampling": "beam",
     "temperature": null}

    200 -> {"model_id": "...", "paths": [{"text": "...", "tokens":
           [{"text": "...", "prob": 0.91}, ...], "seq_logprob": -1.23}, ...],
           "latency_ms": 187.0}

All response fields are required except that ``tokens`` may be ``[]`` when
``return_token_probs`` was false.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from .core import Draft, DraftSet, LanguageTag, ScaleError, _dedup_by_text
from .http_util import EndpointRejected, MalformedResponse, TransportFailure, post_json

SAMPLING_MODES = ("beam", "temperature")


class StmUnavailable(ScaleError):
    """Transport failed or the endpoint kept returning 5xx."""


class StmProtocolError(ScaleError):
    """The endpoint answered, but not with a valid protocol message."""


class StmEmptyResult(ScaleError):
    """The endpoint returned zero generation paths."""


@dataclass(frozen=True)
class StmEndpointConfig:
    base_url: str
    model_id: str
    timeout_ms: int = 30000
    max_retries: int = 2
    sampling: str = "beam"
    temperature: float | None = None
    api_key: str | None = None

    def __post_init__(self):
        if not self.base_url.startswith(("http://", "https://")):
            raise ValueError(f"base_url must be an absolute http(s) URL: {self.base_url!r}")
        if self.timeout_ms < 100:
            raise ValueError("timeout_ms must be >= 100")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.sampling not in SAMPLING_MODES:
            raise ValueError(f"sampling must be one of {SAMPLING_MODES}")
        if self.sampling == "temperature" and (
            self.temperature is None or self.temperature <= 0
        ):
            raise ValueError("temperature sampling requires temperature > 0")

    def to_dict(self, redact_secrets: bool = False) -> dict[str, Any]:
        return {
            "base_url": self.base_url,
            "model_id": self.model_id,
            "timeout_ms": self.timeout_ms,
            "max_retries": self.max_retries,
            "sampling": self.sampling,
            "temperature": self.temperature,
            "api_key": ("***" if redact_secrets else self.api_key) if self.api_key else None,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "StmEndpointConfig":
        return cls(
            base_url=data["base_url"],
            model_id=data["model_id"],
            timeout_ms=int(data.get("timeout_ms", 30000)),
            max_retries=int(data.get("max_retries", 2)),
            sampling=data.get("sampling", "beam"),
            temperature=data.get("temperature"),
            api_key=data.get("api_key"),
        )


def translate_request_body(
    cfg: StmEndpointConfig,
    source_lang: LanguageTag,
    target_lang: LanguageTag,
    text: str,
    num_paths: int,
    want_token_probs: bool,
) -> dict[str, Any]:
    """The exact JSON body ``request_drafts`` sends; exposed so tests and
    mock scripts can fingerprint it."""
    return {
        "source_lang": source_lang.code,
        "target_lang": target_lang.code,
        "text": text,
        "num_paths": num_paths,
        "return_token_probs": want_token_probs,
        "sampling": cfg.sampling,
        "temperature": cfg.temperature if cfg.sampling == "temperature" else None,
    }


def dedup_paths(paths: list[Draft]) -> list[Draft]:
    """Drop drafts whose exact text already occurred earlier in the list.

    Equality is exact string equality on purpose: the LLM should see
    genuinely distinct hypotheses, and any normalization belongs to the STM.
    """
    return _dedup_by_text(paths)


def _parse_draft(path: dict[str, Any]) -> Draft:
    if not isinstance(path, dict):
        raise StmProtocolError(f"path must be an object, got {type(path).__name__}")
    for key in ("text", "tokens", "seq_logprob"):
        if key not in path:
            raise StmProtocolError(f"path missing required field {key!r}")
    if not isinstance(path["text"], str):
        raise StmProtocolError("path 'text' must be a string")
    if not isinstance(path["tokens"], list):
        raise StmProtocolError("path 'tokens' must be a list")
    try:
        tokens = tuple((tok["text"], float(tok["prob"])) for tok in path["tokens"])
        return Draft(text=path["text"], tokens=tokens, seq_logprob=float(path["seq_logprob"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise StmProtocolError(f"invalid draft in response: {exc}") from exc


def parse_draftset(
    data: dict[str, Any], latency_ms: float, limit: int | None = None
) -> DraftSet:
    """Validate a response payload and build a ranked, deduplicated set."""
    for key in ("model_id", "paths", "latency_ms"):
        if key not in data:
            raise StmProtocolError(f"response missing required field {key!r}")
    if not isinstance(data["model_id"], str):
        raise StmProtocolError("'model_id' must be a string")
    if not isinstance(data["paths"], list):
        raise StmProtocolError("'paths' must be a list")
    if not isinstance(data["latency_ms"], (int, float)) or data["latency_ms"] < 0:
        raise StmProtocolError("'latency_ms' must be a non-negative number")
    if not data["paths"]:
        raise StmEmptyResult("endpoint returned zero paths")
    drafts = [_parse_draft(path) for path in data["paths"]]
    return DraftSet.from_paths(
        drafts, stm_model_id=data["model_id"], stm_latency_ms=latency_ms, limit=limit
    )


def request_drafts(
    cfg: StmEndpointConfig,
    source_lang: LanguageTag,
    target_lang: LanguageTag,
    text: str,
    num_paths: int,
    want_token_probs: bool = True,
) -> DraftSet:
    """Sample up to ``num_paths`` distinct drafts from the endpoint.

    The result is sorted by sequence log-probability (best first) and never
    holds more drafts than requested; an endpoint returning fewer paths than
    asked is success, not an error. ``stm_latency_ms`` is the wall time of
    the successful HTTP call only.
    """
    if num_paths < 1:
        raise ValueError("num_paths must be >= 1")
    body = translate_request_body(cfg, source_lang, target_lang, text, num_paths, want_token_probs)
    url = cfg.base_url.rstrip("/") + "/translate"
    try:
        data, elapsed_ms = post_json(
            url,
            body,
            timeout_s=cfg.timeout_ms / 1000.0,
            max_retries=cfg.max_retries,
            api_key=cfg.api_key,
        )
    except TransportFailure as exc:
        raise StmUnavailable(str(exc)) from exc
    except (EndpointRejected, MalformedResponse) as exc:
        raise StmProtocolError(str(exc)) from exc
    try:
        return parse_draftset(data, latency_ms=elapsed_ms, limit=num_paths)
    except ValueError as exc:  # Draft/DraftSet invariant violations
        raise StmProtocolError(str(exc)) from exc
