"""HTTP adapter serving a pretrained seq2seq translation model over the
draft-translation wire protocol.

POST /translate returns ranked generation paths with per-token softmax
probabilities; GET /healthz reports the model id. The response contract is
pinned by the shared JSON schema in ``schemas/stm_response.schema.json``
at the repository root.
"""

from .scoring import ScoredPath, ScoresUnavailable, extract_token_probs
from .server import AdapterConfig, AdapterServer, serve_translate
from .translator import Seq2SeqTranslator
from .toy import build_toy_model

__version__ = "0.1.0"

__all__ = [
    "AdapterConfig",
    "AdapterServer",
    "ScoredPath",
    "ScoresUnavailable",
    "Seq2SeqTranslator",
    "build_toy_model",
    "extract_token_probs",
    "serve_translate",
]
