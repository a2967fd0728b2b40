"""Seq2seq model wrapper: multi-path generation with transition scores."""

from __future__ import annotations

import os
from typing import Any

import torch
from transformers import AutoModelForSeq2SeqLM, AutoTokenizer

from .scoring import ScoredPath, extract_token_probs


class Seq2SeqTranslator:
    """Wraps any ``AutoModelForSeq2SeqLM`` checkpoint (NLLB/M2M-style
    multilingual models set language codes when the tokenizer supports
    them; plain seq2seq models ignore the language fields)."""

    def __init__(self, model_path: str, device: str = "cpu"):
        self.tokenizer = AutoTokenizer.from_pretrained(model_path)
        self.model = AutoModelForSeq2SeqLM.from_pretrained(model_path).to(device).eval()
        self.device = device
        self.model_id = os.path.basename(os.path.normpath(model_path)) or model_path

    def _target_lang_kwargs(self, target_lang: str) -> dict[str, Any]:
        # NLLB-style tokenizers expose language codes as regular tokens.
        if hasattr(self.tokenizer, "lang_code_to_id"):
            mapping = self.tokenizer.lang_code_to_id
            if target_lang in mapping:
                return {"forced_bos_token_id": mapping[target_lang]}
        token_id = self.tokenizer.convert_tokens_to_ids(target_lang)
        if token_id is not None and token_id != self.tokenizer.unk_token_id:
            return {"forced_bos_token_id": token_id}
        return {}

    def generate_paths(
        self,
        source_lang: str,
        target_lang: str,
        text: str,
        num_paths: int,
        *,
        beam_size: int = 4,
        max_new_tokens: int = 64,
        sampling: str = "beam",
        temperature: float | None = None,
    ) -> list[ScoredPath]:
        """Up to ``num_paths`` generation paths, deduplicated on text and
        sorted by reported sequence log-probability, best first."""
        if hasattr(self.tokenizer, "src_lang"):
            try:
                self.tokenizer.src_lang = source_lang
            except (KeyError, ValueError):
                pass
        inputs = self.tokenizer(text, return_tensors="pt").to(self.device)
        gen_kwargs: dict[str, Any] = {
            "max_new_tokens": max_new_tokens,
            "num_return_sequences": num_paths,
            "output_scores": True,
            "return_dict_in_generate": True,
        }
        gen_kwargs.update(self._target_lang_kwargs(target_lang))
        if sampling == "temperature":
            gen_kwargs.update(do_sample=True, temperature=float(temperature), num_beams=1)
        else:
            gen_kwargs.update(do_sample=False, num_beams=max(beam_size, num_paths))
        with torch.no_grad():
            out = self.model.generate(**inputs, **gen_kwargs)
        beam_indices = getattr(out, "beam_indices", None)
        if beam_indices is not None:
            transition = self.model.compute_transition_scores(
                out.sequences, out.scores, beam_indices, normalize_logits=True
            )
        else:
            transition = self.model.compute_transition_scores(
                out.sequences, out.scores, normalize_logits=True
            )
        prefix_len = out.sequences.shape[1] - transition.shape[1]

        paths = [
            extract_token_probs(
                transition[i].tolist(),
                out.sequences[i, prefix_len:].tolist(),
                self.tokenizer,
            )
            for i in range(out.sequences.shape[0])
        ]
        paths.sort(key=lambda p: -p.reported_logprob)
        unique: list[ScoredPath] = []
        seen: set[str] = set()
        for path in paths:
            if path.text not in seen:
                seen.add(path.text)
                unique.append(path)
        return unique[:num_paths]
