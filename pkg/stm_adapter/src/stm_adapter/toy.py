"""Tiny randomly initialized seq2seq checkpoint for offline tests and demos.

Builds a word-level tokenizer over a small vocabulary plus a miniature
BART-shaped model, saved to a directory loadable with the usual
``from_pretrained`` machinery. Useless for translation quality, ideal for
exercising the wire protocol and score extraction end to end.
"""

from __future__ import annotations

TOY_WORDS = [
    "the", "a", "big", "small", "elephant", "dog", "cat", "bird", "river",
    "tree", "water", "bread", "town", "field", "sun", "rain", "morning",
    "night", "drinks", "sleeps", "buys", "plays", "rises", "walks", "sings",
    "cries", "teaches", "falls", "is", "at", "in", "under", "on", "very",
    "cold", "long", "beautiful", "today", "school", "home",
]


def build_toy_model(save_dir: str, seed: int = 0, d_model: int = 32) -> str:
    import torch
    from tokenizers import Tokenizer, models, pre_tokenizers
    from transformers import BartConfig, BartForConditionalGeneration, PreTrainedTokenizerFast

    vocab = {"<pad>": 0, "<s>": 1, "</s>": 2, "<unk>": 3}
    for word in TOY_WORDS:
        vocab[word] = len(vocab)
    tokenizer = Tokenizer(models.WordLevel(vocab, unk_token="<unk>"))
    tokenizer.pre_tokenizer = pre_tokenizers.Whitespace()
    fast = PreTrainedTokenizerFast(
        tokenizer_object=tokenizer,
        pad_token="<pad>",
        bos_token="<s>",
        eos_token="</s>",
        unk_token="<unk>",
    )
    config = BartConfig(
        vocab_size=len(vocab),
        d_model=d_model,
        encoder_layers=1,
        decoder_layers=1,
        encoder_attention_heads=2,
        decoder_attention_heads=2,
        encoder_ffn_dim=4 * d_model,
        decoder_ffn_dim=4 * d_model,
        max_position_embeddings=128,
        pad_token_id=0,
        bos_token_id=1,
        eos_token_id=2,
        decoder_start_token_id=2,
    )
    torch.manual_seed(seed)
    model = BartForConditionalGeneration(config)
    model.save_pretrained(save_dir)
    fast.save_pretrained(save_dir)
    return save_dir
