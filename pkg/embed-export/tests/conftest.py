from __future__ import annotations

import pytest

CORPUS = [
    "the quick brown fox jumps over the lazy dog",
    "machine generated text often repeats itself",
    "kernel methods compare whole distributions",
    "a small encoder is enough to test the format",
    "short sentences keep the fixture fast",
]


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory) -> str:
    """Local two-layer encoder checkpoint so tests run without a network."""
    import torch
    from tokenizers.implementations import ByteLevelBPETokenizer
    from tokenizers.processors import RobertaProcessing
    from transformers import PreTrainedTokenizerFast, RobertaConfig, RobertaModel

    d = tmp_path_factory.mktemp("tiny-encoder")
    bpe = ByteLevelBPETokenizer()
    bpe.train_from_iterator(
        CORPUS * 10,
        vocab_size=400,
        min_frequency=1,
        special_tokens=["<s>", "<pad>", "</s>", "<unk>", "<mask>"],
    )
    bpe._tokenizer.post_processor = RobertaProcessing(
        sep=("</s>", bpe.token_to_id("</s>")),
        cls=("<s>", bpe.token_to_id("<s>")),
    )
    bpe.save(str(d / "tokenizer.json"))
    tok = PreTrainedTokenizerFast(
        tokenizer_file=str(d / "tokenizer.json"),
        bos_token="<s>",
        eos_token="</s>",
        pad_token="<pad>",
        unk_token="<unk>",
        mask_token="<mask>",
        cls_token="<s>",
        sep_token="</s>",
    )
    tok.save_pretrained(d)

    cfg = RobertaConfig(
        vocab_size=tok.vocab_size,
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
    )
    torch.manual_seed(0)
    RobertaModel(cfg).save_pretrained(d)
    return str(d)
