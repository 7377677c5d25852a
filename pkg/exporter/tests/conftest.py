import os

os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")
os.environ.setdefault("HF_HUB_DISABLE_PROGRESS_BARS", "1")
os.environ.setdefault("TRANSFORMERS_VERBOSITY", "error")

import pytest
import torch
from transformers import BertConfig, BertModel, BertTokenizerFast

WORDS = [
    "alpha", "beta", "gamma", "delta", "omega", "river", "stone", "cloud",
    "north", "green", "seven", "quiet", "long", "walk", "bird", "tree",
    "light", "paper", "water", "sound",
]

MODEL_SEED = 20260817
HIDDEN_DIM = 16
NUM_HIDDEN_LAYERS = 2


@pytest.fixture(scope="session")
def model_dir(tmp_path_factory):
    """A tiny randomly initialized BERT checkpoint saved to disk.

    Random weights suffice: every contract under test (shapes, ids,
    determinism, pooling arithmetic) is independent of pretraining, and a
    local checkpoint keeps the suite fully offline.
    """
    d = tmp_path_factory.mktemp("tinybert")
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + WORDS
    (d / "vocab.txt").write_text("\n".join(vocab) + "\n", encoding="utf-8")
    tokenizer = BertTokenizerFast(
        vocab_file=str(d / "vocab.txt"), do_lower_case=True
    )
    tokenizer.save_pretrained(str(d))
    torch.manual_seed(MODEL_SEED)
    config = BertConfig(
        vocab_size=len(vocab),
        hidden_size=HIDDEN_DIM,
        num_hidden_layers=NUM_HIDDEN_LAYERS,
        num_attention_heads=2,
        intermediate_size=32,
        max_position_embeddings=64,
    )
    BertModel(config).save_pretrained(str(d))
    return d


def random_sentences(rng, n, max_words=9):
    """In-vocabulary sentences of 2..max_words words."""
    out = []
    for _ in range(n):
        k = int(rng.integers(2, max_words + 1))
        out.append(" ".join(WORDS[j] for j in rng.integers(0, len(WORDS), size=k)))
    return out


def write_sentence_file(path, sentences):
    path.write_text("\n".join(sentences) + "\n", encoding="utf-8")
    return path
