"""Shared synthetic-corpus builders for the test suite."""

import json

import numpy as np
import pytest

from whb import (
    HiddenStateFileHeader,
    HiddenStateRecord,
    PipelineConfig,
    Pooling,
    RecordKind,
    cosine_similarity,
    embed_sentences,
    save_hidden_states,
)

CORPUS_SEED = 20260817
CORPUS_SENTENCES = 40
CORPUS_NUM_LAYERS = 13  # layer 0 plus encoder layers 1..12
CORPUS_DIM = 8


def make_tokens_records(rng, n_sentences, num_layers, hidden_dim, max_tokens=7):
    """Random TOKENS records with per-sentence token counts in 2..max_tokens."""
    records = []
    for i in range(n_sentences):
        count = int(rng.integers(2, max_tokens + 1))
        records.append(
            HiddenStateRecord(
                sentence_id=i,
                token_count=count,
                data=rng.normal(size=(num_layers, count, hidden_dim)),
                kind=RecordKind.TOKENS,
            )
        )
    return records


def make_pooled_records(rng, n_sentences, num_layers, hidden_dim):
    """Random POOLED records (first-token vector + token mean per layer)."""
    records = []
    for i in range(n_sentences):
        records.append(
            HiddenStateRecord(
                sentence_id=i,
                token_count=int(rng.integers(1, 9)),
                data=rng.normal(size=(num_layers, 2, hidden_dim)),
                kind=RecordKind.POOLED,
            )
        )
    return records


def cosine_gold_lines(records, config):
    """TSV rows whose gold score is an affine map of the config's cosine.

    gold = 2.5 * (1 + cos) stays within [0, 5] and preserves the cosine
    ordering exactly, so the config that generated the scores ranks the
    pairs perfectly. Pairs are consecutive sentences (0,1), (2,3), ...
    and the sentence texts appear in id order, so the loader's
    first-occurrence ids line up with the record sentence_ids.
    """
    emb = embed_sentences(records, config)
    lines = []
    for row in range(0, emb.data.shape[0] - 1, 2):
        c = cosine_similarity(emb.data[row], emb.data[row + 1])
        gold = 2.5 * (1.0 + c)
        lines.append(f"{gold:.17g}\tsentence {row}\tsentence {row + 1}")
    return lines


@pytest.fixture(scope="session")
def corpus():
    """A 40-sentence, 13-layer TOKENS corpus shared across test modules."""
    rng = np.random.default_rng(CORPUS_SEED)
    records = make_tokens_records(
        rng, CORPUS_SENTENCES, CORPUS_NUM_LAYERS, CORPUS_DIM
    )
    header = HiddenStateFileHeader(
        num_layers=CORPUS_NUM_LAYERS,
        hidden_dim=CORPUS_DIM,
        record_kind=RecordKind.TOKENS,
        num_sentences=CORPUS_SENTENCES,
    )
    return header, records


@pytest.fixture()
def corpus_dir(tmp_path, corpus):
    """The corpus on disk plus pair TSVs and a dataset manifest.

    fixture.tsv gold scores follow AVG pooling of layer 1, so config
    (avg, layers 1, no whitening) scores a perfect rank correlation on it;
    fixture_cls12.tsv follows CLS pooling of layer 12 in the same way.
    """
    header, records = corpus
    save_hidden_states(tmp_path / "fixture.whb", records, header)
    avg1 = cosine_gold_lines(records, PipelineConfig(Pooling.AVG, (1,), False))
    (tmp_path / "fixture.tsv").write_text("\n".join(avg1) + "\n", encoding="utf-8")
    cls12 = cosine_gold_lines(records, PipelineConfig(Pooling.CLS, (12,), False))
    (tmp_path / "fixture_cls12.tsv").write_text(
        "\n".join(cls12) + "\n", encoding="utf-8"
    )
    manifest = {
        "datasets": {
            "fixture": {"hidden_states": "fixture.whb", "pairs": "fixture.tsv"}
        }
    }
    (tmp_path / "data.json").write_text(json.dumps(manifest), encoding="utf-8")
    return tmp_path
