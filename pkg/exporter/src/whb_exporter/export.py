"""Run a pretrained encoder over a sentence file and dump WHB1 hidden states.

The export walks the input line by line, batches sentences through the
model with every hidden layer requested, and writes one record per
non-empty line. Only real (non-padding) tokens are stored; padding exists
solely inside a batch and never reaches the file.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from transformers import AutoModel, AutoTokenizer

from whb import (
    HiddenStateFileHeader,
    HiddenStateRecord,
    RecordKind,
    save_hidden_states,
    write_sidecar,
)

logger = logging.getLogger("whb_exporter")


class ExportError(Exception):
    """Unusable input file, model, or export configuration."""


@dataclass(frozen=True)
class ExportJob:
    """One export: which model, which sentences, where and how to write.

    ``kind`` selects between full token vectors (TOKENS) and the two pooled
    statistics per layer (POOLED: first-token vector, mean over tokens).
    The POOLED mean covers every real token of the encoded sequence, the
    first token and trailing special tokens included, unless
    ``avg_excludes_trailing_special`` is set.
    """

    model_id: str
    input_path: str | Path
    output_path: str | Path
    kind: RecordKind = RecordKind.TOKENS
    max_len: int = 128
    batch_size: int = 32
    device: str = "cpu"
    avg_excludes_trailing_special: bool = False
    sidecar_path: str | Path | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", RecordKind(self.kind))
        if self.max_len < 2:
            raise ExportError(f"max_len must be >= 2, got {self.max_len}")
        if self.batch_size < 1:
            raise ExportError(f"batch_size must be >= 1, got {self.batch_size}")

    @property
    def resolved_sidecar_path(self) -> Path:
        if self.sidecar_path is not None:
            return Path(self.sidecar_path)
        return Path(str(self.output_path) + ".sidecar.json")


@dataclass(frozen=True)
class ExportSummary:
    """What an export produced, for logging and the CLI."""

    output_path: Path
    sidecar_path: Path
    num_sentences: int
    num_layers: int
    hidden_dim: int
    skipped_sentence_ids: tuple[int, ...] = ()
    truncated_sentence_ids: tuple[int, ...] = field(default=())


def read_sentences(path: str | Path) -> tuple[list[tuple[int, str]], list[int]]:
    """Read one sentence per line; sentence id = 0-based line index.

    Zero-based ids make an exported file line up with the pair loader's
    sentence table: write the deduplicated sentences in id order, one per
    line, and record ids equal file positions. Empty (or whitespace-only)
    lines are skipped with a warning and leave a gap in the id sequence.
    Returns (id, text) pairs plus the skipped ids.
    """
    sentences: list[tuple[int, str]] = []
    skipped: list[int] = []
    with open(path, "r", encoding="utf-8") as fh:
        for index, raw in enumerate(fh):
            text = raw.rstrip("\r\n")
            if not text.strip():
                logger.warning(
                    "%s:%d: empty line skipped, sentence id %d left as a gap",
                    path,
                    index + 1,
                    index,
                )
                skipped.append(index)
                continue
            sentences.append((index, text))
    if not sentences:
        raise ExportError(f"{path}: no non-empty sentences")
    return sentences, skipped


def _trailing_special_count(special_row: np.ndarray, real_count: int) -> int:
    """Length of the run of special tokens at the end of the real sequence.

    Never counts position 0, so a first token that is itself special stays
    in the average regardless.
    """
    n = 0
    i = real_count - 1
    while i > 0 and special_row[i]:
        n += 1
        i -= 1
    return n


def export_hidden_states(job: ExportJob) -> ExportSummary:
    """Run the model over the input file and write WHB1 states + sidecar.

    One record per non-empty input line, sentence_id = 0-based line index.
    TOKENS records hold all real-token vectors per layer; POOLED records
    hold the first-token vector and the token mean per layer. Sequences
    longer than ``max_len`` are truncated and flagged in the sidecar.
    """
    sentences, skipped = read_sentences(job.input_path)

    tokenizer = AutoTokenizer.from_pretrained(job.model_id)
    model = AutoModel.from_pretrained(job.model_id)
    model.eval()
    device = torch.device(job.device)
    model.to(device)

    records: list[HiddenStateRecord] = []
    truncated: list[int] = []
    num_layers = model.config.num_hidden_layers + 1
    hidden_dim = model.config.hidden_size

    with torch.inference_mode():
        for start in range(0, len(sentences), job.batch_size):
            batch = sentences[start : start + job.batch_size]
            texts = [text for _, text in batch]
            full_lengths = [
                len(ids)
                for ids in tokenizer(texts, truncation=False)["input_ids"]
            ]
            enc = tokenizer(
                texts,
                padding=True,
                truncation=True,
                max_length=job.max_len,
                return_tensors="pt",
                return_special_tokens_mask=True,
            )
            special_mask = enc.pop("special_tokens_mask").numpy()
            attention_mask = enc["attention_mask"]
            outputs = model(
                **{k: v.to(device) for k, v in enc.items()},
                output_hidden_states=True,
            )
            # (num_layers, batch, tokens, dim), embedding layer first
            stacked = (
                torch.stack(outputs.hidden_states).to("cpu").numpy()
            )
            if stacked.shape[0] != num_layers or stacked.shape[3] != hidden_dim:
                raise ExportError(
                    f"model returned hidden states of shape {stacked.shape}, "
                    f"expected ({num_layers}, ..., {hidden_dim})"
                )
            for i, (sentence_id, _) in enumerate(batch):
                real = int(attention_mask[i].sum())
                if full_lengths[i] > real:
                    truncated.append(sentence_id)
                tokens = stacked[:, i, :real, :]
                if job.kind is RecordKind.TOKENS:
                    data = tokens
                else:
                    avg_count = real
                    if job.avg_excludes_trailing_special:
                        avg_count -= _trailing_special_count(special_mask[i], real)
                    first = tokens[:, 0, :]
                    mean = tokens[:, :avg_count, :].astype(np.float64).mean(axis=1)
                    data = np.stack([first, mean], axis=1)
                records.append(
                    HiddenStateRecord(
                        sentence_id=sentence_id,
                        token_count=real,
                        data=data,
                        kind=job.kind,
                    )
                )

    header = HiddenStateFileHeader(
        num_layers=num_layers,
        hidden_dim=hidden_dim,
        record_kind=job.kind,
        num_sentences=len(records),
    )
    save_hidden_states(job.output_path, records, header)

    sidecar_path = job.resolved_sidecar_path
    write_sidecar(
        sidecar_path,
        {sid: text for sid, text in sentences},
        extra={
            "model_id": job.model_id,
            "record_kind": job.kind.name,
            "max_len": job.max_len,
            "batch_size": job.batch_size,
            "device": job.device,
            "avg_includes_trailing_special": not job.avg_excludes_trailing_special,
            "truncated_sentence_ids": sorted(truncated),
            "skipped_sentence_ids": list(skipped),
            "num_layers": num_layers,
            "hidden_dim": hidden_dim,
        },
    )
    return ExportSummary(
        output_path=Path(job.output_path),
        sidecar_path=sidecar_path,
        num_sentences=len(records),
        num_layers=num_layers,
        hidden_dim=hidden_dim,
        skipped_sentence_ids=tuple(skipped),
        truncated_sentence_ids=tuple(sorted(truncated)),
    )
