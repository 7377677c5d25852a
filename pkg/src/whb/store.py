"""Reader/writer for the WHB1 binary hidden-state format.

WHB1 decouples the numeric pipeline from model inference: an exporter dumps
per-layer hidden states once, and everything downstream works from the file.

File layout (all integers little-endian, all floats little-endian IEEE 754
binary32):

    header (25 bytes):
        magic          4 bytes   b"WHB1"
        version        uint32    currently 1
        num_layers     uint32    L+1, embedding layer 0 included
        hidden_dim     uint32
        record_kind    uint8     0 = TOKENS, 1 = POOLED
        num_sentences  uint64

    record (repeated num_sentences times):
        sentence_id    uint64
        token_count    uint32
        payload        float32 array
            TOKENS: num_layers x token_count x hidden_dim, layer-major
                    (token 0 is the sequence's first token, the [CLS] slot)
            POOLED: num_layers x 2 x hidden_dim; per layer the first-token
                    vector, then the mean over all tokens

Storage is 32-bit to halve file size; all downstream arithmetic is 64-bit.
Reading streams one record at a time, so peak memory is O(one record).

An optional JSON sidecar (``<file>.json`` by convention) maps sentence_id to
raw text for human inspection; the numeric core never reads it.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Mapping

import numpy as np

from .errors import ConfigError, FormatError

MAGIC = b"WHB1"
VERSION = 1

_HEADER = struct.Struct("<4sIIIBQ")
_RECORD_HEADER = struct.Struct("<QI")


class RecordKind(IntEnum):
    TOKENS = 0
    POOLED = 1


@dataclass(frozen=True)
class HiddenStateFileHeader:
    num_layers: int
    hidden_dim: int
    record_kind: RecordKind
    num_sentences: int
    version: int = VERSION

    def __post_init__(self):
        if self.version != VERSION:
            raise FormatError(f"unsupported WHB version {self.version}")
        if self.num_layers < 2:
            raise FormatError(
                f"num_layers must be >= 2 (layer 0 plus at least one encoder "
                f"layer), got {self.num_layers}"
            )
        if self.hidden_dim < 1:
            raise FormatError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.record_kind not in (RecordKind.TOKENS, RecordKind.POOLED):
            raise FormatError(f"unknown record_kind {self.record_kind}")
        if self.num_sentences < 0:
            raise FormatError("num_sentences must be >= 0")
        object.__setattr__(self, "record_kind", RecordKind(self.record_kind))

    def payload_shape(self, token_count: int) -> tuple[int, int, int]:
        if self.record_kind is RecordKind.TOKENS:
            return (self.num_layers, token_count, self.hidden_dim)
        return (self.num_layers, 2, self.hidden_dim)


@dataclass(frozen=True)
class HiddenStateRecord:
    """One sentence's hidden states.

    ``data`` is float32 with shape (num_layers, token_count, hidden_dim) for
    TOKENS records and (num_layers, 2, hidden_dim) for POOLED records (per
    layer: first-token vector, then mean-over-tokens vector).
    """

    sentence_id: int
    token_count: int
    data: np.ndarray
    kind: RecordKind = RecordKind.TOKENS

    def __post_init__(self):
        arr = np.asarray(self.data, dtype="<f4")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "kind", RecordKind(self.kind))
        if self.token_count < 1:
            raise FormatError(
                f"record {self.sentence_id}: token_count must be >= 1"
            )
        if arr.ndim != 3:
            raise FormatError(
                f"record {self.sentence_id}: payload must be 3-d, "
                f"got shape {arr.shape}"
            )
        if self.kind is RecordKind.TOKENS and arr.shape[1] != self.token_count:
            raise FormatError(
                f"record {self.sentence_id}: token axis {arr.shape[1]} does "
                f"not match token_count {self.token_count}"
            )
        if self.kind is RecordKind.POOLED and arr.shape[1] != 2:
            raise FormatError(
                f"record {self.sentence_id}: POOLED payload needs 2 vectors "
                f"per layer, got {arr.shape[1]}"
            )

    @property
    def num_layers(self) -> int:
        return self.data.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class EmbeddingMatrix:
    """N x d sentence embeddings (float64) with row-aligned sentence ids."""

    data: np.ndarray
    sentence_ids: np.ndarray | None = None

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ConfigError(f"embedding matrix must be N x d with N,d >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ConfigError("embedding matrix contains non-finite values")
        ids = self.sentence_ids
        if ids is None:
            ids = np.arange(arr.shape[0], dtype=np.uint64)
        ids = np.asarray(ids, dtype=np.uint64)
        if ids.shape != (arr.shape[0],):
            raise ConfigError(
                f"sentence_ids length {ids.shape} does not match row count {arr.shape[0]}"
            )
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "sentence_ids", ids)

    @property
    def num_sentences(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def row_index(self) -> dict[int, int]:
        """Map sentence_id -> row number."""
        return {int(sid): i for i, sid in enumerate(self.sentence_ids)}


def _check_finite(record: HiddenStateRecord) -> None:
    if not np.all(np.isfinite(record.data)):
        raise FormatError(
            f"record {record.sentence_id}: payload contains non-finite values"
        )


def write_hidden_states(
    records: Iterable[HiddenStateRecord],
    header: HiddenStateFileHeader,
    sink: BinaryIO,
) -> int:
    """Write header then records, in order. Returns bytes written.

    Records must match the header's kind, layer count, and dimension, and the
    record count must equal header.num_sentences. Two writes of the same
    records produce byte-identical output.
    """
    written = sink.write(
        _HEADER.pack(
            MAGIC,
            header.version,
            header.num_layers,
            header.hidden_dim,
            int(header.record_kind),
            header.num_sentences,
        )
    )
    count = 0
    for rec in records:
        if rec.kind is not header.record_kind:
            raise ConfigError(
                f"record {rec.sentence_id}: kind {rec.kind.name} does not "
                f"match header kind {header.record_kind.name}"
            )
        expected = header.payload_shape(rec.token_count)
        if rec.data.shape != expected:
            raise ConfigError(
                f"record {rec.sentence_id}: payload shape {rec.data.shape} "
                f"does not match header (expected {expected})"
            )
        _check_finite(rec)
        written += sink.write(_RECORD_HEADER.pack(rec.sentence_id, rec.token_count))
        written += sink.write(rec.data.tobytes())
        count += 1
    if count != header.num_sentences:
        raise ConfigError(
            f"wrote {count} records but header declares {header.num_sentences}"
        )
    return written


def _read_exact(source: BinaryIO, n: int, what: str) -> bytes:
    buf = source.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file: expected {n} bytes for {what}, got {len(buf)}")
    return buf


def read_hidden_states(
    source: BinaryIO,
) -> tuple[HiddenStateFileHeader, Iterator[HiddenStateRecord]]:
    """Read the header eagerly and return a lazy record iterator.

    The iterator validates each record (payload present and finite) as it
    goes and never holds more than one record in memory. The caller owns the
    stream; keep it open until the iterator is exhausted.
    """
    raw = _read_exact(source, _HEADER.size, "header")
    magic, version, num_layers, hidden_dim, kind, num_sentences = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    header = HiddenStateFileHeader(
        num_layers=num_layers,
        hidden_dim=hidden_dim,
        record_kind=RecordKind(kind) if kind in (0, 1) else kind,  # validated below
        num_sentences=num_sentences,
        version=version,
    )

    def _records() -> Iterator[HiddenStateRecord]:
        for _ in range(header.num_sentences):
            head = _read_exact(source, _RECORD_HEADER.size, "record header")
            sentence_id, token_count = _RECORD_HEADER.unpack(head)
            if token_count < 1:
                raise FormatError(f"record {sentence_id}: token_count must be >= 1")
            shape = header.payload_shape(token_count)
            nbytes = int(np.prod(shape)) * 4
            payload = _read_exact(
                source, nbytes, f"payload of record {sentence_id}"
            )
            data = np.frombuffer(payload, dtype="<f4").reshape(shape)
            rec = HiddenStateRecord(
                sentence_id=sentence_id,
                token_count=token_count,
                data=data,
                kind=header.record_kind,
            )
            _check_finite(rec)
            yield rec

    return header, _records()


def save_hidden_states(
    path: str | Path,
    records: Iterable[HiddenStateRecord],
    header: HiddenStateFileHeader,
) -> int:
    with open(path, "wb") as f:
        return write_hidden_states(records, header, f)


def load_hidden_states(
    path: str | Path,
) -> tuple[HiddenStateFileHeader, list[HiddenStateRecord]]:
    """Read a whole file into memory. Convenience for desk-scale inputs."""
    with open(path, "rb") as f:
        header, records = read_hidden_states(f)
        return header, list(records)


def write_sidecar(
    path: str | Path,
    sentences: Mapping[int, str],
    extra: Mapping[str, object] | None = None,
) -> None:
    """Write the optional JSON sidecar (sentence_id -> text, plus free-form
    metadata under "export"). Never read by the numeric core."""
    doc: dict[str, object] = {
        "sentences": {str(k): v for k, v in sorted(sentences.items())}
    }
    if extra:
        doc["export"] = dict(extra)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")


def read_sidecar(path: str | Path) -> dict[str, object]:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
