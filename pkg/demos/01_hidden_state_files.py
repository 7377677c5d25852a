"""
Writing and reading hidden-state files
======================================

Builds a small synthetic corpus of per-layer token vectors, saves it in
the WHB1 binary format, and reads it back, streaming record by record.
"""

import io

import numpy as np

from whb import (
    HiddenStateFileHeader,
    HiddenStateRecord,
    RecordKind,
    read_hidden_states,
    write_hidden_states,
    write_sidecar,
)

rng = np.random.default_rng(0)

# 1. Make a corpus: 5 sentences, a 4-layer stack (embedding layer plus
#    3 encoder layers), hidden width 16, and varying sentence lengths.
num_layers, dim = 4, 16
sentences = [
    "a short sentence",
    "another one",
    "the third sentence is a bit longer",
    "four",
    "and a fifth",
]
records = []
for i, text in enumerate(sentences):
    token_count = max(1, len(text.split()))
    states = rng.normal(size=(num_layers, token_count, dim))
    records.append(
        HiddenStateRecord(
            sentence_id=i,
            token_count=token_count,
            data=states,
            kind=RecordKind.TOKENS,
        )
    )

header = HiddenStateFileHeader(
    num_layers=num_layers,
    hidden_dim=dim,
    record_kind=RecordKind.TOKENS,
    num_sentences=len(records),
)

# 2. Write. The format is deterministic: the same records always produce
#    the same bytes, which makes exports easy to diff and cache.
buf = io.BytesIO()
n_bytes = write_hidden_states(records, header, buf)
print(f"wrote {len(records)} records, {n_bytes} bytes")

# 3. Read back. The reader yields records lazily, so a multi-gigabyte
#    export never has to fit in memory.
buf.seek(0)
got_header, record_iter = read_hidden_states(buf)
print(f"header: {got_header}")
for rec in record_iter:
    first = rec.data[1, 0, :3]
    print(
        f"  sentence {rec.sentence_id}: {rec.token_count} tokens, "
        f"layer-1 first-token vector starts {np.round(first, 3)}"
    )

# 4. Round-trip is bit-exact.
buf.seek(0)
_, again = read_hidden_states(buf)
assert all(
    a.data.tobytes() == b.data.tobytes() for a, b in zip(again, records)
)
print("round-trip: bit-exact")

# 5. The optional JSON sidecar keeps the raw text next to the numbers
#    for human inspection; the numeric tools never read it.
write_sidecar("corpus.sidecar.json", dict(enumerate(sentences)))
print("sidecar written to corpus.sidecar.json")
