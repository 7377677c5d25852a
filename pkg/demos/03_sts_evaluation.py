"""
Scoring sentence embeddings on an STS dataset
=============================================

A semantic textual similarity dataset is a list of sentence pairs with
human gold scores. An embedding method is judged by the Spearman rank
correlation between those gold scores and the cosine similarity of its
embeddings, reported as rho x 100.
"""

import io
import sys

import numpy as np

from whb import (
    HiddenStateRecord,
    PipelineConfig,
    Pooling,
    RecordKind,
    average_rho,
    embed_sentences,
    evaluate_sts,
    load_pairs,
    write_results_csv,
)

rng = np.random.default_rng(11)

# 1. A synthetic corpus: 30 sentences, 4 layers, hidden width 12.
num_sentences, num_layers, dim = 30, 4, 12
records = []
for i in range(num_sentences):
    token_count = int(rng.integers(2, 8))
    records.append(
        HiddenStateRecord(
            sentence_id=i,
            token_count=token_count,
            data=rng.normal(size=(num_layers, token_count, dim)),
            kind=RecordKind.TOKENS,
        )
    )

# 2. Gold scores that, by construction, agree perfectly with one specific
#    method: cosine similarity of mean-pooled layer-1 states, mapped from
#    [-1, 1] onto the usual [0, 5] scale.
reference = embed_sentences(
    records, PipelineConfig(pooling=Pooling.AVG, layers=(1,), whitening=False)
)
lines = []
for row in range(0, num_sentences, 2):
    u, v = reference.data[row], reference.data[row + 1]
    cos = float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))
    gold = 2.5 * (1.0 + cos)
    lines.append(f"{gold:.6f}\tsentence {row}\tsentence {row + 1}")
tsv_text = "\n".join(lines) + "\n"
print("first dataset row:", lines[0])

# 3. The dataset format is a 3-column TSV: gold score, sentence a,
#    sentence b. The loader deduplicates sentences into integer ids by
#    first occurrence, which here line up with the record ids above.
pairs, sentences = load_pairs(io.StringIO(tsv_text))
print(f"loaded {len(pairs)} pairs over {len(sentences)} distinct sentences")

# 4. Score the method the gold was built from, and a deliberately
#    mismatched one. Rank correlation is invariant to the monotone map
#    used in step 2, so the matched method lands exactly at 100.
matched = evaluate_sts(reference, pairs, "demo-matched")
other = embed_sentences(
    records, PipelineConfig(pooling=Pooling.CLS, layers=(3,), whitening=False)
)
mismatched = evaluate_sts(other, pairs, "demo-mismatched")

# 5. Report. Multi-dataset benchmarks are summarized by the unweighted
#    mean of the per-dataset coefficients.
write_results_csv([matched, mismatched], sys.stdout)
print(f"average rho x 100: {average_rho([matched, mismatched]) * 100:.2f}")
