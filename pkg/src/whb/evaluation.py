"""STS evaluation: pair loading, cosine scoring, Spearman rank correlation.

A dataset is a TSV of ``gold_score<TAB>sentence_a<TAB>sentence_b`` rows.
Loading deduplicates identical sentence strings into one id, so the id space
lines up with a hidden-state export of the unique sentence list.

Scoring follows the usual unsupervised STS procedure: predicted similarity is
the cosine of the two sentence embeddings, the metric is Spearman's rank
correlation between predicted and gold scores, and a suite's headline number
is the unweighted mean of the per-dataset coefficients.

Ties get fractional (average) ranks, the convention of the standard
evaluation toolkits; gold STS scores do contain ties.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DegenerateInputError, PairsParseError
from .store import EmbeddingMatrix


class PairFormat(Enum):
    TSV = "tsv"


@dataclass(frozen=True)
class SentencePairExample:
    id_a: int
    id_b: int
    gold_score: float


@dataclass(frozen=True)
class DatasetEvalResult:
    dataset_name: str
    spearman_rho: float
    n_pairs: int

    def __post_init__(self):
        if not np.isfinite(self.spearman_rho):
            raise ConfigError(f"{self.dataset_name}: spearman_rho is not finite")
        if self.n_pairs < 2:
            raise ConfigError(f"{self.dataset_name}: need at least 2 pairs")


def load_pairs(
    source: IO[str],
    fmt: PairFormat = PairFormat.TSV,
    score_range: tuple[float, float] | None = (0.0, 5.0),
) -> tuple[list[SentencePairExample], list[str]]:
    """Parse sentence pairs from a character stream.

    Returns the pairs in file order plus the deduplicated sentence table;
    a sentence's id is its index in that table (first occurrence order).
    Fully empty lines are skipped; malformed rows raise with their 1-based
    line number. ``score_range=None`` disables the gold-score range check.
    """
    if fmt is not PairFormat.TSV:
        raise ConfigError(f"unsupported pair format {fmt}")
    pairs: list[SentencePairExample] = []
    sentences: list[str] = []
    ids: dict[str, int] = {}

    def intern(text: str) -> int:
        if text not in ids:
            ids[text] = len(sentences)
            sentences.append(text)
        return ids[text]

    for lineno, line in enumerate(source, start=1):
        line = line.rstrip("\r\n")
        if not line:
            continue
        cols = line.split("\t")
        if len(cols) != 3:
            raise PairsParseError(
                f"line {lineno}: expected 3 tab-separated columns, got {len(cols)}"
            )
        raw_score, sent_a, sent_b = cols
        try:
            score = float(raw_score)
        except ValueError:
            raise PairsParseError(
                f"line {lineno}: unparsable gold score {raw_score!r}"
            ) from None
        if not np.isfinite(score):
            raise PairsParseError(f"line {lineno}: non-finite gold score")
        if score_range is not None and not score_range[0] <= score <= score_range[1]:
            raise PairsParseError(
                f"line {lineno}: gold score {score} outside "
                f"[{score_range[0]}, {score_range[1]}]"
            )
        if not sent_a or not sent_b:
            raise PairsParseError(f"line {lineno}: empty sentence field")
        pairs.append(
            SentencePairExample(
                id_a=intern(sent_a), id_b=intern(sent_b), gold_score=score
            )
        )
    return pairs, sentences


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine of the angle between two vectors, clipped into [-1, 1].

    Zero vectors are rejected rather than silently scored 0.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ConfigError(f"cosine needs two equal-length vectors, got {u.shape} and {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInputError("cosine similarity undefined for zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def fractional_ranks(values: Sequence[float] | np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties assigned the average of their positions."""
    x = np.asarray(values, dtype=np.float64)
    n = x.shape[0]
    order = np.argsort(x, kind="stable")
    sorted_x = x[order]
    starts = np.flatnonzero(np.r_[True, sorted_x[1:] != sorted_x[:-1]])
    ends = np.r_[starts[1:], n]
    # ranks within a tie group [s, e) are s+1..e; their mean is (s+e+1)/2
    group_ranks = (starts + ends + 1) / 2.0
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = np.repeat(group_ranks, ends - starts)
    return ranks


def spearman_rho(
    predicted: Sequence[float] | np.ndarray, gold: Sequence[float] | np.ndarray
) -> float:
    """Spearman's rank correlation: Pearson correlation of fractional ranks."""
    p = np.asarray(predicted, dtype=np.float64)
    g = np.asarray(gold, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 1:
        raise ConfigError(
            f"need two equal-length sequences, got {p.shape} and {g.shape}"
        )
    if p.shape[0] < 2:
        raise ConfigError("need at least 2 values for rank correlation")
    if np.ptp(p) == 0.0:
        raise DegenerateInputError("predicted sequence is constant")
    if np.ptp(g) == 0.0:
        raise DegenerateInputError("gold sequence is constant")
    rp = fractional_ranks(p)
    rg = fractional_ranks(g)
    return float(np.corrcoef(rp, rg)[0, 1])


def evaluate_sts(
    embeddings: EmbeddingMatrix,
    pairs: Sequence[SentencePairExample],
    dataset_name: str,
) -> DatasetEvalResult:
    """Score one dataset: cosine per pair, then Spearman against gold."""
    index = embeddings.row_index()
    rows_a = np.empty(len(pairs), dtype=np.intp)
    rows_b = np.empty(len(pairs), dtype=np.intp)
    for i, pair in enumerate(pairs):
        for which, sid in (("a", pair.id_a), ("b", pair.id_b)):
            if sid not in index:
                raise ConfigError(
                    f"{dataset_name}: sentence id {sid} (side {which}, pair {i}) "
                    f"missing from embeddings"
                )
        rows_a[i] = index[pair.id_a]
        rows_b[i] = index[pair.id_b]
    a = embeddings.data[rows_a]
    b = embeddings.data[rows_b]
    norm_a = np.linalg.norm(a, axis=1)
    norm_b = np.linalg.norm(b, axis=1)
    if np.any(norm_a == 0.0) or np.any(norm_b == 0.0):
        raise DegenerateInputError(
            f"{dataset_name}: zero embedding vector in a scored pair"
        )
    predicted = np.clip(np.sum(a * b, axis=1) / (norm_a * norm_b), -1.0, 1.0)
    gold = np.array([pair.gold_score for pair in pairs], dtype=np.float64)
    rho = spearman_rho(predicted, gold)
    return DatasetEvalResult(
        dataset_name=dataset_name, spearman_rho=rho, n_pairs=len(pairs)
    )


def average_rho(results: Sequence[DatasetEvalResult]) -> float:
    """Unweighted mean of per-dataset Spearman coefficients."""
    if not results:
        raise ConfigError("cannot average an empty result list")
    return sum(r.spearman_rho for r in results) / len(results)


def threshold_accuracy(
    embeddings: EmbeddingMatrix,
    pairs: Sequence[SentencePairExample],
    threshold: float,
) -> float:
    """Binary classification accuracy with label = (cosine >= threshold)."""
    if not pairs:
        raise ConfigError("no pairs to score")
    gold = np.array([pair.gold_score for pair in pairs], dtype=np.float64)
    if not np.all((gold == 0.0) | (gold == 1.0)):
        raise ConfigError("threshold accuracy requires binary gold labels")
    index = embeddings.row_index()
    correct = 0
    for pair in pairs:
        try:
            u = embeddings.data[index[pair.id_a]]
            v = embeddings.data[index[pair.id_b]]
        except KeyError as exc:
            raise ConfigError(f"sentence id {exc.args[0]} missing from embeddings") from None
        predicted = cosine_similarity(u, v) >= threshold
        correct += int(predicted == bool(pair.gold_score))
    return correct / len(pairs)


def write_results_csv(
    results: Iterable[DatasetEvalResult], sink: IO[str]
) -> None:
    """CSV with columns dataset, n_pairs, rho_x100 (two decimals)."""
    sink.write("dataset,n_pairs,rho_x100\n")
    for r in results:
        sink.write(f"{r.dataset_name},{r.n_pairs},{r.spearman_rho * 100:.2f}\n")
