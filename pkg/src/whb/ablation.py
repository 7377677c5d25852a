"""Ablation harness: config grids, two-layer heatmaps, layer-count sweeps.

Runs the Cartesian product of pooling modes x layer sets x whitening flags
over one or more datasets and assembles the classic report shapes: a result
table with per-dataset and average correlations, the symmetric two-layer
heatmap (diagonal cells are single layers), the best-per-layer-count sweep,
and with/without-whitening delta rows.

Everything is deterministic: the product is ordered by pooling, then layer
set (lexicographic), then whitening flag; per-dataset results are ordered by
dataset name; re-running a grid on identical inputs yields identical CSV
bytes. Configs are independent, so they may evaluate on a thread pool
without affecting the output.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError
from .evaluation import (
    DatasetEvalResult,
    SentencePairExample,
    average_rho,
    evaluate_sts,
)
from .pipeline import (
    DEFAULT_EIGEN_FLOOR_RATIO,
    PipelineConfig,
    Pooling,
    embed_sentences,
)
from .store import HiddenStateRecord, load_hidden_states

_POOLING_ORDER = {Pooling.CLS: 0, Pooling.AVG: 1}


def all_layer_pairs(lo: int, hi: int) -> list[tuple[int, ...]]:
    """Every unordered pair {i, j} with lo <= i <= j <= hi.

    Diagonal entries (i == j) are singleton layer sets, so the list backs a
    full symmetric heatmap including its diagonal: for a range of n layers
    there are n singletons plus C(n, 2) true pairs.
    """
    if lo > hi:
        raise ConfigError(f"empty layer range {lo}..{hi}")
    sets: list[tuple[int, ...]] = []
    for i in range(lo, hi + 1):
        for j in range(i, hi + 1):
            sets.append((i,) if i == j else (i, j))
    return sorted(sets)


def all_layer_subsets(size: int, lo: int, hi: int) -> list[tuple[int, ...]]:
    """Every layer subset of the given size, lexicographically ordered."""
    n = hi - lo + 1
    if lo > hi:
        raise ConfigError(f"empty layer range {lo}..{hi}")
    if not 1 <= size <= n:
        raise ConfigError(f"subset size {size} not in 1..{n}")
    return [tuple(c) for c in itertools.combinations(range(lo, hi + 1), size)]


@dataclass(frozen=True)
class GridSpec:
    """One ablation grid: the Cartesian product of the three config axes,
    evaluated on every named dataset.

    Axes are normalized to a deterministic order (pooling CLS before AVG,
    layer sets lexicographic, whitening False before True, datasets sorted by
    name); duplicate entries on any axis are rejected.
    """

    pooling_modes: tuple[Pooling, ...]
    layer_sets: tuple[tuple[int, ...], ...]
    whitening_flags: tuple[bool, ...]
    datasets: tuple[str, ...]

    def __post_init__(self):
        poolings = tuple(sorted((Pooling(p) for p in self.pooling_modes),
                                key=_POOLING_ORDER.__getitem__))
        layer_sets = tuple(sorted(tuple(sorted(int(l) for l in s)) for s in self.layer_sets))
        flags = tuple(sorted(bool(f) for f in self.whitening_flags))
        datasets = tuple(sorted(str(d) for d in self.datasets))
        for name, axis in (
            ("pooling_modes", poolings),
            ("layer_sets", layer_sets),
            ("whitening_flags", flags),
            ("datasets", datasets),
        ):
            if not axis:
                raise ConfigError(f"grid axis {name} is empty")
            if len(set(axis)) != len(axis):
                raise ConfigError(f"duplicate entries on grid axis {name}")
        for s in layer_sets:
            if len(set(s)) != len(s):
                raise ConfigError(f"duplicate layer indices in set {s}")
        object.__setattr__(self, "pooling_modes", poolings)
        object.__setattr__(self, "layer_sets", layer_sets)
        object.__setattr__(self, "whitening_flags", flags)
        object.__setattr__(self, "datasets", datasets)

    def configs(self) -> list[PipelineConfig]:
        """The product in its deterministic evaluation order."""
        return [
            PipelineConfig(pooling=p, layers=s, whitening=w)
            for p in self.pooling_modes
            for s in self.layer_sets
            for w in self.whitening_flags
        ]

    @property
    def size(self) -> int:
        return (
            len(self.pooling_modes) * len(self.layer_sets) * len(self.whitening_flags)
        )


@dataclass(frozen=True)
class GridResult:
    config: PipelineConfig
    per_dataset: tuple[DatasetEvalResult, ...]
    average: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "per_dataset", tuple(self.per_dataset))
        avg = average_rho(self.per_dataset)
        if self.average is None:
            object.__setattr__(self, "average", avg)
        elif abs(self.average - avg) > 1e-12:
            raise ConfigError(
                f"average {self.average} inconsistent with per-dataset mean {avg}"
            )


RecordSource = str | Path | Sequence[HiddenStateRecord]


def _as_records(source: RecordSource) -> list[HiddenStateRecord]:
    if isinstance(source, (str, Path)):
        return load_hidden_states(source)[1]
    return list(source)


def evaluate_config(
    config: PipelineConfig,
    records: Mapping[str, Sequence[HiddenStateRecord]],
    pairs: Mapping[str, Sequence[SentencePairExample]],
    datasets: Sequence[str],
    eigen_floor_ratio: float = DEFAULT_EIGEN_FLOOR_RATIO,
) -> GridResult:
    """Run one config over the named datasets (in the given order)."""
    per_dataset = []
    for name in datasets:
        embeddings = embed_sentences(
            records[name], config, eigen_floor_ratio=eigen_floor_ratio
        )
        per_dataset.append(evaluate_sts(embeddings, pairs[name], name))
    return GridResult(config=config, per_dataset=tuple(per_dataset))


def run_grid(
    spec: GridSpec,
    hidden_state_files: Mapping[str, RecordSource],
    pairs: Mapping[str, Sequence[SentencePairExample]],
    eigen_floor_ratio: float = DEFAULT_EIGEN_FLOOR_RATIO,
    threads: int = 1,
) -> list[GridResult]:
    """Evaluate every config of the grid on every dataset.

    Dataset sources may be WHB1 file paths (each read once) or already-loaded
    record sequences. A failing config aborts the whole run with that config
    named.
    """
    for name in spec.datasets:
        if name not in hidden_state_files:
            raise ConfigError(f"dataset {name}: no hidden-state file given")
        if name not in pairs:
            raise ConfigError(f"dataset {name}: no pairs given")
    records = {name: _as_records(hidden_state_files[name]) for name in spec.datasets}

    def run_one(config: PipelineConfig) -> GridResult:
        try:
            return evaluate_config(
                config, records, pairs, spec.datasets, eigen_floor_ratio
            )
        except Exception as exc:
            raise ConfigError(f"config [{config.label}] failed: {exc}") from exc

    configs = spec.configs()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run_one, configs))
    return [run_one(c) for c in configs]


def two_layer_heatmap(
    results: Sequence[GridResult], layers: Sequence[int]
) -> np.ndarray:
    """Assemble the symmetric layer-pair matrix of average correlations.

    Cell (i, j) holds the average of the config whose layer set is
    {layers[i], layers[j]}; diagonal cells use the singleton set. Every
    needed set must appear exactly once in ``results``.
    """
    by_set: dict[tuple[int, ...], float] = {}
    for r in results:
        key = r.config.layers
        if key in by_set:
            raise ConfigError(
                f"duplicate result for layer set {key}; filter the results to "
                f"one pooling/whitening combination first"
            )
        by_set[key] = r.average
    layers = [int(l) for l in layers]
    n = len(layers)
    matrix = np.empty((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i, n):
            key = (layers[i],) if i == j else tuple(sorted((layers[i], layers[j])))
            if key not in by_set:
                raise ConfigError(f"missing result for layer set {key}")
            matrix[i, j] = matrix[j, i] = by_set[key]
    return matrix


@dataclass(frozen=True)
class SweepEntry:
    """Best layer set among those of one size."""

    k: int
    best_average: float
    best_layers: tuple[int, ...]
    strategy: str = "grid"


def layer_count_sweep(results: Sequence[GridResult]) -> list[SweepEntry]:
    """Group results by layer-set size and keep each group's maximum.

    Ties on the average go to the lexicographically smallest layer set. No
    monotonicity across sizes is implied; the sweep only reports.
    """
    if not results:
        raise ConfigError("no results to sweep")
    groups: dict[int, list[GridResult]] = {}
    for r in results:
        groups.setdefault(len(r.config.layers), []).append(r)
    entries = []
    for k in sorted(groups):
        best = min(groups[k], key=lambda r: (-r.average, r.config.layers))
        entries.append(
            SweepEntry(k=k, best_average=best.average, best_layers=best.config.layers)
        )
    return entries


def beam_layer_sweep(
    evaluate_layers: Callable[[tuple[int, ...]], float],
    layers: Sequence[int],
    max_k: int,
    beam_width: int = 20,
    exhaustive_up_to: int = 3,
) -> list[SweepEntry]:
    """Best layer set per size k = 1..max_k under a bounded search.

    Sizes up to ``exhaustive_up_to`` enumerate every subset; larger sizes
    extend the previous size's ``beam_width`` best sets by one layer each
    (deduplicated), which keeps desk-scale runtimes bounded. The search is
    fully deterministic: candidates are scored once, ordered by score with
    lexicographic tie-breaks. Each entry records which strategy produced it.
    """
    pool = sorted(set(int(l) for l in layers))
    if not 1 <= max_k <= len(pool):
        raise ConfigError(f"max_k {max_k} not in 1..{len(pool)}")
    if beam_width < 1:
        raise ConfigError("beam_width must be >= 1")
    scores: dict[tuple[int, ...], float] = {}

    def score(candidate: tuple[int, ...]) -> float:
        if candidate not in scores:
            scores[candidate] = evaluate_layers(candidate)
        return scores[candidate]

    entries: list[SweepEntry] = []
    beam: list[tuple[int, ...]] = []
    for k in range(1, max_k + 1):
        if k <= exhaustive_up_to:
            candidates = [tuple(c) for c in itertools.combinations(pool, k)]
            strategy = "exhaustive"
        else:
            grown = {
                tuple(sorted(s + (l,)))
                for s in beam
                for l in pool
                if l not in s
            }
            candidates = sorted(grown)
            strategy = f"beam{beam_width}"
        ranked = sorted(candidates, key=lambda c: (-score(c), c))
        best = ranked[0]
        entries.append(
            SweepEntry(
                k=k, best_average=score(best), best_layers=best, strategy=strategy
            )
        )
        beam = ranked[:beam_width]
    return entries


@dataclass(frozen=True)
class WhiteningDelta:
    """One paired row of the with/without-whitening comparison."""

    pooling: Pooling
    layers: tuple[int, ...]
    without: GridResult
    with_: GridResult

    @property
    def before(self) -> float:
        return self.without.average

    @property
    def after(self) -> float:
        return self.with_.average

    def arrow_text(self) -> str:
        """Format "before → after (+delta)" at two decimals on the x100 scale.

        The printed delta is the difference of the two rounded endpoints, so
        every row is internally consistent as displayed.
        """
        b = round(self.before * 100, 2)
        a = round(self.after * 100, 2)
        return f"{b:.2f} → {a:.2f} ({a - b:+.2f})"


def whitening_delta_report(results: Sequence[GridResult]) -> list[WhiteningDelta]:
    """Pair up results that differ only in the whitening flag.

    Every (pooling, layer set) key must appear with both flag values exactly
    once; rows come back sorted by pooling then layer set.
    """
    table: dict[tuple[Pooling, tuple[int, ...]], dict[bool, GridResult]] = {}
    for r in results:
        key = (r.config.pooling, r.config.layers)
        flag_map = table.setdefault(key, {})
        if r.config.whitening in flag_map:
            raise ConfigError(f"duplicate result for config [{r.config.label}]")
        flag_map[r.config.whitening] = r
    rows = []
    for key in sorted(table, key=lambda k: (_POOLING_ORDER[k[0]], k[1])):
        flag_map = table[key]
        if set(flag_map) != {False, True}:
            raise ConfigError(
                f"unpaired config: token={key[0].value.upper()}, "
                f"layers={'+'.join(map(str, key[1]))} present with only one "
                f"whitening flag"
            )
        rows.append(
            WhiteningDelta(
                pooling=key[0],
                layers=key[1],
                without=flag_map[False],
                with_=flag_map[True],
            )
        )
    return rows


# --- CSV emission ------------------------------------------------------------
# All values are printed as rho x 100 at two decimals, the usual presentation
# for STS tables. Writers emit "\n" newlines and never include timestamps, so
# identical inputs produce byte-identical files.


def _layers_label(layers: Sequence[int]) -> str:
    return "+".join(str(l) for l in layers)


def write_grid_csv(results: Sequence[GridResult], sink: IO[str]) -> None:
    if not results:
        raise ConfigError("no grid results to write")
    names = tuple(d.dataset_name for d in results[0].per_dataset)
    for r in results:
        if tuple(d.dataset_name for d in r.per_dataset) != names:
            raise ConfigError("grid results disagree on dataset columns")
    sink.write("pooling,layers,whitening," + ",".join(names) + ",average\n")
    for r in results:
        cells = ",".join(f"{d.spearman_rho * 100:.2f}" for d in r.per_dataset)
        sink.write(
            f"{r.config.pooling.value},{_layers_label(r.config.layers)},"
            f"{'T' if r.config.whitening else 'F'},{cells},"
            f"{r.average * 100:.2f}\n"
        )


def write_heatmap_csv(
    matrix: np.ndarray, layers: Sequence[int], sink: IO[str]
) -> None:
    header = ",".join(str(l) for l in layers)
    sink.write(f"layer,{header}\n")
    for i, l in enumerate(layers):
        cells = ",".join(f"{matrix[i, j] * 100:.2f}" for j in range(len(layers)))
        sink.write(f"{l},{cells}\n")


def write_sweep_csv(entries: Iterable[SweepEntry], sink: IO[str]) -> None:
    sink.write("k,best_avg_x100,best_set,strategy\n")
    for e in entries:
        sink.write(
            f"{e.k},{e.best_average * 100:.2f},"
            f"{_layers_label(e.best_layers)},{e.strategy}\n"
        )


def write_delta_csv(rows: Iterable[WhiteningDelta], sink: IO[str]) -> None:
    sink.write("pooling,layers,before_x100,after_x100,delta\n")
    for row in rows:
        b = round(row.before * 100, 2)
        a = round(row.after * 100, 2)
        sink.write(
            f"{row.pooling.value},{_layers_label(row.layers)},"
            f"{b:.2f},{a:.2f},{a - b:+.2f}\n"
        )
