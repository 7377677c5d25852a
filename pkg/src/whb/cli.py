"""Command-line interface.

Three subcommands share one binary hidden-state format:

* ``whb inspect FILE`` prints the header and record count of a WHB1 file.
* ``whb eval`` scores one hidden-state file against one pairs TSV and
  prints a result CSV to stdout.
* ``whb grid`` runs a pooling x layer-set x whitening x dataset product
  described by a grid-spec file and writes CSV reports to a directory.

Exit codes are a stable contract: 0 on success, 1 on usage errors (bad
flags, unparsable option values), 2 on data errors (malformed files,
inconsistent configuration, degenerate inputs). Every run that writes
outputs also writes a ``manifest.json`` describing inputs, configuration,
and outputs; manifests contain no timestamps, so re-running a command on
unchanged inputs reproduces every output byte for byte.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import re
import sys
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .ablation import (
    GridResult,
    GridSpec,
    all_layer_pairs,
    all_layer_subsets,
    beam_layer_sweep,
    evaluate_config,
    layer_count_sweep,
    run_grid,
    two_layer_heatmap,
    whitening_delta_report,
    write_delta_csv,
    write_grid_csv,
    write_heatmap_csv,
    write_sweep_csv,
)
from .errors import ConfigError, WhbError
from .evaluation import evaluate_sts, load_pairs, write_results_csv
from .pipeline import (
    DEFAULT_EIGEN_FLOOR_RATIO,
    PipelineConfig,
    Pooling,
    embed_sentences,
)
from .store import RecordKind, load_hidden_states, read_hidden_states

THREADS_ENV_VAR = "WHB_THREADS"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _UsageError(Exception):
    """Raised for malformed invocations; mapped to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise _UsageError(message)


@dataclass(frozen=True)
class RunManifest:
    """Record of one CLI run, written next to its outputs.

    Deliberately excludes timestamps and host details so that re-running
    the same command on the same inputs yields an identical file.
    """

    tool_version: str
    command: str
    config: dict
    inputs: dict
    outputs: list[str]

    def to_json(self) -> str:
        payload = dataclasses.asdict(self)
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV_VAR, "").strip()
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError as exc:
        raise _UsageError(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}") from exc
    if value < 1:
        raise _UsageError(f"{THREADS_ENV_VAR} must be >= 1, got {value}")
    return value


def _parse_layers(text: str) -> tuple[int, ...]:
    parts = [p.strip() for p in text.split(",")]
    if any(not p for p in parts):
        raise _UsageError(f"bad layer list {text!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError as exc:
        raise _UsageError(f"bad layer list {text!r}") from exc


def _parse_pooling(text: str) -> Pooling:
    try:
        return Pooling(text.lower())
    except ValueError as exc:
        raise _UsageError(f"unknown token mode {text!r} (expected cls or avg)") from exc


# -- inspect ---------------------------------------------------------------


def cmd_inspect(args: argparse.Namespace) -> int:
    path = Path(args.file)
    with open(path, "rb") as fh:
        header, records = read_hidden_states(fh)
        count = 0
        tokens = 0
        for rec in records:
            count += 1
            tokens += rec.token_count
    kind = RecordKind(header.record_kind).name
    print(f"file: {path}")
    print(f"version: {header.version}")
    print(f"record_kind: {kind}")
    print(f"num_layers: {header.num_layers}")
    print(f"hidden_dim: {header.hidden_dim}")
    print(f"num_sentences: {header.num_sentences}")
    print(f"records_read: {count}")
    if header.record_kind == RecordKind.TOKENS:
        print(f"total_tokens: {tokens}")
    return EXIT_OK


# -- eval ------------------------------------------------------------------


def cmd_eval(args: argparse.Namespace) -> int:
    config = PipelineConfig(
        pooling=_parse_pooling(args.token),
        layers=_parse_layers(args.layers),
        whitening=bool(args.whiten),
    )
    hidden_path = Path(args.hidden_states)
    pairs_path = Path(args.pairs)

    with open(hidden_path, "rb") as fh:
        header, record_iter = read_hidden_states(fh)
        config.validate_for(header)
        records = list(record_iter)

    with open(pairs_path, "r", encoding="utf-8") as fh:
        pair_list, _sentences = load_pairs(fh, score_range=tuple(args.score_range))

    fit_corpus = None
    if args.fit_corpus is not None:
        fit_header, fit_records = load_hidden_states(args.fit_corpus)
        fit_config = PipelineConfig(
            pooling=config.pooling, layers=config.layers, whitening=False
        )
        fit_config.validate_for(fit_header)
        fit_corpus = embed_sentences(fit_records, fit_config)

    embeddings = embed_sentences(
        records, config, fit_corpus=fit_corpus, eigen_floor_ratio=args.eigen_floor
    )
    dataset_name = pairs_path.stem
    result = evaluate_sts(embeddings, pair_list, dataset_name)
    write_results_csv([result], sys.stdout)

    manifest = RunManifest(
        tool_version=__version__,
        command="eval",
        config={
            "token": config.pooling.value,
            "layers": list(config.layers),
            "whitening": config.whitening,
            "eigen_floor_ratio": args.eigen_floor,
            "fit_corpus_mode": "file" if args.fit_corpus else "transductive",
            "score_range": list(args.score_range),
        },
        inputs={
            "hidden_states": str(hidden_path),
            "pairs": str(pairs_path),
            "fit_corpus": str(args.fit_corpus) if args.fit_corpus else None,
            "dataset": dataset_name,
        },
        outputs=["stdout"],
    )
    manifest.write(args.manifest)
    return EXIT_OK


# -- grid spec file --------------------------------------------------------

_RANGE_RE = re.compile(r"^(\d+)\.\.(\d+)$")


@dataclass(frozen=True)
class GridFileSpec:
    """Parsed grid-spec file plus report directives."""

    spec: GridSpec
    pairs_range: tuple[int, int] | None
    sweep: tuple[int, int, int] | None  # (max_k, lo, hi)


def _parse_range(text: str, where: str) -> tuple[int, int]:
    m = _RANGE_RE.match(text.strip())
    if m is None:
        raise ConfigError(f"{where}: expected LO..HI, got {text!r}")
    lo, hi = int(m.group(1)), int(m.group(2))
    if lo > hi:
        raise ConfigError(f"{where}: empty range {text!r}")
    return lo, hi


def _parse_layer_set_value(
    value: str, where: str
) -> tuple[list[tuple[int, ...]], tuple[int, int] | None]:
    """One layer_sets line -> (layer sets, pairs range if this line was one)."""
    words = value.split()
    if words and words[0] == "pairs":
        if len(words) != 2:
            raise ConfigError(f"{where}: expected 'pairs LO..HI'")
        lo, hi = _parse_range(words[1], where)
        return list(all_layer_pairs(lo, hi)), (lo, hi)
    if words and words[0] == "subsets":
        if len(words) != 4 or words[2] != "of":
            raise ConfigError(f"{where}: expected 'subsets K of LO..HI'")
        try:
            size = int(words[1])
        except ValueError as exc:
            raise ConfigError(f"{where}: bad subset size {words[1]!r}") from exc
        lo, hi = _parse_range(words[3], where)
        return list(all_layer_subsets(size, lo, hi)), None
    sets = []
    for chunk in value.split(","):
        chunk = chunk.strip()
        if not chunk:
            raise ConfigError(f"{where}: empty layer set")
        try:
            layers = tuple(int(p) for p in chunk.split("+"))
        except ValueError as exc:
            raise ConfigError(f"{where}: bad layer set {chunk!r}") from exc
        sets.append(layers)
    return sets, None


def parse_grid_spec(path: str | Path) -> GridFileSpec:
    """Parse a key = value grid-spec file.

    Keys: pooling, layer_sets (repeatable), whitening, datasets, sweep.
    Lines starting with # and blank lines are skipped. Errors name the
    file and 1-based line number.
    """
    path = Path(path)
    pooling: list[Pooling] = []
    layer_sets: list[tuple[int, ...]] = []
    whitening: list[bool] = []
    datasets: list[str] = []
    pairs_range: tuple[int, int] | None = None
    pairs_lines = 0
    sweep: tuple[int, int, int] | None = None

    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            where = f"{path.name}:{lineno}"
            if "=" not in line:
                raise ConfigError(f"{where}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key == "pooling":
                for word in value.replace(",", " ").split():
                    try:
                        pooling.append(Pooling(word.lower()))
                    except ValueError as exc:
                        raise ConfigError(
                            f"{where}: unknown pooling {word!r}"
                        ) from exc
            elif key == "layer_sets":
                sets, rng = _parse_layer_set_value(value, where)
                layer_sets.extend(sets)
                if rng is not None:
                    pairs_range = rng
                    pairs_lines += 1
            elif key == "whitening":
                for word in value.replace(",", " ").split():
                    lowered = word.lower()
                    if lowered in ("true", "t", "1"):
                        whitening.append(True)
                    elif lowered in ("false", "f", "0"):
                        whitening.append(False)
                    else:
                        raise ConfigError(f"{where}: bad whitening flag {word!r}")
            elif key == "datasets":
                datasets.extend(value.replace(",", " ").split())
            elif key == "sweep":
                words = value.split()
                if len(words) != 3 or words[1] != "of":
                    raise ConfigError(f"{where}: expected 'sweep = MAX_K of LO..HI'")
                try:
                    max_k = int(words[0])
                except ValueError as exc:
                    raise ConfigError(f"{where}: bad sweep size {words[0]!r}") from exc
                lo, hi = _parse_range(words[2], where)
                sweep = (max_k, lo, hi)
            else:
                raise ConfigError(f"{where}: unknown key {key!r}")

    if pairs_lines > 1:
        raise ConfigError(f"{path.name}: more than one 'pairs LO..HI' directive")
    if pairs_lines == 1 and len(layer_sets) != len(set(layer_sets)):
        raise ConfigError(
            f"{path.name}: 'pairs' mixed with overlapping explicit layer sets"
        )
    try:
        spec = GridSpec(
            pooling_modes=tuple(pooling),
            layer_sets=tuple(layer_sets),
            whitening_flags=tuple(whitening),
            datasets=tuple(datasets),
        )
    except ConfigError as exc:
        raise ConfigError(f"{path.name}: {exc}") from exc
    return GridFileSpec(spec=spec, pairs_range=pairs_range, sweep=sweep)


def load_data_manifest(path: str | Path) -> dict[str, dict[str, Path]]:
    """Load a dataset manifest mapping names to input files.

    JSON shape: {"datasets": {NAME: {"hidden_states": PATH, "pairs": PATH}}}.
    Relative paths are resolved against the manifest's directory.
    """
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path.name}: not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or "datasets" not in payload:
        raise ConfigError(f"{path.name}: missing top-level 'datasets' object")
    datasets = payload["datasets"]
    if not isinstance(datasets, dict) or not datasets:
        raise ConfigError(f"{path.name}: 'datasets' must be a non-empty object")
    base = path.parent
    out: dict[str, dict[str, Path]] = {}
    for name, entry in datasets.items():
        if not isinstance(entry, dict):
            raise ConfigError(f"{path.name}: dataset {name}: entry must be an object")
        for field in ("hidden_states", "pairs"):
            if field not in entry or not isinstance(entry[field], str):
                raise ConfigError(f"{path.name}: dataset {name}: missing '{field}'")
        out[name] = {
            "hidden_states": base / entry["hidden_states"],
            "pairs": base / entry["pairs"],
        }
    return out


# -- grid ------------------------------------------------------------------


def _combo_suffix(pooling: Pooling, whitening: bool) -> str:
    return f"{pooling.value}_{'T' if whitening else 'F'}"


def cmd_grid(args: argparse.Namespace) -> int:
    file_spec = parse_grid_spec(args.spec)
    spec = file_spec.spec
    data = load_data_manifest(args.data)
    for name in spec.datasets:
        if name not in data:
            raise ConfigError(f"dataset {name}: not in data manifest {args.data}")

    score_range = tuple(args.score_range)
    records = {}
    pairs = {}
    for name in spec.datasets:
        _, records[name] = load_hidden_states(data[name]["hidden_states"])
        with open(data[name]["pairs"], "r", encoding="utf-8") as fh:
            pairs[name], _ = load_pairs(fh, score_range=score_range)

    results = run_grid(
        spec,
        records,
        pairs,
        eigen_floor_ratio=args.eigen_floor,
        threads=args.threads,
    )

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs: list[str] = []

    grid_path = out_dir / "grid.csv"
    with open(grid_path, "w", encoding="utf-8", newline="") as fh:
        write_grid_csv(results, fh)
    outputs.append(grid_path.name)

    combos = [
        (p, w) for p in spec.pooling_modes for w in spec.whitening_flags
    ]
    single = len(combos) == 1

    def combo_results(p: Pooling, w: bool) -> list[GridResult]:
        return [
            r
            for r in results
            if r.config.pooling is p and r.config.whitening is w
        ]

    for p, w in combos:
        subset = combo_results(p, w)
        suffix = "" if single else f"_{_combo_suffix(p, w)}"
        if file_spec.pairs_range is not None:
            lo, hi = file_spec.pairs_range
            pair_only = [
                r
                for r in subset
                if len(r.config.layers) <= 2
                and all(lo <= v <= hi for v in r.config.layers)
            ]
            layers = list(range(lo, hi + 1))
            matrix = two_layer_heatmap(pair_only, layers)
            heatmap_path = out_dir / f"heatmap{suffix}.csv"
            with open(heatmap_path, "w", encoding="utf-8", newline="") as fh:
                write_heatmap_csv(matrix, layers, fh)
            outputs.append(heatmap_path.name)
        if file_spec.sweep is None:
            entries = layer_count_sweep(subset)
            sweep_path = out_dir / f"sweep{suffix}.csv"
            with open(sweep_path, "w", encoding="utf-8", newline="") as fh:
                write_sweep_csv(entries, fh)
            outputs.append(sweep_path.name)

    if file_spec.sweep is not None:
        max_k, lo, hi = file_spec.sweep
        for p, w in combos:
            suffix = "" if single else f"_{_combo_suffix(p, w)}"

            def score(layers: tuple[int, ...], *, _p=p, _w=w) -> float:
                config = PipelineConfig(pooling=_p, layers=layers, whitening=_w)
                result = evaluate_config(
                    config, records, pairs, spec.datasets, args.eigen_floor
                )
                assert result.average is not None
                return result.average

            entries = beam_layer_sweep(score, list(range(lo, hi + 1)), max_k)
            sweep_path = out_dir / f"sweep{suffix}.csv"
            with open(sweep_path, "w", encoding="utf-8", newline="") as fh:
                write_sweep_csv(entries, fh)
            outputs.append(sweep_path.name)

    if len(spec.whitening_flags) == 2:
        deltas = whitening_delta_report(results)
        delta_path = out_dir / "whitening_delta.csv"
        with open(delta_path, "w", encoding="utf-8", newline="") as fh:
            write_delta_csv(deltas, fh)
        outputs.append(delta_path.name)

    manifest = RunManifest(
        tool_version=__version__,
        command="grid",
        config={
            "pooling": [p.value for p in spec.pooling_modes],
            "layer_sets": ["+".join(str(v) for v in s) for s in spec.layer_sets],
            "whitening": list(spec.whitening_flags),
            "datasets": list(spec.datasets),
            "eigen_floor_ratio": args.eigen_floor,
            "fit_corpus_mode": "transductive",
            "threads": args.threads,
            "score_range": list(score_range),
            "sweep": (
                None
                if file_spec.sweep is None
                else {
                    "max_k": file_spec.sweep[0],
                    "layers": list(range(file_spec.sweep[1], file_spec.sweep[2] + 1)),
                }
            ),
        },
        inputs={
            "spec": str(args.spec),
            "data_manifest": str(args.data),
            "datasets": {
                name: {
                    "hidden_states": str(data[name]["hidden_states"]),
                    "pairs": str(data[name]["pairs"]),
                }
                for name in spec.datasets
            },
        },
        outputs=sorted(set(outputs)),
    )
    manifest_path = out_dir / "manifest.json"
    manifest.write(manifest_path)

    for name in sorted(set(outputs)) + [manifest_path.name]:
        print(f"wrote {out_dir / name}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="whb",
        description="Pool, combine, and whiten per-layer hidden states, "
        "then score sentence pairs.",
    )
    parser.add_argument("--version", action="version", version=f"whb {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_inspect = sub.add_parser("inspect", help="print a WHB1 file's header")
    p_inspect.add_argument("file", help="WHB1 hidden-state file")
    p_inspect.set_defaults(func=cmd_inspect)

    p_eval = sub.add_parser("eval", help="score one dataset with one config")
    p_eval.add_argument("hidden_states", help="WHB1 hidden-state file")
    p_eval.add_argument(
        "pairs", help="pairs TSV (gold_score, sentence_a, sentence_b)"
    )
    p_eval.add_argument(
        "--token", required=True, help="token pooling: cls or avg"
    )
    p_eval.add_argument(
        "--layers", required=True, help="comma-separated layer indices, e.g. 1,12"
    )
    p_eval.add_argument(
        "--whiten", action="store_true", help="apply the whitening transform"
    )
    p_eval.add_argument(
        "--eigen-floor",
        type=float,
        default=DEFAULT_EIGEN_FLOOR_RATIO,
        help="drop eigenvalues below this fraction of the largest",
    )
    p_eval.add_argument(
        "--fit-corpus",
        default=None,
        help="WHB1 file to fit whitening on instead of the evaluated sentences",
    )
    p_eval.add_argument(
        "--score-range",
        nargs=2,
        type=float,
        default=(0.0, 5.0),
        metavar=("LO", "HI"),
        help="valid gold score range (default 0 5)",
    )
    p_eval.add_argument(
        "--manifest",
        default="eval_manifest.json",
        help="where to write the run manifest",
    )
    p_eval.set_defaults(func=cmd_eval)

    p_grid = sub.add_parser("grid", help="run an ablation grid from a spec file")
    p_grid.add_argument("spec", help="grid-spec file (key = value lines)")
    p_grid.add_argument(
        "--data",
        required=True,
        help="JSON manifest mapping dataset names to input files",
    )
    p_grid.add_argument(
        "--out-dir", required=True, help="directory for the CSV reports"
    )
    p_grid.add_argument(
        "--eigen-floor",
        type=float,
        default=DEFAULT_EIGEN_FLOOR_RATIO,
        help="drop eigenvalues below this fraction of the largest",
    )
    p_grid.add_argument(
        "--score-range",
        nargs=2,
        type=float,
        default=(0.0, 5.0),
        metavar=("LO", "HI"),
        help="valid gold score range (default 0 5)",
    )
    p_grid.add_argument(
        "--threads",
        type=int,
        default=None,
        help=f"worker threads (default: ${THREADS_ENV_VAR} or 1)",
    )
    p_grid.set_defaults(func=cmd_grid)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "grid":
            if args.threads is None:
                args.threads = _default_threads()
            if args.threads < 1:
                raise _UsageError(f"--threads must be >= 1, got {args.threads}")
        return args.func(args)
    except _UsageError as exc:
        print(f"whb: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (WhbError, OSError) as exc:
        print(f"whb: error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))
