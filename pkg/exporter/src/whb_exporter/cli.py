"""Command line for the hidden-state exporter.

Exit codes: 0 success, 1 usage error, 2 data or model error.
"""

import argparse
import logging
import sys

from whb import RecordKind, WhbError

from .export import ExportError, ExportJob, export_hidden_states

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="whb-export",
        description=(
            "Run a pretrained encoder over a sentence file (one per line) "
            "and write per-layer hidden states as WHB1."
        ),
    )
    parser.add_argument("model", help="model identifier or local checkpoint path")
    parser.add_argument("input", help="UTF-8 sentence file, one sentence per line")
    parser.add_argument("output", help="WHB1 output path")
    parser.add_argument(
        "--kind",
        choices=("tokens", "pooled"),
        default="tokens",
        help="store all token vectors, or per-layer (first token, mean) only",
    )
    parser.add_argument(
        "--max-len",
        type=int,
        default=128,
        help="maximum encoded sequence length; longer inputs are truncated",
    )
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--device", default="cpu", help="torch device hint")
    parser.add_argument(
        "--avg-excludes-trailing-special",
        action="store_true",
        help="drop trailing special tokens from the POOLED mean",
    )
    parser.add_argument(
        "--sidecar",
        default=None,
        help="JSON sidecar path (default: OUTPUT.sidecar.json)",
    )
    return parser


def main(argv=None) -> int:
    logging.basicConfig(format="%(name)s: %(levelname)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        job = ExportJob(
            model_id=args.model,
            input_path=args.input,
            output_path=args.output,
            kind=RecordKind.TOKENS if args.kind == "tokens" else RecordKind.POOLED,
            max_len=args.max_len,
            batch_size=args.batch_size,
            device=args.device,
            avg_excludes_trailing_special=args.avg_excludes_trailing_special,
            sidecar_path=args.sidecar,
        )
    except _UsageError as exc:
        print(f"whb-export: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ExportError as exc:
        print(f"whb-export: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        summary = export_hidden_states(job)
    except (ExportError, WhbError, OSError) as exc:
        print(f"whb-export: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(
        f"wrote {summary.output_path}: {summary.num_sentences} sentences, "
        f"{summary.num_layers} layers, dim {summary.hidden_dim}"
    )
    print(f"wrote {summary.sidecar_path}")
    if summary.truncated_sentence_ids:
        print(
            f"truncated {len(summary.truncated_sentence_ids)} sentences "
            f"(see sidecar)"
        )
    return EXIT_OK


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
