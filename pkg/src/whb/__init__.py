"""Pool, combine, and whiten per-layer hidden states for sentence scoring.

The package turns per-sentence, per-layer transformer hidden states into
fixed-size sentence embeddings (token pooling, layer averaging, optional
whitening) and scores embedding cosines against gold similarity labels
with Spearman's rank correlation. `store` defines the WHB1 binary file
format the rest of the package consumes, `pipeline` builds embeddings,
`evaluation` scores them, `ablation` sweeps configuration grids, and
`cli` exposes the `whb` command.
"""

__version__ = "0.1.0"

from .ablation import (
    GridResult,
    GridSpec,
    SweepEntry,
    WhiteningDelta,
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
from .errors import (
    ConfigError,
    DegenerateInputError,
    FormatError,
    PairsParseError,
    WhbError,
)
from .evaluation import (
    DatasetEvalResult,
    PairFormat,
    SentencePairExample,
    average_rho,
    cosine_similarity,
    evaluate_sts,
    fractional_ranks,
    load_pairs,
    spearman_rho,
    threshold_accuracy,
    write_results_csv,
)
from .pipeline import (
    DEFAULT_EIGEN_FLOOR_RATIO,
    PipelineConfig,
    Pooling,
    WhiteningTransform,
    apply_whitening,
    combine_layers,
    embed_sentences,
    fit_whitening,
    load_whitening_transform,
    pool_sentence,
    read_whitening_transform,
    save_whitening_transform,
    write_whitening_transform,
)
from .store import (
    EmbeddingMatrix,
    HiddenStateFileHeader,
    HiddenStateRecord,
    RecordKind,
    load_hidden_states,
    read_hidden_states,
    read_sidecar,
    save_hidden_states,
    write_hidden_states,
    write_sidecar,
)

__all__ = [
    "__version__",
    # errors
    "WhbError",
    "FormatError",
    "PairsParseError",
    "ConfigError",
    "DegenerateInputError",
    # store
    "RecordKind",
    "HiddenStateFileHeader",
    "HiddenStateRecord",
    "EmbeddingMatrix",
    "write_hidden_states",
    "read_hidden_states",
    "save_hidden_states",
    "load_hidden_states",
    "write_sidecar",
    "read_sidecar",
    # pipeline
    "Pooling",
    "PipelineConfig",
    "WhiteningTransform",
    "DEFAULT_EIGEN_FLOOR_RATIO",
    "pool_sentence",
    "combine_layers",
    "fit_whitening",
    "apply_whitening",
    "embed_sentences",
    "write_whitening_transform",
    "read_whitening_transform",
    "save_whitening_transform",
    "load_whitening_transform",
    # evaluation
    "PairFormat",
    "SentencePairExample",
    "DatasetEvalResult",
    "load_pairs",
    "cosine_similarity",
    "fractional_ranks",
    "spearman_rho",
    "evaluate_sts",
    "average_rho",
    "threshold_accuracy",
    "write_results_csv",
    # ablation
    "GridSpec",
    "GridResult",
    "SweepEntry",
    "WhiteningDelta",
    "all_layer_pairs",
    "all_layer_subsets",
    "evaluate_config",
    "run_grid",
    "two_layer_heatmap",
    "layer_count_sweep",
    "beam_layer_sweep",
    "whitening_delta_report",
    "write_grid_csv",
    "write_heatmap_csv",
    "write_sweep_csv",
    "write_delta_csv",
]
