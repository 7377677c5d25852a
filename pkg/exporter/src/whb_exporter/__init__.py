"""Export per-layer transformer hidden states to WHB1 files."""

__version__ = "0.1.0"

from .export import (
    ExportError,
    ExportJob,
    ExportSummary,
    export_hidden_states,
    read_sentences,
)

__all__ = [
    "__version__",
    "ExportError",
    "ExportJob",
    "ExportSummary",
    "export_hidden_states",
    "read_sentences",
]
