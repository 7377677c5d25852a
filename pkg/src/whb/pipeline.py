"""Hidden states to sentence embeddings: pooling, layer combination, whitening.

The three stages compose into one configurable pipeline:

1. Pool each sentence's per-token vectors at a layer down to one vector,
   either the first token's vector (CLS) or the mean over all tokens
   including the first (AVG).
2. Combine a set of layers by averaging their pooled vectors. The mean is
   used rather than the raw sum so magnitudes stay comparable across layer
   counts; cosine similarities are identical either way.
3. Optionally whiten the stacked embeddings E (N x d):

       E_hat = (E - m) U D^(-1/2)

   where m is the column mean and U D U^T is the eigendecomposition of the
   unnormalized covariance (E - m)^T (E - m). The whitened set has identity
   covariance in that same unnormalized sense: E_hat^T E_hat = I.

Eigenvalues below ``eigen_floor_ratio * lambda_max`` are dropped (not
clamped): clamping would amplify noise in near-null directions by
lambda^(-1/2), while dropping just reduces the output dimension. Eigenvector
signs are canonicalized (largest-magnitude entry positive) so results are
bit-reproducible across runs.

All arithmetic is float64 regardless of the 32-bit storage format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import BinaryIO, Iterable, Mapping

import numpy as np

from .errors import ConfigError, DegenerateInputError, FormatError
from .store import (
    EmbeddingMatrix,
    HiddenStateFileHeader,
    HiddenStateRecord,
    RecordKind,
)

DEFAULT_EIGEN_FLOOR_RATIO = 1e-10


class Pooling(Enum):
    CLS = "cls"
    AVG = "avg"


@dataclass(frozen=True)
class PipelineConfig:
    """One point of the ablation space: pooling mode, layer subset, whitening.

    Layers are normalized to a sorted tuple; duplicates are rejected.
    """

    pooling: Pooling
    layers: tuple[int, ...]
    whitening: bool

    def __post_init__(self):
        layers = tuple(int(l) for l in self.layers)
        if not layers:
            raise ConfigError("layer set must be non-empty")
        if len(set(layers)) != len(layers):
            raise ConfigError(f"duplicate layer indices in {layers}")
        if any(l < 0 for l in layers):
            raise ConfigError(f"negative layer index in {layers}")
        object.__setattr__(self, "layers", tuple(sorted(layers)))
        object.__setattr__(self, "pooling", Pooling(self.pooling))

    def validate_for(self, header: HiddenStateFileHeader) -> None:
        for l in self.layers:
            if l >= header.num_layers:
                raise ConfigError(
                    f"layer out of range: {l} (file has layers 0..{header.num_layers - 1})"
                )

    @property
    def label(self) -> str:
        return (
            f"token={self.pooling.value.upper()},"
            f"layers={'+'.join(str(l) for l in self.layers)},"
            f"whitening={'T' if self.whitening else 'F'}"
        )


def pool_sentence(
    record: HiddenStateRecord, layer: int, mode: Pooling
) -> np.ndarray:
    """Pool one sentence at one layer to a single float64 vector.

    CLS returns the first token's vector; AVG returns the mean over all
    tokens (the first token included). For single-token sentences the two
    coincide.
    """
    if not 0 <= layer < record.num_layers:
        raise ConfigError(
            f"layer out of range: {layer} (record has layers 0..{record.num_layers - 1})"
        )
    plane = record.data[layer]
    if record.kind is RecordKind.TOKENS:
        if mode is Pooling.CLS:
            return plane[0].astype(np.float64)
        return plane.astype(np.float64).mean(axis=0)
    # POOLED: per layer [first-token vector, mean-over-tokens vector]
    if mode is Pooling.CLS:
        return plane[0].astype(np.float64)
    return plane[1].astype(np.float64)


def combine_layers(
    per_layer_vectors: Mapping[int, np.ndarray], layers: Iterable[int]
) -> np.ndarray:
    """Arithmetic mean of the pooled vectors of the requested layers.

    Iterates layers in sorted order, so the result is bitwise independent of
    the order the set was given in.
    """
    wanted = sorted(set(int(l) for l in layers))
    if not wanted:
        raise ConfigError("layer set must be non-empty")
    stack = []
    dim = None
    for l in wanted:
        if l not in per_layer_vectors:
            raise ConfigError(f"missing layer {l} in pooled vectors")
        v = np.asarray(per_layer_vectors[l], dtype=np.float64)
        if dim is None:
            dim = v.shape
        elif v.shape != dim:
            raise ConfigError(
                f"dimension mismatch at layer {l}: {v.shape} vs {dim}"
            )
        stack.append(v)
    return np.mean(np.stack(stack, axis=0), axis=0)


@dataclass(frozen=True)
class WhiteningTransform:
    """Fitted whitening map: x -> (x - mean) @ rotation * inv_sqrt_eigenvalues.

    ``rotation`` columns are the retained covariance eigenvectors in
    descending-eigenvalue order; ``inv_sqrt_eigenvalues`` holds
    lambda^(-1/2) for the retained eigenvalues, so the vector is
    non-decreasing.
    """

    mean: np.ndarray
    rotation: np.ndarray
    inv_sqrt_eigenvalues: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        rot = np.asarray(self.rotation, dtype=np.float64)
        scale = np.asarray(self.inv_sqrt_eigenvalues, dtype=np.float64)
        if mean.ndim != 1 or rot.ndim != 2 or scale.ndim != 1:
            raise ConfigError("whitening transform has malformed shapes")
        d, k = rot.shape
        if mean.shape[0] != d or scale.shape[0] != k or not 1 <= k <= d:
            raise ConfigError(
                f"whitening transform shape mismatch: mean {mean.shape}, "
                f"rotation {rot.shape}, scale {scale.shape}"
            )
        for name, arr in (("mean", mean), ("rotation", rot), ("scale", scale)):
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"whitening transform {name} is not finite")
        if not np.all(scale > 0):
            raise ConfigError("inv_sqrt_eigenvalues must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "inv_sqrt_eigenvalues", scale)

    @property
    def input_dim(self) -> int:
        return self.rotation.shape[0]

    @property
    def retained_dim(self) -> int:
        return self.rotation.shape[1]


def fit_whitening(
    embeddings: EmbeddingMatrix,
    eigen_floor_ratio: float = DEFAULT_EIGEN_FLOOR_RATIO,
) -> WhiteningTransform:
    """Fit a whitening transform on an embedding set.

    The covariance is the unnormalized (E - m)^T (E - m); its eigenpairs are
    sorted by descending eigenvalue, eigenvalues below
    ``eigen_floor_ratio * lambda_max`` are dropped with their eigenvectors,
    and each retained eigenvector's sign is fixed by making its
    largest-magnitude entry positive.

    Raises on fewer than two rows and on covariance with no positive
    eigenvalue (all rows identical).
    """
    if eigen_floor_ratio <= 0:
        raise ConfigError("eigen_floor_ratio must be positive")
    e = embeddings.data
    if e.shape[0] < 2:
        raise ConfigError("whitening needs at least 2 rows to fit")
    mean = e.mean(axis=0)
    centered = e - mean
    cov = centered.T @ centered
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = eigvals[::-1]
    eigvecs = eigvecs[:, ::-1]
    lam_max = eigvals[0]
    if not lam_max > 0:
        raise DegenerateInputError(
            "covariance has no positive eigenvalue (constant input rows)"
        )
    keep = int(np.count_nonzero(eigvals >= eigen_floor_ratio * lam_max))
    if keep == 0:
        raise DegenerateInputError("all eigenvalues below the floor")
    eigvals = eigvals[:keep].copy()
    eigvecs = eigvecs[:, :keep].copy()
    # sign canonicalization: largest-magnitude entry of each column positive
    peaks = np.argmax(np.abs(eigvecs), axis=0)
    flips = eigvecs[peaks, np.arange(keep)] < 0
    eigvecs[:, flips] *= -1.0
    return WhiteningTransform(
        mean=mean,
        rotation=eigvecs,
        inv_sqrt_eigenvalues=1.0 / np.sqrt(eigvals),
    )


def apply_whitening(
    embeddings: EmbeddingMatrix, transform: WhiteningTransform
) -> EmbeddingMatrix:
    """Apply a fitted transform: (E - m) @ rotation * inv_sqrt_eigenvalues.

    Output has the transform's retained dimension; sentence ids and row order
    are preserved. The map is affine, so convex combinations commute with it.
    """
    if embeddings.dim != transform.input_dim:
        raise ConfigError(
            f"dimension mismatch: embeddings have d={embeddings.dim}, "
            f"transform expects d={transform.input_dim}"
        )
    out = (embeddings.data - transform.mean) @ transform.rotation
    out *= transform.inv_sqrt_eigenvalues
    return EmbeddingMatrix(data=out, sentence_ids=embeddings.sentence_ids)


def embed_sentences(
    records: Iterable[HiddenStateRecord],
    config: PipelineConfig,
    fit_corpus: EmbeddingMatrix | None = None,
    eigen_floor_ratio: float = DEFAULT_EIGEN_FLOOR_RATIO,
) -> EmbeddingMatrix:
    """Run the full pipeline over a record sequence: pool, combine, whiten.

    Row order follows record order. With whitening enabled the transform is
    fitted on ``fit_corpus`` when given, otherwise transductively on the
    embeddings themselves.
    """
    rows = []
    ids = []
    for rec in records:
        pooled = {l: pool_sentence(rec, l, config.pooling) for l in config.layers}
        rows.append(combine_layers(pooled, config.layers))
        ids.append(rec.sentence_id)
    if not rows:
        raise ConfigError("no records to embed")
    matrix = EmbeddingMatrix(
        data=np.stack(rows, axis=0),
        sentence_ids=np.asarray(ids, dtype=np.uint64),
    )
    if not config.whitening:
        return matrix
    transform = fit_whitening(
        fit_corpus if fit_corpus is not None else matrix, eigen_floor_ratio
    )
    return apply_whitening(matrix, transform)


# --- transform persistence -------------------------------------------------
#
# Small binary sidecar, same storage rules as WHB1: little-endian integers,
# little-endian float32 payload.
#
#     magic         4 bytes  b"WHT1"
#     version       uint32   currently 1
#     input_dim     uint32   d
#     retained_dim  uint32   k
#     mean          d float32
#     rotation      d*k float32, row-major
#     inv_sqrt      k float32

TRANSFORM_MAGIC = b"WHT1"
TRANSFORM_VERSION = 1
_TRANSFORM_HEADER = struct.Struct("<4sIII")


def write_whitening_transform(
    transform: WhiteningTransform, sink: BinaryIO
) -> int:
    d, k = transform.rotation.shape
    written = sink.write(_TRANSFORM_HEADER.pack(TRANSFORM_MAGIC, TRANSFORM_VERSION, d, k))
    for arr in (transform.mean, transform.rotation, transform.inv_sqrt_eigenvalues):
        written += sink.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return written


def read_whitening_transform(source: BinaryIO) -> WhiteningTransform:
    raw = source.read(_TRANSFORM_HEADER.size)
    if len(raw) != _TRANSFORM_HEADER.size:
        raise FormatError("truncated file: transform header")
    magic, version, d, k = _TRANSFORM_HEADER.unpack(raw)
    if magic != TRANSFORM_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {TRANSFORM_MAGIC!r}")
    if version != TRANSFORM_VERSION:
        raise FormatError(f"unsupported transform version {version}")
    if not 1 <= k <= d:
        raise FormatError(f"invalid transform dims d={d}, k={k}")

    def read_floats(n: int, what: str) -> np.ndarray:
        buf = source.read(4 * n)
        if len(buf) != 4 * n:
            raise FormatError(f"truncated file: transform {what}")
        return np.frombuffer(buf, dtype="<f4").astype(np.float64)

    mean = read_floats(d, "mean")
    rotation = read_floats(d * k, "rotation").reshape(d, k)
    inv_sqrt = read_floats(k, "scale")
    return WhiteningTransform(
        mean=mean, rotation=rotation, inv_sqrt_eigenvalues=inv_sqrt
    )



def save_whitening_transform(path: str | Path, transform: WhiteningTransform) -> int:
    with open(path, "wb") as f:
        return write_whitening_transform(transform, f)


def load_whitening_transform(path: str | Path) -> WhiteningTransform:
    with open(path, "rb") as f:
        return read_whitening_transform(f)
