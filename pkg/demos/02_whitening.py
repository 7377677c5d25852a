"""
Whitening an anisotropic embedding cloud
========================================

Sentence embeddings from transformer layers tend to occupy a narrow cone:
strongly correlated coordinates, wildly different variances. Whitening
centers the cloud and rescales it along its principal axes so the
covariance becomes the identity, which makes cosine similarity a much
better-behaved comparison.
"""

import numpy as np

from whb import (
    EmbeddingMatrix,
    apply_whitening,
    fit_whitening,
    load_whitening_transform,
    save_whitening_transform,
)

rng = np.random.default_rng(1)

# 1. Build an anisotropic cloud: correlated Gaussian, one dominant
#    direction, shifted well away from the origin.
n, d = 400, 6
mixing = rng.normal(size=(d, d)) * [8.0, 4.0, 2.0, 1.0, 0.5, 0.25]
E = rng.normal(size=(n, d)) @ mixing.T + 10.0
embeddings = EmbeddingMatrix(data=E)

center = E - E.mean(axis=0)
print("covariance diagonal before:", np.round(np.diag(center.T @ center), 1))

# 2. Fit and apply. The fit eigendecomposes the (unnormalized) covariance
#    and keeps every direction above the eigenvalue floor.
transform = fit_whitening(embeddings)
print(f"retained {transform.retained_dim} of {transform.input_dim} dimensions")

whitened = apply_whitening(embeddings, transform)
gram = whitened.data.T @ whitened.data
print("max |gram - identity| after:", f"{np.max(np.abs(gram - np.eye(d))):.2e}")
print("max |column mean| after:", f"{np.max(np.abs(whitened.data.mean(axis=0))):.2e}")

# 3. Cosine similarity before and after: in the raw cloud the common
#    offset dominates and every pair looks alike; whitening removes it.
def pairwise_cosines(matrix):
    normed = matrix / np.linalg.norm(matrix, axis=1, keepdims=True)
    return normed @ normed.T


raw_cos = pairwise_cosines(E)[np.triu_indices(n, 1)]
white_cos = pairwise_cosines(whitened.data)[np.triu_indices(n, 1)]
print(f"cosine spread before: mean {raw_cos.mean():.3f}, std {raw_cos.std():.3f}")
print(f"cosine spread after:  mean {white_cos.mean():.3f}, std {white_cos.std():.3f}")

# 4. A fitted transform can be persisted and re-applied later, e.g. to
#    whiten a new batch with the statistics of a reference corpus.
save_whitening_transform("reference.wht", transform)
reloaded = load_whitening_transform("reference.wht")
new_batch = EmbeddingMatrix(data=rng.normal(size=(3, d)) @ mixing.T + 10.0)
print("new batch, reloaded transform:")
print(np.round(apply_whitening(new_batch, reloaded).data, 3))
