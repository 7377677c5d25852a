"""
Running an ablation grid
========================

Which layers to combine, how to pool tokens, and whether to whiten are
independent choices. A grid evaluates their full Cartesian product on
the same data, and a few report helpers condense the results: a
layer-pair heatmap, a best-set-per-size sweep, and a with/without
whitening comparison.
"""

import numpy as np

from whb import (
    GridSpec,
    HiddenStateRecord,
    PipelineConfig,
    Pooling,
    RecordKind,
    all_layer_pairs,
    embed_sentences,
    layer_count_sweep,
    load_pairs,
    run_grid,
    two_layer_heatmap,
    whitening_delta_report,
)
import io

rng = np.random.default_rng(7)

# 1. Corpus: 24 sentences, layers 0..4, hidden width 8. Gold scores are
#    built from mean-pooled layer-1 cosines, so the grid has a known
#    best cell at (AVG, {1}, F).
num_sentences, num_layers, dim = 24, 5, 8
records = []
for i in range(num_sentences):
    token_count = int(rng.integers(2, 7))
    records.append(
        HiddenStateRecord(
            sentence_id=i,
            token_count=token_count,
            data=rng.normal(size=(num_layers, token_count, dim)),
            kind=RecordKind.TOKENS,
        )
    )
reference = embed_sentences(
    records, PipelineConfig(pooling=Pooling.AVG, layers=(1,), whitening=False)
)
lines = []
for row in range(0, num_sentences, 2):
    u, v = reference.data[row], reference.data[row + 1]
    cos = float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))
    lines.append(f"{2.5 * (1 + cos):.6f}\tsentence {row}\tsentence {row + 1}")
pairs, _ = load_pairs(io.StringIO("\n".join(lines) + "\n"))

# 2. The grid: 2 pooling modes x 10 layer sets (all pairs over layers
#    1..4, singletons on the diagonal) x 2 whitening flags = 40
#    configurations. Axes are normalized into a deterministic order.
spec = GridSpec(
    pooling_modes=(Pooling.CLS, Pooling.AVG),
    layer_sets=tuple(all_layer_pairs(1, num_layers - 1)),
    whitening_flags=(False, True),
    datasets=("demo",),
)
results = run_grid(spec, {"demo": records}, {"demo": pairs})
print(f"evaluated {len(results)} grid cells")
best = max(results, key=lambda r: r.average)
print(f"best cell: [{best.config.label}] at {best.average * 100:.2f}")

# 3. Heatmap over layer pairs, for one pooling/whitening combination.
#    Cell (i, j) is the average for the set {i, j}; the diagonal holds
#    the singletons.
avg_plain = [
    r
    for r in results
    if r.config.pooling is Pooling.AVG and not r.config.whitening
]
heat = two_layer_heatmap(avg_plain, layers=range(1, num_layers))
print("AVG, unwhitened, rho x 100 by layer pair:")
print(np.round(heat * 100, 1))

# 4. Sweep: the best layer set among those of each size.
for entry in layer_count_sweep(avg_plain):
    layers_text = "+".join(str(l) for l in entry.best_layers)
    print(
        f"k={entry.k}: best set {{{layers_text}}} "
        f"at {entry.best_average * 100:.2f}"
    )

# 5. Whitening delta: pair up the cells that differ only in the
#    whitening flag and show the three largest movements.
deltas = whitening_delta_report(results)
deltas.sort(key=lambda d: d.after - d.before, reverse=True)
for d in deltas[:3]:
    layers_text = "+".join(str(l) for l in d.layers)
    print(f"{d.pooling.value.upper()} {{{layers_text}}}: {d.arrow_text()}")
