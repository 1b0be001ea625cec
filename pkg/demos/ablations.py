"""
Switching parts of the objective off
====================================

Each ablation removes one ingredient: a view, the similarity term or
the adversarial sign of the pooler updates. The routes show which loss
drives each pooler and in which direction.
"""

from gpscl.evaluation import EmbeddingTable, linear_probe
from gpscl.graphs import synth_dataset
from gpscl.trainer import ABLATIONS, TrainConfig, embed_dataset, fit

ds = synth_dataset("cycles_vs_cliques", per_class=10, seed=3)

for ablation in ABLATIONS:
    config = TrainConfig(epochs=5, hidden=16, batch_size=10, seed=0, ablation=ablation)
    state = fit(config, ds)
    acc = linear_probe(EmbeddingTable(embed_dataset(state, ds), ds.labels), folds=5).mean
    last = state.history[-1]
    print(f"{ablation:9s} routes={config.pooler_routes()} L_sl={last['L_sl']:.3f} L_cl={last['L_cl']:.4f} probe={acc:.2f}")
