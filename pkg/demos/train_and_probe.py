"""
Pretraining on a toy corpus and probing the embeddings
=======================================================

Cycles and cliques share nothing but their size range, so a good
encoder should separate them without ever seeing a label. The labels
only come back for the linear probe and the clustering scores.
"""

import tempfile
from pathlib import Path

import numpy as np

from gpscl.evaluation import EmbeddingTable, cluster_eval, linear_probe
from gpscl.graphs import synth_dataset
from gpscl.trainer import TrainConfig, embed_dataset, load_checkpoint, pretrain

ds = synth_dataset("cycles_vs_cliques", per_class=20, size_range=(6, 12), seed=0)
print(len(ds), "graphs,", ds.feature_dim, "degree features")

config = TrainConfig(epochs=15, hidden=32, batch_size=16, seed=0, pooler="topk")

with tempfile.TemporaryDirectory() as tmp:
    ckpt = pretrain(config, ds, tmp)
    metrics = (Path(tmp) / "metrics.jsonl").read_text().splitlines()
    print("first epoch:", metrics[0])
    print("last epoch: ", metrics[-1])
    state = load_checkpoint(ckpt)

# embeddings come from the momentum (target) encoder
Z = embed_dataset(state, ds)
table = EmbeddingTable(Z, ds.labels)
print("probe accuracy", linear_probe(table, folds=10).mean)
print("clustering    ", {k: round(v, 3) for k, v in cluster_eval(table).items()})

U = Z / np.linalg.norm(Z, axis=1, keepdims=True)
print("mean pairwise cosine", round(float((U @ U.T)[np.triu_indices(len(Z), 1)].mean()), 3))
