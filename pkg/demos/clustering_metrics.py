"""
Agreement scores for two partitions
===================================

NMI and ARI ignore label names; clustering accuracy finds the best
one-to-one renaming with the Hungarian method.
"""

from gpscl.evaluation import ari, clustering_acc, nmi

truth = [0, 0, 0, 1, 1, 1, 2, 2]
renamed = [2, 2, 2, 0, 0, 0, 1, 1]
crossed = [0, 1, 0, 1, 0, 1, 0, 1]

for name, pred in (("renamed", renamed), ("crossed", crossed)):
    print(f"{name:8s} nmi={nmi(pred, truth):.3f} ari={ari(pred, truth):+.3f} acc={clustering_acc(pred, truth):.3f}")

# two independent halvings: no shared information, below-chance ARI
print(nmi([0, 0, 1, 1], [0, 1, 0, 1]), ari([0, 0, 1, 1], [0, 1, 0, 1]))
