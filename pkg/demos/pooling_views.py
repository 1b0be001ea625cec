"""
Weak and strong views from learnable pooling
=============================================

A pooler shrinks a graph to ceil(rho * n) nodes. TopK keeps the best
scoring nodes; the cluster pooler softly merges nodes into clusters.
A larger ratio keeps more of the graph, a smaller one perturbs it more.
"""

import numpy as np

from gpscl.graphs import cycle_graph, degree_features, Graph
from gpscl.pooling import cluster_pool, init_cluster_pooler, init_topk_pooler, keep_count, topk_pool

rng = np.random.default_rng(1)

# an 8-cycle with a chord, degree one-hot features
A = cycle_graph(8)
A[0, 4] = A[4, 0] = 1.0
g = Graph.from_arrays(degree_features(A), A)
d0 = g.X.cols

for rho in (0.9, 0.4):
    print(f"rho={rho}: keep {keep_count(g.n, rho)} of {g.n} nodes")

weak = init_topk_pooler(rng, d0, 16, rho=0.9)
strong = init_topk_pooler(rng, d0, 16, rho=0.4)
for name, p in (("weak", weak), ("strong", strong)):
    view = topk_pool(g, p)
    print(f"topk {name:6s} kept nodes {view.idx}, edges left {int(view.A.data.sum() // 2)}")

# cluster pooling returns a dense, weighted adjacency
cp = init_cluster_pooler(rng, d0, 16, rho=0.4, max_nodes=g.n)
view = cluster_pool(g, cp)
print("cluster assignment rows sum to", np.round(view.S.data.sum(axis=1), 12))
print("pooled adjacency\n", np.round(view.A.data, 3))
