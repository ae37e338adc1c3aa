"""How the three partition schemes spread labels across nodes.

The Dirichlet concentration alpha dials label skew continuously: alpha
around 100 is close to IID, alpha = 0.1 gives each node only a couple of
effective classes.  The shard scheme is the extreme case where a node's
support is exactly 2 or 3 classes.
"""

import numpy as np

from fedsim import (
    partition_dirichlet,
    partition_iid,
    partition_shards,
    synthetic_blobs,
)

data = synthetic_blobs(num_classes=10, per_class=100, feature_dim=8, spread=1.0, seed=0)
nodes = 8


def describe(name, part):
    print(f"\n{name}")
    for node in sorted(part.assignments):
        idx = part.assignments[node]
        hist = np.bincount(data.labels[idx], minlength=10)
        bar = "".join(str(min(v // 4, 9)) for v in hist)
        print(f"  node {node}: {idx.size:4d} samples, per-class {bar}")


describe("IID", partition_iid(data, nodes, seed=1))
for alpha in (100.0, 1.0, 0.1):
    describe(f"Dirichlet alpha={alpha}", partition_dirichlet(data, nodes, alpha, seed=1))
describe("2-class shards of 25", partition_shards(data, nodes, 2, 25, seed=1))

# skew in one number: per-node total-variation distance to the global mix
global_hist = np.bincount(data.labels, minlength=10) / len(data)
print("\nmean TV distance to the global label mix (50 seeds):")
for alpha in (0.1, 1.0, 10.0, 100.0):
    tvs = []
    for seed in range(50):
        part = partition_dirichlet(data, nodes, alpha, seed)
        for idx in part.assignments.values():
            hist = np.bincount(data.labels[idx], minlength=10) / idx.size
            tvs.append(0.5 * np.abs(hist - global_hist).sum())
    print(f"  alpha={alpha:6}: {np.mean(tvs):.3f}")
