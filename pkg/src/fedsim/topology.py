"""Clustered random device graphs with edge servers and cluster heads.

Nodes are split into balanced clusters; any intra-cluster pair is linked
with probability gamma and any inter-cluster pair with probability
upsilon, so the device layer interpolates between isolated cliques
(upsilon=0) and a dense random graph (upsilon=gamma).  One node per
cluster is designated cluster head, and one edge server serves each
cluster's members.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .seeds import derive_rng

__all__ = ["Topology", "generate_topology", "is_reachable", "neighbors"]


@dataclass(frozen=True)
class Topology:
    """Immutable undirected device graph plus cluster/server structure."""

    node_count: int
    cluster_of: np.ndarray        # (n,) int, cluster id per node
    adjacency: np.ndarray         # (n, n) bool, symmetric, no self-loops
    cluster_heads: tuple[int, ...]  # indexed by cluster id
    gamma: float
    upsilon: float
    seed: int | None = None
    edge_server_of: np.ndarray = field(init=False)  # (n,) int, server id == cluster id

    def __post_init__(self) -> None:
        n = self.node_count
        if n <= 0:
            raise ValueError("node_count must be positive")
        adj = np.asarray(self.adjacency, dtype=bool)
        if adj.shape != (n, n):
            raise ValueError(f"adjacency must be ({n}, {n}), got {adj.shape}")
        if not np.array_equal(adj, adj.T):
            raise ValueError("adjacency must be symmetric")
        if adj.diagonal().any():
            raise ValueError("adjacency must have no self-loops")
        clusters = np.asarray(self.cluster_of, dtype=np.int64)
        if clusters.shape != (n,):
            raise ValueError("cluster_of must assign every node")
        c = len(self.cluster_heads)
        if sorted(set(clusters.tolist())) != list(range(c)):
            raise ValueError("every cluster id in [0, C) must be non-empty")
        for cid, head in enumerate(self.cluster_heads):
            if clusters[head] != cid:
                raise ValueError(f"head {head} is not a member of cluster {cid}")
        object.__setattr__(self, "cluster_of", clusters)
        object.__setattr__(self, "adjacency", adj)
        # one edge server per cluster, serving exactly that cluster's nodes
        object.__setattr__(self, "edge_server_of", clusters.copy())
        self.cluster_of.setflags(write=False)
        self.adjacency.setflags(write=False)
        self.edge_server_of.setflags(write=False)

    @property
    def cluster_count(self) -> int:
        return len(self.cluster_heads)

    def members(self, cluster_id: int) -> list[int]:
        """Sorted node ids belonging to one cluster."""
        return np.flatnonzero(self.cluster_of == cluster_id).tolist()

    def edge_count(self) -> int:
        return int(np.count_nonzero(np.triu(self.adjacency)))

    def degree(self, k: int) -> int:
        return int(np.count_nonzero(self.adjacency[k]))

    def to_json(self) -> str:
        """Serialize to the replay/plotting JSON document."""
        doc = {
            "node_count": self.node_count,
            "clusters": self.cluster_of.tolist(),
            "edges": [[int(i), int(j)] for i, j in zip(*np.nonzero(np.triu(self.adjacency)))],
            "heads": list(self.cluster_heads),
            "servers": self.edge_server_of.tolist(),
            "gamma": self.gamma,
            "upsilon": self.upsilon,
            "seed": self.seed,
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Topology":
        doc = json.loads(text)
        n = doc["node_count"]
        adj = np.zeros((n, n), dtype=bool)
        for i, j in doc["edges"]:
            adj[i, j] = adj[j, i] = True
        return cls(
            node_count=n,
            cluster_of=np.asarray(doc["clusters"], dtype=np.int64),
            adjacency=adj,
            cluster_heads=tuple(doc["heads"]),
            gamma=doc["gamma"],
            upsilon=doc["upsilon"],
            seed=doc.get("seed"),
        )

    def content_hash(self) -> str:
        """Stable digest of the serialized graph, for run manifests."""
        return hashlib.md5(self.to_json().encode("utf-8")).hexdigest()


def generate_topology(
    n: int,
    c: int,
    gamma: float,
    upsilon: float,
    seed: int,
    *,
    require_reachable: bool = False,
    max_attempts: int = 100,
) -> Topology:
    """Generate the clustered device graph.

    Cluster sizes are balanced (they differ by at most 1) and membership is
    a random permutation.  Each unordered node pair is linked independently
    with probability gamma (same cluster) or upsilon (different clusters).
    One head per cluster is picked uniformly from its members.

    With ``require_reachable`` the draw is retried on derived seeds until
    the device graph is connected (up to ``max_attempts``); experiment
    entry points use this so the reachability assumption holds by
    construction, while the default permits deliberately disconnected
    settings such as upsilon=0.
    """
    if n < 1 or c < 1:
        raise ValueError("n and c must be positive")
    if n < c:
        raise ValueError(f"need at least one node per cluster (n={n} < c={c})")
    if not (0.0 <= upsilon <= gamma <= 1.0):
        raise ValueError(f"require 0 <= upsilon <= gamma <= 1, got gamma={gamma} upsilon={upsilon}")

    for attempt in range(max_attempts):
        topo = _generate_once(n, c, gamma, upsilon, seed, attempt)
        if not require_reachable or is_reachable(topo):
            return topo
    raise RuntimeError(
        f"no reachable topology in {max_attempts} attempts for "
        f"n={n}, c={c}, gamma={gamma}, upsilon={upsilon}, seed={seed}"
    )


def _generate_once(n: int, c: int, gamma: float, upsilon: float, seed: int, attempt: int) -> Topology:
    rng = derive_rng(seed, "topology", attempt)

    # balanced random membership: deal a permutation into c contiguous slices
    order = rng.permutation(n)
    base, extra = divmod(n, c)
    cluster_of = np.empty(n, dtype=np.int64)
    start = 0
    for cid in range(c):
        size = base + (1 if cid < extra else 0)
        cluster_of[order[start:start + size]] = cid
        start += size

    same = cluster_of[:, None] == cluster_of[None, :]
    prob = np.where(same, gamma, upsilon)
    draw = rng.random((n, n))
    upper = np.triu(draw < prob, k=1)
    adjacency = upper | upper.T

    heads = tuple(int(rng.choice(np.flatnonzero(cluster_of == cid))) for cid in range(c))
    return Topology(
        node_count=n,
        cluster_of=cluster_of,
        adjacency=adjacency,
        cluster_heads=heads,
        gamma=gamma,
        upsilon=upsilon,
        seed=seed,
    )


def is_reachable(t: Topology) -> bool:
    """True iff the device graph is one connected component (BFS)."""
    seen = np.zeros(t.node_count, dtype=bool)
    queue = deque([0])
    seen[0] = True
    while queue:
        k = queue.popleft()
        for j in np.flatnonzero(t.adjacency[k]):
            if not seen[j]:
                seen[j] = True
                queue.append(int(j))
    return bool(seen.all())


def neighbors(t: Topology, k: int) -> set[int]:
    """1-hop neighbor set of node k (may span clusters)."""
    if not 0 <= k < t.node_count:
        raise ValueError(f"unknown node id {k}")
    return {int(j) for j in np.flatnonzero(t.adjacency[k])}
