"""Random regular communication graphs and their gossip mixing weights.

Graphs come from the configuration model: pair up n*d stubs uniformly at
random and start over whenever the pairing produces a self-loop, a parallel
edge, or a disconnected graph. A full restart keeps the distribution uniform
over simple connected d-regular graphs.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

MAX_ATTEMPTS = 10_000
_SEED_MASK = 2**64 - 1


@dataclass(eq=False)
class Topology:
    """Undirected graph as per-node sorted neighbor arrays."""

    n: int
    d: int
    neighbors: tuple[np.ndarray, ...]
    seed: int


@dataclass(eq=False)
class MixingWeights:
    """Symmetric doubly-stochastic gossip weights aligned with a topology.

    ``edge_weights[i][k]`` is the weight for ``neighbors[i][k]``;
    ``self_weight[i]`` absorbs whatever keeps row i summing to one.
    """

    n: int
    neighbors: tuple[np.ndarray, ...]
    edge_weights: tuple[np.ndarray, ...]
    self_weight: np.ndarray

    def weight(self, i: int, j: int) -> float:
        """Weight node i assigns to neighbor j; KeyError when not adjacent."""
        if i == j:
            return float(self.self_weight[i])
        nb = self.neighbors[i]
        pos = int(np.searchsorted(nb, j))
        if pos >= nb.size or nb[pos] != j:
            raise KeyError("nodes %d and %d are not adjacent" % (i, j))
        return float(self.edge_weights[i][pos])

    def dense(self) -> np.ndarray:
        """Full n-by-n matrix, mostly for tests and small diagnostics."""
        W = np.zeros((self.n, self.n))
        for i in range(self.n):
            W[i, self.neighbors[i]] = self.edge_weights[i]
            W[i, i] = self.self_weight[i]
        return W


def _pairing_attempt(rng: np.random.Generator, n: int, d: int):
    stubs = np.repeat(np.arange(n), d)
    rng.shuffle(stubs)
    adj = [set() for _ in range(n)]
    for a, b in stubs.reshape(-1, 2):
        a, b = int(a), int(b)
        if a == b or b in adj[a]:
            return None
        adj[a].add(b)
        adj[b].add(a)
    return adj


def _connected(adj) -> bool:
    seen = {0}
    queue = deque([0])
    while queue:
        for j in adj[queue.popleft()]:
            if j not in seen:
                seen.add(j)
                queue.append(j)
    return len(seen) == len(adj)


def generate_regular(n: int, d: int, seed: int) -> Topology:
    """Sample a simple connected d-regular graph on n nodes.

    Requires 0 < d < n and n * d even. Gives up with RuntimeError
    ("generation stalled") after 10000 rejected pairings, which for sensible
    (n, d) never happens in practice.
    """
    if not 0 < d < n:
        raise ValueError("degree must satisfy 0 < d < n")
    if (n * d) % 2 != 0:
        raise ValueError("n * d must be even")
    rng = np.random.default_rng(seed)
    for _ in range(MAX_ATTEMPTS):
        adj = _pairing_attempt(rng, n, d)
        if adj is not None and _connected(adj):
            neighbors = tuple(np.array(sorted(s), dtype=np.int64) for s in adj)
            return Topology(n, d, neighbors, int(seed))
    raise RuntimeError("generation stalled")


def metropolis_hastings(topo: Topology) -> MixingWeights:
    """Metropolis-Hastings weights: w_ij = 1 / (1 + max(deg_i, deg_j)).

    Symmetric and doubly stochastic for any graph; on a d-regular graph every
    edge gets 1 / (d + 1).
    """
    degs = np.array([nb.size for nb in topo.neighbors])
    edge_weights = []
    self_weight = np.empty(topo.n)
    for i, nb in enumerate(topo.neighbors):
        w = 1.0 / (1.0 + np.maximum(degs[i], degs[nb]))
        edge_weights.append(w)
        self_weight[i] = 1.0 - w.sum()
    return MixingWeights(topo.n, topo.neighbors, tuple(edge_weights), self_weight)


def round_seed(run_seed: int, round_no: int) -> int:
    """Derived seed for one round's topology draw; stable across platforms."""
    ss = np.random.SeedSequence([int(run_seed) & _SEED_MASK, int(round_no)])
    return int(ss.generate_state(1, np.uint64)[0])


def reshuffle(topo: Topology, round_no: int, run_seed: int) -> Topology:
    """Fresh graph with the same (n, d) for a dynamic-topology round."""
    return generate_regular(topo.n, topo.d, round_seed(run_seed, round_no))


def save_edge_list(topo: Topology, path) -> None:
    """Plain text: one header line "n d seed", then one "i j" line per edge
    with i < j."""
    lines = ["%d %d %d" % (topo.n, topo.d, topo.seed)]
    for i, nb in enumerate(topo.neighbors):
        for j in nb:
            if i < j:
                lines.append("%d %d" % (i, j))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_edge_list(path) -> Topology:
    with open(path) as fh:
        raw = [ln.strip() for ln in fh if ln.strip()]
    if not raw:
        raise ValueError("empty edge list file")
    head = raw[0].split()
    if len(head) != 3:
        raise ValueError("edge list header must be 'n d seed'")
    n, d, seed = (int(x) for x in head)
    adj = [set() for _ in range(n)]
    for ln in raw[1:]:
        parts = ln.split()
        if len(parts) != 2:
            raise ValueError("bad edge line %r" % ln)
        a, b = int(parts[0]), int(parts[1])
        if not (0 <= a < n and 0 <= b < n) or a == b:
            raise ValueError("bad edge %d-%d" % (a, b))
        adj[a].add(b)
        adj[b].add(a)
    neighbors = tuple(np.array(sorted(s), dtype=np.int64) for s in adj)
    return Topology(n, d, neighbors, seed)
