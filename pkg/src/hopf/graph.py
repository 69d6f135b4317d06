"""Immutable sparse graphs in CSR form, K-hop subgraph extraction and neighbor sampling.

Graphs are simple, undirected and unweighted; edges are stored symmetrically.
Subgraphs order their nodes by expansion frontier (seeds first, then each hop's
new nodes in ascending global id), which makes every downstream computation
reproducible for a fixed seed set.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ArgumentError, IngestError


class NormScheme(Enum):
    """Neighbor aggregation schemes for the propagation step.

    MEAN      row-normalized adjacency D^-1 A
    SYM_SELF  symmetric normalization with implicit self weight, (D+I)^-1/2 A (D+I)^-1/2
    COUNT     raw 0/1 adjacency
    MAXPOOL   element-wise max over neighbors (no matrix form; handled in the kernel)
    """

    MEAN = "mean"
    SYM_SELF = "sym_self"
    COUNT = "count"
    MAXPOOL = "maxpool"


def _freeze(*arrays: np.ndarray) -> None:
    for a in arrays:
        a.setflags(write=False)


@dataclass(frozen=True)
class Graph:
    """Undirected graph as symmetric CSR plus a degree vector."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    degree: np.ndarray
    avg_degree: float

    def __post_init__(self):
        _freeze(self.indptr, self.indices, self.degree)

    @property
    def num_edges(self) -> int:
        return self.indices.size // 2

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    def to_scipy(self) -> sp.csr_matrix:
        data = np.ones(self.indices.size, dtype=np.float64)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


@dataclass(frozen=True)
class Subgraph:
    """Induced subgraph with local CSR indices and the local-to-global id map.

    ``frontier_offsets[h]`` is the start of hop-h nodes inside ``global_ids``;
    seeds occupy the prefix ``global_ids[:frontier_offsets[1]]``.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    global_ids: np.ndarray
    frontier_offsets: tuple[int, ...]

    def __post_init__(self):
        _freeze(self.indptr, self.indices, self.global_ids)

    @property
    def num_seeds(self) -> int:
        return self.frontier_offsets[1]

    @property
    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    def to_scipy(self) -> sp.csr_matrix:
        data = np.ones(self.indices.size, dtype=np.float64)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


def build_graph(edge_list, n: int) -> Graph:
    """Build a symmetric CSR graph from an iterable of (u, v) pairs.

    Duplicate edges are collapsed and self-loops dropped (a node's own
    contribution enters through the kernel's node path, never the adjacency).
    """
    if n < 0:
        raise IngestError(f"node count must be non-negative, got {n}")
    pairs = np.asarray(list(edge_list), dtype=np.int64)
    if pairs.size == 0:
        pairs = pairs.reshape(0, 2)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise IngestError("edge list must contain (u, v) pairs")
    if pairs.size and (pairs.min() < 0 or pairs.max() >= n):
        bad = pairs[(pairs < 0).any(axis=1) | (pairs >= n).any(axis=1)][0]
        raise IngestError(f"edge ({bad[0]}, {bad[1]}) out of range for n={n}")

    pairs = pairs[pairs[:, 0] != pairs[:, 1]]  # strip self-loops
    if pairs.shape[0]:
        rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
        cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
        adj = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n)).tocsr()
        adj.data[:] = 1.0  # collapse duplicates
        adj.sort_indices()
    else:
        adj = sp.csr_matrix((n, n), dtype=np.float64)

    degree = np.diff(adj.indptr).astype(np.int64)
    num_edges = adj.nnz // 2
    avg = 2.0 * num_edges / n if n else 0.0
    return Graph(
        n=n,
        indptr=adj.indptr.astype(np.int64),
        indices=adj.indices.astype(np.int64),
        degree=degree,
        avg_degree=avg,
    )


def load_edge_list(path) -> list[tuple[int, int]]:
    """Parse a tab-separated edge-list file; ``#`` starts a comment line."""
    edges = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise IngestError(f"{path}:{lineno}: expected 'src<TAB>dst', got {raw!r}")
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError as exc:
            raise IngestError(f"{path}:{lineno}: non-integer node id") from exc
    return edges


def _check_seeds(n: int, seeds) -> np.ndarray:
    seeds = np.asarray(list(dict.fromkeys(seeds)), dtype=np.int64)
    if seeds.size == 0:
        raise ArgumentError("seed set must be non-empty")
    if seeds.min() < 0 or seeds.max() >= n:
        raise ArgumentError(f"seed out of range for n={n}")
    return seeds


def _induce(g: Graph, order: np.ndarray, offsets: list[int]) -> Subgraph:
    """Induced adjacency over ``order``, rows/columns renumbered to local ids.

    A radius-zero extraction (a single frontier) carries no edges: with no
    expansion step there is nothing to aggregate over.
    """
    if len(offsets) == 2:
        return Subgraph(
            n=order.size,
            indptr=np.zeros(order.size + 1, dtype=np.int64),
            indices=np.empty(0, dtype=np.int64),
            global_ids=order,
            frontier_offsets=tuple(offsets),
        )
    local = np.full(g.n, -1, dtype=np.int64)
    local[order] = np.arange(order.size)
    indptr = [0]
    cols = []
    for gid in order:
        nb = g.neighbors(gid)
        kept = local[nb]
        kept = np.sort(kept[kept >= 0])
        cols.append(kept)
        indptr.append(indptr[-1] + kept.size)
    indices = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)
    return Subgraph(
        n=order.size,
        indptr=np.asarray(indptr, dtype=np.int64),
        indices=indices.astype(np.int64),
        global_ids=order,
        frontier_offsets=tuple(offsets),
    )


def khop_subgraph(g: Graph, seeds, K: int) -> Subgraph:
    """BFS ball of radius K around ``seeds`` with its induced adjacency."""
    if K < 0:
        raise ArgumentError(f"K must be >= 0, got {K}")
    seeds = _check_seeds(g.n, seeds)
    in_set = np.zeros(g.n, dtype=bool)
    in_set[seeds] = True
    order = [seeds]
    offsets = [0, seeds.size]
    frontier = seeds
    for _ in range(K):
        if frontier.size:
            cand = np.unique(np.concatenate([g.neighbors(v) for v in frontier]))
            new = cand[~in_set[cand]]
        else:
            new = np.empty(0, dtype=np.int64)
        in_set[new] = True
        order.append(new)
        offsets.append(offsets[-1] + new.size)
        frontier = new
    return _induce(g, np.concatenate(order), offsets)


def sample_neighbors(g: Graph, per_hop_caps, seeds, K: int, rng_seed: int) -> Subgraph:
    """K-hop expansion keeping at most ``per_hop_caps[h]`` sampled neighbors per node.

    Sampling is uniform without replacement and only kicks in where the degree
    exceeds the cap, so generous caps reproduce :func:`khop_subgraph` exactly.
    """
    caps = [int(c) for c in per_hop_caps]
    if len(caps) != K:
        raise ArgumentError(f"need one cap per hop: got {len(caps)} caps for K={K}")
    if any(c < 1 for c in caps):
        raise ArgumentError("per-hop caps must be >= 1")
    seeds = _check_seeds(g.n, seeds)
    rng = np.random.default_rng(rng_seed)
    in_set = np.zeros(g.n, dtype=bool)
    in_set[seeds] = True
    order = [seeds]
    offsets = [0, seeds.size]
    frontier = seeds
    for cap in caps:
        picked = []
        for v in frontier:
            nb = g.neighbors(v)
            if nb.size > cap:
                nb = np.sort(rng.choice(nb, size=cap, replace=False))
            picked.append(nb)
        if picked:
            cand = np.unique(np.concatenate(picked))
            new = cand[~in_set[cand]]
        else:
            new = np.empty(0, dtype=np.int64)
        in_set[new] = True
        order.append(new)
        offsets.append(offsets[-1] + new.size)
        frontier = new
    return _induce(g, np.concatenate(order), offsets)


def normalize_adjacency(sub, scheme: NormScheme) -> sp.csr_matrix:
    """Weight a (sub)graph's adjacency per ``scheme``.

    MEAN rows sum to one on nodes of positive degree; isolated nodes keep a
    zero row (their neighbor term vanishes, the kernel's node path still
    contributes). SYM_SELF increments degrees by one, matching the implicit
    self weight of the symmetric scheme. MAXPOOL has no matrix form.
    """
    if scheme == NormScheme.MAXPOOL:
        raise ArgumentError("maxpool is not a matrix normalization; it is applied inside the kernel")
    adj = sub.to_scipy()
    deg = np.asarray(adj.sum(axis=1)).ravel()
    if scheme == NormScheme.COUNT:
        return adj
    if scheme == NormScheme.MEAN:
        inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
        return sp.diags(inv) @ adj
    if scheme == NormScheme.SYM_SELF:
        s = 1.0 / np.sqrt(deg + 1.0)
        return sp.diags(s) @ adj @ sp.diags(s)
    raise ArgumentError(f"unknown normalization scheme {scheme!r}")
