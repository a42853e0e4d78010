"""Graph representation and the two propagation operators behind the streams.

The static operator is the symmetric-normalized adjacency with self-loops,
A_hat = D^{-1/2} (A + I) D^{-1/2}; the adaptive operator is a row-normalized
relu(E E^T) built from learnable node embeddings, so it stays differentiable
with respect to the embedding table.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor, add, divide, matmul, relu, transpose
from .errors import ParseError, ValidationError


@dataclass(frozen=True)
class SpatialGraph:
    """Undirected weighted graph on `n_nodes` nodes.

    Edges are stored as (src, dst, weight) with weight >= 0; each record
    contributes to both directions of the dense adjacency.  Self-loops are
    rejected because normalization adds its own identity term.
    """

    n_nodes: int
    edges: list = field(default_factory=list)

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ValidationError(f"graph needs at least one node, got {self.n_nodes}")
        for src, dst, weight in self.edges:
            if not (0 <= src < self.n_nodes and 0 <= dst < self.n_nodes):
                raise ValidationError(
                    f"edge ({src},{dst}) references a node >= n_nodes={self.n_nodes}")
            if src == dst:
                raise ValidationError(f"self-loop on node {src} not allowed")
            if weight < 0:
                raise ValidationError(f"edge ({src},{dst}) has negative weight {weight}")

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_nodes, self.n_nodes))
        for src, dst, weight in self.edges:
            a[src, dst] += weight
            a[dst, src] += weight
        return a


@dataclass(frozen=True)
class NodeEmbeddings:
    """Learnable per-node embedding table, one row per node."""

    table: Tensor

    def __post_init__(self):
        if self.table.data.ndim != 2:
            raise ValidationError(
                f"embedding table must be 2-D [nodes x width], got {self.table.shape}")

    @property
    def n_nodes(self) -> int:
        return self.table.shape[0]

    @property
    def width(self) -> int:
        return self.table.shape[1]


def normalize_adjacency(graph: SpatialGraph) -> Tensor:
    """Symmetric normalization with self-loops: D^{-1/2} (A + I) D^{-1/2}.

    Isolated nodes are handled by the identity term (degree 1).  The result is
    a constant (non-learnable) tensor, deterministic in the edge list.
    """
    a = graph.adjacency()
    if np.any(a < 0):
        raise ValidationError("adjacency weights must be nonnegative")
    a_tilde = a + np.eye(graph.n_nodes)
    d_inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    a_hat = a_tilde * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]
    return Tensor(a_hat)


def adaptive_adjacency(emb: NodeEmbeddings, tape: Tape | None = None) -> Tensor:
    """Row-normalized relu(E E^T); rows that relu to all-zero fall back to 1/N.

    The fallback is blended in through constants so the non-degenerate rows
    keep exact gradients to the embedding table: with z the 0/1 indicator of
    an all-zero row, A = (relu(E E^T) + z/N) / (rowsum + z).
    """
    n = emb.n_nodes
    scores = relu(matmul(emb.table, transpose(emb.table, (1, 0), tape), tape), tape)
    ones_col = Tensor(np.ones((n, 1)))
    row_sum = matmul(scores, ones_col, tape)                      # [n, 1]
    zero_rows = (row_sum.data == 0.0).astype(np.float64)          # constant mask
    zero_full = np.repeat(zero_rows, n, axis=1)                  # [n, n]
    ones_row = Tensor(np.ones((1, n)))
    denom = add(matmul(row_sum, ones_row, tape), Tensor(zero_full), tape)
    numer = add(scores, Tensor(zero_full / n), tape)
    return divide(numer, denom, tape)


def load_graph(edge_list_path, n_nodes: int) -> SpatialGraph:
    """Read an edge-list CSV (`src,dst,weight`, 0-based) into a SpatialGraph.

    Duplicate (src,dst) records have their weights summed; orientation is
    ignored for the duplicate check since edges are undirected.
    """
    merged: dict[tuple[int, int], float] = {}
    with open(edge_list_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["src", "dst", "weight"]:
            raise ParseError(f"{edge_list_path}: line 1: expected header 'src,dst,weight'")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise ParseError(f"{edge_list_path}: line {lineno}: expected 3 fields, got {len(row)}")
            try:
                src, dst, weight = int(row[0]), int(row[1]), float(row[2])
            except ValueError as exc:
                raise ParseError(f"{edge_list_path}: line {lineno}: {exc}") from exc
            if not (0 <= src < n_nodes and 0 <= dst < n_nodes):
                raise ValidationError(
                    f"{edge_list_path}: line {lineno}: node index outside [0, {n_nodes})")
            if src == dst:
                raise ValidationError(f"{edge_list_path}: line {lineno}: self-loop on node {src}")
            if weight < 0:
                raise ValidationError(
                    f"{edge_list_path}: line {lineno}: negative weight {weight}")
            key = (src, dst) if src <= dst else (dst, src)
            merged[key] = merged.get(key, 0.0) + weight
    edges = [(s, d, w) for (s, d), w in merged.items()]
    return SpatialGraph(n_nodes=n_nodes, edges=edges)


def write_edge_list(path, graph: SpatialGraph) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["src", "dst", "weight"])
        for src, dst, weight in graph.edges:
            writer.writerow([src, dst, repr(float(weight))])
