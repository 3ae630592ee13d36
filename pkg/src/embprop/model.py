"""Label embedding tables and the EP-B aggregation functions.

Per-vertex functions (``label_type_embedding``, ``reconstruct_*``,
``node_representation``) follow the definitions literally with a fixed
summation order: neighbors by ascending id, labels by ascending index, all
in float64.  The ``*_matrix`` helpers express the same averages as sparse
row operators so a whole batch can be aggregated with one product; the
trainer uses those.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import (EmptyLabelsError, InvalidArgumentError, MissingRelationError,
                     NoNeighborsError, ShapeError)
from .graph import LabeledGraph, LabelVocabulary, ragged_gather

DEFAULT_DIMENSION = 128


@dataclass
class EmbeddingTable:
    """Lookup table of one label type; row ``j`` is the embedding of label ``j``."""

    type_id: int
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ShapeError("embedding matrix must be two-dimensional")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def num_rows(self) -> int:
        return self.matrix.shape[0]

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.type_id, self.matrix.copy())

    @classmethod
    def glorot(cls, type_id: int, num_rows: int, dim: int, rng) -> "EmbeddingTable":
        """Glorot-uniform init with fan-in ``num_rows`` and fan-out ``dim``."""
        limit = np.sqrt(6.0 / (num_rows + dim))
        return cls(type_id, rng.uniform(-limit, limit, size=(num_rows, dim)))


@dataclass
class RelationTable:
    """Edge-type vectors; ``vectors[i][t]`` is ``r_t`` for label type ``i``."""

    vectors: list[np.ndarray]

    def __post_init__(self):
        self.vectors = [np.asarray(v, dtype=np.float64) for v in self.vectors]

    @property
    def num_edge_types(self) -> int:
        return self.vectors[0].shape[0] if self.vectors else 0

    def copy(self) -> "RelationTable":
        return RelationTable([v.copy() for v in self.vectors])

    @classmethod
    def zeros(cls, num_edge_types: int, dims) -> "RelationTable":
        return cls([np.zeros((num_edge_types, d)) for d in dims])

    @classmethod
    def glorot(cls, num_edge_types: int, dims, rng) -> "RelationTable":
        return cls([rng.uniform(-np.sqrt(6.0 / (num_edge_types + d)), np.sqrt(6.0 / (num_edge_types + d)),
                                size=(num_edge_types, d)) for d in dims])


@dataclass
class NodeRepresentation:
    vector: np.ndarray
    offsets: dict[int, tuple[int, int]] = field(default_factory=dict)

    def slice(self, i: int) -> np.ndarray:
        start, length = self.offsets[i]
        return self.vector[start:start + length]


def init_tables(vocab: LabelVocabulary, rng, dimension: int = DEFAULT_DIMENSION,
                type_dimensions=None) -> list[EmbeddingTable]:
    """Randomly initialised tables, one per label type, sized to the vocabulary."""
    type_dimensions = dict(type_dimensions or {})
    tables = []
    for i, ltype in enumerate(vocab):
        dim = type_dimensions.get(i, type_dimensions.get(ltype.name, dimension))
        tables.append(EmbeddingTable.glorot(i, ltype.size, dim, rng))
    return tables


def label_type_embedding(table: EmbeddingTable, labels) -> np.ndarray:
    labels = sorted(labels)
    if not labels:
        raise EmptyLabelsError(f"empty label set for label type {table.type_id}")
    acc = np.zeros(table.dim)
    for l in labels:
        acc += table.matrix[l]
    return acc / len(labels)


def _used_neighbors(graph, v, sampled_neighbors):
    if sampled_neighbors is None:
        nbrs = graph.neighbors(v)
        etypes = graph.neighbor_edge_types(v)
    else:
        all_nbrs = graph.neighbors(v)
        wanted = np.unique(np.asarray(list(sampled_neighbors), dtype=np.int64))
        pos = np.searchsorted(all_nbrs, wanted)
        if len(wanted) and (pos.max() >= len(all_nbrs) or not np.array_equal(all_nbrs[pos], wanted)):
            raise InvalidArgumentError(f"sampled neighbors of {v} are not a subset of N({v})")
        nbrs = all_nbrs[pos]
        etypes = graph.neighbor_edge_types(v)[pos]
    if len(nbrs) == 0:
        raise NoNeighborsError(f"vertex {v} has no neighbors to reconstruct from")
    return nbrs, etypes


def reconstruct_from_neighbors(graph: LabeledGraph, table: EmbeddingTable, i: int,
                               neighbors) -> np.ndarray:
    """Average of the type-``i`` label embeddings over the neighbor multiset."""
    acc = np.zeros(table.dim)
    count = 0
    for u in sorted(int(u) for u in neighbors):
        for l in graph.vertex_labels(u, i):
            acc += table.matrix[l]
            count += 1
    if count == 0:
        raise NoNeighborsError("no neighbor labels to reconstruct from")
    return acc / count


def reconstruct_label_type_embedding(graph: LabeledGraph, table: EmbeddingTable, v: int, i: int,
                                     sampled_neighbors=None) -> np.ndarray:
    nbrs, _ = _used_neighbors(graph, v, sampled_neighbors)
    return reconstruct_from_neighbors(graph, table, i, nbrs)


def reconstruct_with_relations(graph: LabeledGraph, table: EmbeddingTable, relations: RelationTable,
                               v: int, i: int, sampled_neighbors=None) -> np.ndarray:
    """Reconstruction where every neighbor label is shifted by its edge's relation vector."""
    nbrs, etypes = _used_neighbors(graph, v, sampled_neighbors)
    rel = relations.vectors[i]
    acc = np.zeros(table.dim)
    count = 0
    for u, t in zip(nbrs, etypes):
        if t < 0 or t >= rel.shape[0]:
            raise MissingRelationError(f"no relation vector for edge type {t} of edge ({u}, {v})")
        for l in graph.vertex_labels(u, i):
            acc += table.matrix[l] + rel[t]
            count += 1
    if count == 0:
        raise NoNeighborsError(f"vertex {v} has no neighbor labels of type {i}")
    return acc / count


def _concat(parts, tables) -> NodeRepresentation:
    offsets, start = {}, 0
    for t, part in zip(tables, parts):
        offsets[t.type_id] = (start, t.dim)
        start += t.dim
    return NodeRepresentation(np.concatenate(parts), offsets)


def node_representation(graph: LabeledGraph, tables, v: int) -> NodeRepresentation:
    return _concat([label_type_embedding(t, graph.vertex_labels(v, t.type_id)) for t in tables], tables)


def inductive_node_representation(graph: LabeledGraph, tables, neighbors) -> NodeRepresentation:
    """Representation of a vertex absent from ``graph`` given its neighbors in ``graph``.

    Concatenates the reconstructions from the trained tables; nothing is
    updated.
    """
    neighbors = [int(u) for u in neighbors]
    if not neighbors:
        raise NoNeighborsError("new vertex has no neighbors in the trained graph")
    for u in neighbors:
        graph._check_vertex(u)
    return _concat([reconstruct_from_neighbors(graph, t, t.type_id, set(neighbors)) for t in tables],
                   tables)


# batched operators --------------------------------------------------------

def label_mean_matrix(graph: LabeledGraph, i: int, vertices, num_labels: int | None = None) -> sp.csr_matrix:
    """Sparse ``P`` with ``(P @ E)[r] = h_i(vertices[r])``."""
    indptr, indices = graph.label_csr[i]
    new_indptr, labels, _ = ragged_gather(indptr, indices, vertices)
    counts = np.diff(new_indptr)
    if np.any(counts == 0):
        raise EmptyLabelsError(f"vertex without type-{i} labels; run dummy completion first")
    data = np.repeat(1.0 / counts, counts)
    if num_labels is None:
        num_labels = int(graph.label_csr[i][1].max(initial=-1)) + 1
    return sp.csr_matrix((data, labels, new_indptr), shape=(len(counts), num_labels))


def neighbor_lists_csr(graph: LabeledGraph, vertices):
    """Full neighbor lists of ``vertices`` as ``(indptr, neighbors, edge_types)``."""
    indptr, nbrs, pos = ragged_gather(graph.adj_indptr, graph.adj_indices, vertices)
    return indptr, nbrs, graph.adj_edge_types[pos]


def reconstruction_matrix(graph: LabeledGraph, i: int, nbr_indptr, nbrs, num_labels: int,
                          nbr_edge_types=None, num_edge_types: int = 0):
    """Sparse operators for ``h~_i`` over rows given as neighbor lists.

    Returns ``(A, C)`` with ``(A @ E + C @ R)[r]`` the (relation-aware)
    reconstruction for row ``r``. ``C`` is ``None`` unless edge types are
    given. Rows with no neighbor labels are all-zero.
    """
    rows = np.repeat(np.arange(len(nbr_indptr) - 1), np.diff(nbr_indptr))
    lab_indptr, lab_indices = graph.label_csr[i]
    per_nbr = lab_indptr[nbrs + 1] - lab_indptr[nbrs]
    _, labels, _ = ragged_gather(lab_indptr, lab_indices, nbrs)
    label_rows = np.repeat(rows, per_nbr)
    n_rows = len(nbr_indptr) - 1
    totals = np.bincount(label_rows, minlength=n_rows).astype(np.float64)
    A = sp.csr_matrix((np.ones(len(labels)), (label_rows, labels)), shape=(n_rows, num_labels))
    A.sum_duplicates()
    row_of_entry = np.repeat(np.arange(n_rows), np.diff(A.indptr))
    A.data = A.data / totals[row_of_entry]
    C = None
    if nbr_edge_types is not None:
        if len(nbr_edge_types) and (nbr_edge_types.min() < 0 or nbr_edge_types.max() >= num_edge_types):
            raise MissingRelationError("edge without a relation vector in reconstruction")
        C = sp.csr_matrix((per_nbr.astype(np.float64), (rows, nbr_edge_types)),
                          shape=(n_rows, num_edge_types))
        C.sum_duplicates()
        row_of_entry = np.repeat(np.arange(n_rows), np.diff(C.indptr))
        C.data = C.data / totals[row_of_entry]
    return A, C


def node_representations(graph: LabeledGraph, tables, vertices=None) -> np.ndarray:
    """Matrix whose rows are the node representations of ``vertices`` (default: all)."""
    if vertices is None:
        vertices = np.arange(graph.num_vertices)
    blocks = []
    for t in tables:
        P = label_mean_matrix(graph, t.type_id, vertices, t.num_rows)
        blocks.append(P @ t.matrix)
    return np.hstack(blocks) if blocks else np.zeros((len(vertices), 0))


def representation_offsets(tables) -> dict[int, tuple[int, int]]:
    offsets, start = {}, 0
    for t in tables:
        offsets[t.type_id] = (start, t.dim)
        start += t.dim
    return offsets


def check_tables(graph: LabeledGraph, vocab: LabelVocabulary, tables) -> None:
    if len(tables) != graph.num_label_types or len(vocab) != graph.num_label_types:
        raise ShapeError("need exactly one table per label type")
    for i, (t, ltype) in enumerate(zip(tables, vocab)):
        if t.type_id != i:
            raise ShapeError(f"table {i} has type id {t.type_id}")
        if t.num_rows != ltype.size:
            raise ShapeError(f"table {i} has {t.num_rows} rows, vocabulary has {ltype.size} labels")
