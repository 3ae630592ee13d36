"""Attributed graphs with k label types and dummy-label completion.

A :class:`LabeledGraph` stores the (deduplicated, self-loop free) edge list,
the neighbor relation used for reconstruction as a CSR adjacency, and for
every label type the label set of each vertex, also in CSR form.  Everything
is immutable after construction.
"""
from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, InvalidVertexError

logger = logging.getLogger(__name__)

DUMMY_PREFIX = "__dummy__"


def ragged_gather(indptr, indices, rows):
    """Concatenate CSR rows ``rows``; returns ``(new_indptr, values, positions)``.

    ``positions`` are the indices into ``indices`` that were gathered, which
    lets callers pick up parallel arrays (edge types, say) stored alongside.
    """
    rows = np.asarray(rows, dtype=np.int64)
    starts = indptr[rows]
    lengths = indptr[rows + 1] - starts
    new_indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    np.cumsum(lengths, out=new_indptr[1:])
    total = int(new_indptr[-1])
    positions = np.repeat(starts - new_indptr[:-1], lengths) + np.arange(total, dtype=np.int64)
    return new_indptr, indices[positions], positions


def _labels_to_csr(per_vertex, num_vertices):
    indptr = np.zeros(num_vertices + 1, dtype=np.int64)
    for v, labs in enumerate(per_vertex):
        indptr[v + 1] = indptr[v] + len(labs)
    indices = np.fromiter((l for labs in per_vertex for l in labs), dtype=np.int64,
                          count=int(indptr[-1]))
    return indptr, indices


class LabeledGraph:
    """Immutable graph with per-type vertex labels.

    Parameters
    ----------
    num_vertices:
        Number of vertices; ids are ``0 .. num_vertices - 1``.
    edges:
        Iterable of ``(source, target)`` pairs.
    labels:
        One entry per label type. Each entry is either a sequence indexed by
        vertex or a mapping ``vertex -> iterable of label indices``; vertices
        missing from a mapping get an empty label set.
    directed:
        If true, ``N(v)`` is the set of in-neighbors of ``v``.
    edge_types:
        Optional edge-type id per input edge.

    Duplicate edges collapse to one (the first occurrence keeps its edge
    type) and self-loops are dropped with a warning.
    """

    def __init__(self, num_vertices: int, edges, labels=(), directed: bool = False,
                 edge_types=None):
        if num_vertices < 0:
            raise InvalidArgumentError("num_vertices must be non-negative")
        self.num_vertices = int(num_vertices)
        self.directed = bool(directed)

        edge_arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges,
                              dtype=np.int64).reshape(-1, 2)
        types_arr = None
        if edge_types is not None:
            types_arr = np.asarray(list(edge_types), dtype=np.int64)
            if len(types_arr) != len(edge_arr):
                raise InvalidArgumentError("edge_types must have one entry per edge")
            if len(types_arr) and types_arr.min() < 0:
                raise InvalidArgumentError("edge types must be non-negative")
        if len(edge_arr) and (edge_arr.min() < 0 or edge_arr.max() >= self.num_vertices):
            raise InvalidVertexError("edge endpoint out of range")

        loops = edge_arr[:, 0] == edge_arr[:, 1]
        self.num_self_loops = int(loops.sum())
        if self.num_self_loops:
            logger.warning("dropping %d self-loop(s)", self.num_self_loops)
            edge_arr = edge_arr[~loops]
            if types_arr is not None:
                types_arr = types_arr[~loops]

        key = edge_arr if self.directed else np.sort(edge_arr, axis=1)
        if len(key):
            _, first = np.unique(key, axis=0, return_index=True)
            keep = np.sort(first)
        else:
            keep = np.zeros(0, dtype=np.int64)
        self.num_duplicate_edges = len(edge_arr) - len(keep)
        # canonical storage: unique edges in first-appearance order
        self.edges = key[keep] if not self.directed else edge_arr[keep]
        self.edges.setflags(write=False)
        self.edge_types = None if types_arr is None else types_arr[keep]
        if self.edge_types is not None:
            self.edge_types.setflags(write=False)

        self._build_adjacency()
        self._set_labels(labels)

    # construction helpers ------------------------------------------------

    def _build_adjacency(self):
        src, dst = self.edges[:, 0], self.edges[:, 1]
        etypes = self.edge_types if self.edge_types is not None else np.full(len(src), -1)
        if self.directed:
            owner, nbr, et = dst, src, etypes
        else:
            owner = np.concatenate([dst, src])
            nbr = np.concatenate([src, dst])
            et = np.concatenate([etypes, etypes])
        order = np.lexsort((nbr, owner))
        owner, nbr, et = owner[order], nbr[order], et[order]
        indptr = np.zeros(self.num_vertices + 1, dtype=np.int64)
        np.cumsum(np.bincount(owner, minlength=self.num_vertices), out=indptr[1:])
        self.adj_indptr = indptr
        self.adj_indices = nbr.astype(np.int64)
        self.adj_edge_types = et.astype(np.int64)
        for arr in (self.adj_indptr, self.adj_indices, self.adj_edge_types):
            arr.setflags(write=False)

    def _set_labels(self, labels):
        per_type = []
        for entry in labels:
            rows = [()] * self.num_vertices
            items = entry.items() if isinstance(entry, Mapping) else enumerate(entry)
            for v, labs in items:
                if not 0 <= v < self.num_vertices:
                    raise InvalidVertexError(f"label assigned to unknown vertex {v}")
                labs = tuple(sorted(set(int(l) for l in labs)))
                if labs and labs[0] < 0:
                    raise InvalidArgumentError("label indices must be non-negative")
                rows[v] = labs
            per_type.append(tuple(rows))
        self.labels = tuple(per_type)
        self.label_csr = tuple(_labels_to_csr(rows, self.num_vertices) for rows in self.labels)
        for indptr, indices in self.label_csr:
            indptr.setflags(write=False)
            indices.setflags(write=False)

    def with_labels(self, labels) -> "LabeledGraph":
        """Return a copy of this graph with the label assignment replaced."""
        return LabeledGraph(self.num_vertices, self.edges, labels, self.directed,
                            self.edge_types)

    # queries -------------------------------------------------------------

    @property
    def num_label_types(self) -> int:
        return len(self.labels)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def has_edge_types(self) -> bool:
        return self.edge_types is not None

    def degrees(self) -> np.ndarray:
        return np.diff(self.adj_indptr)

    def _check_vertex(self, v):
        if not 0 <= v < self.num_vertices:
            raise InvalidVertexError(f"vertex {v} out of range [0, {self.num_vertices})")

    def _check_type(self, i):
        if not 0 <= i < self.num_label_types:
            raise InvalidArgumentError(f"label type {i} out of range [0, {self.num_label_types})")

    def neighbors(self, v: int) -> np.ndarray:
        """Sorted array of ``N(v)`` (in-neighbors when directed)."""
        self._check_vertex(v)
        return self.adj_indices[self.adj_indptr[v]:self.adj_indptr[v + 1]]

    def neighbor_edge_types(self, v: int) -> np.ndarray:
        """Edge type of ``(u, v)`` for each ``u`` in :meth:`neighbors`, ``-1`` if untyped."""
        self._check_vertex(v)
        return self.adj_edge_types[self.adj_indptr[v]:self.adj_indptr[v + 1]]

    def vertex_labels(self, v: int, i: int) -> tuple[int, ...]:
        self._check_vertex(v)
        self._check_type(i)
        return self.labels[i][v]

    def neighbor_labels(self, v: int, i: int) -> list[int]:
        """Multiset ``l_i(N(v))`` as a list, neighbors ascending then labels ascending."""
        self._check_type(i)
        out = []
        for u in self.neighbors(v):
            out.extend(self.labels[i][u])
        return out

    def __eq__(self, other):
        if not isinstance(other, LabeledGraph):
            return NotImplemented
        same_types = (self.edge_types is None) == (other.edge_types is None) and (
            self.edge_types is None or np.array_equal(self.edge_types, other.edge_types))
        return (self.num_vertices == other.num_vertices and self.directed == other.directed
                and np.array_equal(self.edges, other.edges) and same_types
                and self.labels == other.labels)

    def __repr__(self):
        kind = "directed" if self.directed else "undirected"
        return (f"LabeledGraph({self.num_vertices} vertices, {self.num_edges} {kind} edges, "
                f"k={self.num_label_types})")


@dataclass(frozen=True)
class LabelType:
    """Vocabulary of one label type: ``labels[j]`` is the name of label ``j``."""

    name: str
    labels: tuple[str, ...]
    num_real: int
    dummy_owner: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "_index", {lab: j for j, lab in enumerate(self.labels)})
        if len(self._index) != len(self.labels):
            raise InvalidArgumentError(f"duplicate labels in type {self.name!r}")

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def num_dummy(self) -> int:
        return len(self.labels) - self.num_real

    def index(self, label: str) -> int:
        return self._index[label]

    def __contains__(self, label):
        return label in self._index

    @classmethod
    def from_labels(cls, name: str, labels: Iterable[str]) -> "LabelType":
        labels = tuple(labels)
        return cls(name, labels, num_real=len(labels))


@dataclass(frozen=True)
class LabelVocabulary:
    types: tuple[LabelType, ...]

    def __len__(self):
        return len(self.types)

    def __getitem__(self, i) -> LabelType:
        return self.types[i]

    def __iter__(self):
        return iter(self.types)

    @property
    def names(self) -> list[str]:
        return [t.name for t in self.types]

    def sizes(self) -> list[int]:
        return [t.size for t in self.types]


def complete_with_dummy_labels(graph: LabeledGraph, vocab: LabelVocabulary):
    """Give every (vertex, type) pair with no labels a fresh dummy label.

    Dummy labels are appended after the existing labels of their type, so
    indices stay contiguous and dummies occupy the highest indices. Returns
    ``(graph, vocab)``; both are returned unchanged when nothing is missing.
    """
    if len(vocab) != graph.num_label_types:
        raise InvalidArgumentError("vocabulary and graph disagree on the number of label types")
    new_labels, new_types, changed = [], [], False
    for i, ltype in enumerate(vocab):
        rows = list(graph.labels[i])
        names = list(ltype.labels)
        owners = dict(ltype.dummy_owner)
        for v, labs in enumerate(rows):
            if labs:
                continue
            name = f"{DUMMY_PREFIX}{v}"
            while name in ltype:
                name = "_" + name
            owners[len(names)] = v
            rows[v] = (len(names),)
            names.append(name)
        if len(names) != ltype.size:
            changed = True
            logger.debug("type %r: added %d dummy labels", ltype.name, len(names) - ltype.size)
        new_labels.append(rows)
        new_types.append(LabelType(ltype.name, tuple(names), ltype.num_real, owners))
    if not changed:
        return graph, vocab
    return graph.with_labels(new_labels), LabelVocabulary(tuple(new_types))
