"""Reading and writing graphs, label files, embeddings, splits and metrics.

Input grammar (``DELIM`` defaults to a tab; lines starting with ``#`` and
blank lines are ignored):

* edge file:  ``<src>DELIM<dst>[DELIM<edge_type>]``
* label file: ``<vertex>DELIM<label1>DELIM<label2>...``
* class file: ``<vertex>DELIM<class>[,<class>...]``
* vertex file (optional): ``<vertex>`` per line, fixes the vertex set/order

A manifest ties these together as flat ``key = value`` lines::

    edges = cora.edges
    directed = false
    node_id_labels = true
    label_type.words = cora.words
    classes = cora.classes
"""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rng_streams
from .errors import (ConfigError, FormatError, InvalidRemovalError, ParseError,
                     UnknownVertexError)
from .graph import LabeledGraph, LabelType, LabelVocabulary

logger = logging.getLogger(__name__)

NODE_ID_TYPE = "node_id"
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_bool(value: str) -> bool:
    v = str(value).strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def read_key_values(path) -> dict[str, str]:
    """Flat ``key = value`` file; later duplicates are an error."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(path, no, "expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in out:
                raise ParseError(path, no, f"duplicate key {key!r}")
            out[key] = value
    return out


def _decode_delimiter(text: str) -> str:
    return {"\\t": "\t", "tab": "\t", "space": " "}.get(text, text)


@dataclass
class DatasetManifest:
    edge_path: Path
    label_types: list[tuple[str, Path]] = field(default_factory=list)
    class_path: Path | None = None
    directed: bool = False
    delimiter: str = "\t"
    node_id_labels: bool = True
    vertex_path: Path | None = None

    def __post_init__(self):
        names = [n for n, _ in self.label_types]
        if self.node_id_labels:
            names.append(NODE_ID_TYPE)
        if len(set(names)) != len(names):
            raise ConfigError(f"label type names must be unique: {names}")

    def missing_files(self) -> list[Path]:
        paths = [self.edge_path, *(p for _, p in self.label_types), self.class_path, self.vertex_path]
        return [p for p in paths if p is not None and not Path(p).is_file()]

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(path)
        kv = read_key_values(path)
        base = path.parent

        def resolve(p):
            return (base / p) if not os.path.isabs(p) else Path(p)

        if "edges" not in kv:
            raise ConfigError(f"{path}: manifest needs an 'edges' entry")
        known = {"edges", "directed", "delimiter", "node_id_labels", "classes", "vertices"}
        label_types = []
        for key, value in kv.items():
            if key.startswith("label_type."):
                label_types.append((key[len("label_type."):], resolve(value)))
            elif key not in known:
                raise ConfigError(f"{path}: unknown manifest key {key!r}")
        return cls(
            edge_path=resolve(kv["edges"]),
            label_types=label_types,
            class_path=resolve(kv["classes"]) if "classes" in kv else None,
            directed=parse_bool(kv.get("directed", "false")),
            delimiter=_decode_delimiter(kv.get("delimiter", "\\t")),
            node_id_labels=parse_bool(kv.get("node_id_labels", "true")),
            vertex_path=resolve(kv["vertices"]) if "vertices" in kv else None,
        )

    def write(self, path) -> None:
        base = Path(path).parent
        delim = {"\t": "\\t", " ": "space"}.get(self.delimiter, self.delimiter)

        def rel(p):
            return os.path.relpath(p, base)

        lines = [f"edges = {rel(self.edge_path)}", f"directed = {str(self.directed).lower()}",
                 f"delimiter = {delim}", f"node_id_labels = {str(self.node_id_labels).lower()}"]
        if self.vertex_path is not None:
            lines.append(f"vertices = {rel(self.vertex_path)}")
        lines += [f"label_type.{name} = {rel(p)}" for name, p in self.label_types]
        if self.class_path is not None:
            lines.append(f"classes = {rel(self.class_path)}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class ParsedDataset:
    graph: LabeledGraph
    vocab: LabelVocabulary
    classes: list[frozenset[int]]
    class_names: list[str]
    vertex_names: list[str]
    edge_type_names: list[str] | None = None
    raw_edge_count: int = 0

    def __post_init__(self):
        self._vertex_index = {name: v for v, name in enumerate(self.vertex_names)}
        if len(self._vertex_index) != len(self.vertex_names):
            raise FormatError("vertex names are not unique")

    def vertex_id(self, name: str) -> int:
        return self._vertex_index[name]

    def has_vertex(self, name: str) -> bool:
        return name in self._vertex_index

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def stats(self) -> dict:
        return {
            "vertices": self.graph.num_vertices,
            "edges": self.graph.num_edges,
            "raw_edge_lines": self.raw_edge_count,
            "classes": self.num_classes,
            "label_types": self.graph.num_label_types,
            "directed": self.graph.directed,
        }


def _records(path, delimiter):
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split(delimiter) if delimiter != " " else line.split()
            yield no, [f.strip() for f in fields]


class _Indexer:
    def __init__(self):
        self.names, self.index = [], {}

    def get(self, name):
        idx = self.index.get(name)
        if idx is None:
            idx = self.index[name] = len(self.names)
            self.names.append(name)
        return idx


def load_dataset(manifest: DatasetManifest, directed: bool | None = None) -> ParsedDataset:
    """Parse the files named by ``manifest``; ``directed`` overrides the manifest's flag."""
    missing = manifest.missing_files()
    if missing:
        raise FileNotFoundError(missing[0])
    directed = manifest.directed if directed is None else directed
    delim = manifest.delimiter
    vertices = _Indexer()
    fixed_vertices = manifest.vertex_path is not None
    if fixed_vertices:
        for no, fields in _records(manifest.vertex_path, delim):
            if len(fields) != 1 or not fields[0]:
                raise ParseError(manifest.vertex_path, no, "expected one vertex name")
            if fields[0] in vertices.index:
                raise ParseError(manifest.vertex_path, no, f"duplicate vertex {fields[0]!r}")
            vertices.get(fields[0])

    edges, types = [], []
    edge_types = _Indexer()
    typed = None
    raw = 0
    for no, fields in _records(manifest.edge_path, delim):
        if len(fields) not in (2, 3) or not all(fields):
            raise ParseError(manifest.edge_path, no, "expected '<src> <dst> [<edge_type>]'")
        if typed is None:
            typed = len(fields) == 3
        elif typed != (len(fields) == 3):
            raise ParseError(manifest.edge_path, no, "mixing typed and untyped edges")
        ends = []
        for name in fields[:2]:
            if fixed_vertices and name not in vertices.index:
                raise UnknownVertexError(manifest.edge_path, no, f"unknown vertex {name!r}")
            ends.append(vertices.get(name))
        edges.append(ends)
        if typed:
            types.append(edge_types.get(fields[2]))
        raw += 1

    def vertex_of(path, no, name):
        if name not in vertices.index:
            raise UnknownVertexError(path, no, f"unknown vertex {name!r}")
        return vertices.index[name]

    label_maps, label_types = [], []
    for name, path in manifest.label_types:
        idx = _Indexer()
        assignment: dict[int, set[int]] = {}
        for no, fields in _records(path, delim):
            if not fields[0]:
                raise ParseError(path, no, "missing vertex name")
            v = vertex_of(path, no, fields[0])
            labs = assignment.setdefault(v, set())
            labs.update(idx.get(f) for f in fields[1:] if f)
        label_maps.append(assignment)
        label_types.append(LabelType.from_labels(name, idx.names))

    n = len(vertices.names)
    if manifest.node_id_labels:
        label_maps.insert(0, {v: {v} for v in range(n)})
        label_types.insert(0, LabelType.from_labels(NODE_ID_TYPE, vertices.names))

    classes = [frozenset()] * n
    class_idx = _Indexer()
    if manifest.class_path is not None:
        for no, fields in _records(manifest.class_path, delim):
            if len(fields) != 2 or not fields[1]:
                raise ParseError(manifest.class_path, no, "expected '<vertex> <class>[,<class>...]'")
            v = vertex_of(manifest.class_path, no, fields[0])
            classes[v] = classes[v] | frozenset(class_idx.get(c.strip()) for c in fields[1].split(",") if c.strip())

    graph = LabeledGraph(n, np.asarray(edges, dtype=np.int64).reshape(-1, 2), label_maps, directed,
                         types if typed else None)
    ds = ParsedDataset(graph, LabelVocabulary(tuple(label_types)), classes, class_idx.names,
                       vertices.names, edge_types.names if typed else None, raw)
    logger.info("loaded %s: %d vertices, %d edges (%d lines, %d duplicates, %d self-loops)",
                manifest.edge_path, n, graph.num_edges, raw, graph.num_duplicate_edges,
                graph.num_self_loops)
    return ds


def save_dataset(dataset: ParsedDataset, directory, name: str = "dataset") -> Path:
    """Write ``dataset`` in the canonical grammar; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    vnames = dataset.vertex_names
    for v in vnames:
        if any(ch in v for ch in "\t\n,") or not v:
            raise FormatError(f"vertex name {v!r} cannot be written")
    graph, vocab = dataset.graph, dataset.vocab
    node_ids = len(vocab) > 0 and vocab[0].name == NODE_ID_TYPE and all(
        graph.labels[0][v] == (v,) for v in range(graph.num_vertices)) and list(vocab[0].labels) == vnames

    vertex_path = directory / f"{name}.vertices"
    vertex_path.write_text("".join(f"{v}\n" for v in vnames), encoding="utf-8")
    edge_path = directory / f"{name}.edges"
    with open(edge_path, "w", encoding="utf-8") as fh:
        for e, (s, t) in enumerate(graph.edges):
            extra = f"\t{dataset.edge_type_names[graph.edge_types[e]]}" if graph.has_edge_types else ""
            fh.write(f"{vnames[s]}\t{vnames[t]}{extra}\n")
    label_types = []
    for i, ltype in enumerate(vocab):
        if i == 0 and node_ids:
            continue
        path = directory / f"{name}.labels.{ltype.name}"
        with open(path, "w", encoding="utf-8") as fh:
            for v in range(graph.num_vertices):
                labs = graph.labels[i][v]
                if labs:
                    fh.write("\t".join([vnames[v], *(ltype.labels[l] for l in labs)]) + "\n")
        label_types.append((ltype.name, path))
    class_path = None
    if dataset.class_names:
        class_path = directory / f"{name}.classes"
        with open(class_path, "w", encoding="utf-8") as fh:
            for v, cls in enumerate(dataset.classes):
                if cls:
                    fh.write(f"{vnames[v]}\t{','.join(dataset.class_names[c] for c in sorted(cls))}\n")
    manifest = DatasetManifest(edge_path, label_types, class_path, graph.directed, "\t",
                               node_ids, vertex_path)
    manifest_path = directory / f"{name}.manifest"
    manifest.write(manifest_path)
    return manifest_path


# embeddings ---------------------------------------------------------------

def save_embeddings(ids, matrix, path) -> None:
    """Header ``<rows> <dim>`` then ``<id> <v_0> ... <v_dim-1>`` with shortest round-trip floats."""
    matrix = np.asarray(matrix, dtype=np.float64)
    ids = [str(i) for i in ids]
    if matrix.ndim != 2 or matrix.shape[0] != len(ids):
        raise FormatError("need one id per embedding row")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{matrix.shape[0]} {matrix.shape[1]}\n")
        for name, row in zip(ids, matrix):
            if not name or any(ch.isspace() for ch in name):
                raise FormatError(f"id {name!r} contains whitespace")
            fh.write(name + " " + " ".join(repr(float(x)) for x in row) + "\n")


def load_embeddings(path) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FormatError(f"{path}: missing '<rows> <dim>' header")
        try:
            rows, dim = int(header[0]), int(header[1])
        except ValueError as exc:
            raise FormatError(f"{path}: bad header {header}") from exc
        ids, data = [], []
        for no, line in enumerate(fh, 2):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != dim + 1:
                raise FormatError(f"{path}:{no}: expected {dim} values, got {len(fields) - 1}")
            ids.append(fields[0])
            try:
                data.append([float(x) for x in fields[1:]])
            except ValueError as exc:
                raise FormatError(f"{path}:{no}: {exc}") from exc
    if len(ids) != rows:
        raise FormatError(f"{path}: header announces {rows} rows, found {len(ids)}")
    return ids, np.asarray(data, dtype=np.float64).reshape(rows, dim)


def write_split(split, path, vertex_names=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v, role in split.roles():
            fh.write(f"{vertex_names[v] if vertex_names else v}\t{role}\n")


def read_split(path) -> dict[str, list[str]]:
    roles: dict[str, list[str]] = {"train": [], "test": [], "val": []}
    for no, fields in _records(path, "\t"):
        if len(fields) != 2 or fields[1] not in roles:
            raise ParseError(path, no, "expected '<vertex> <train|test|val>'")
        roles[fields[1]].append(fields[0])
    return roles


def write_metrics(reports, path) -> None:
    """One ``run_id accuracy micro_f1 macro_f1`` line per run plus a mean±std summary."""
    with open(path, "w", encoding="utf-8") as fh:
        for run, r in enumerate(reports):
            fh.write(f"{run}\t{r.accuracy!r}\t{r.micro_f1!r}\t{r.macro_f1!r}\n")
        fh.write("mean±std")
        for name in ("accuracy", "micro_f1", "macro_f1"):
            vals = [getattr(r, name) for r in reports]
            fh.write(f"\t{float(np.mean(vals))!r}±{float(np.std(vals))!r}")
        fh.write("\n")


# inductive removal ---------------------------------------------------------

@dataclass
class HeldOutNodes:
    """Vertices removed before training, with what is needed to embed them later."""

    names: list[str]
    labels: list[list[tuple[str, ...]]]        # per vertex, per label type (label names)
    classes: list[frozenset[int]]
    neighbors: list[list[str]]                  # original N(v), by vertex name

    def __len__(self):
        return len(self.names)


def remove_nodes_for_inductive(dataset: ParsedDataset, fraction: float | None = None, ids=None,
                               seed: int = 0):
    """Split ``dataset`` into a training dataset and the removed vertices.

    Either ``fraction`` (``floor(fraction * |V|)`` vertices drawn uniformly)
    or explicit vertex ``ids`` select the removed vertices. The training
    graph keeps the remaining vertices in their original order; label types
    keep only labels still used by some remaining vertex.
    """
    n = dataset.graph.num_vertices
    if (fraction is None) == (ids is None):
        raise InvalidRemovalError("give exactly one of fraction or ids")
    if fraction is not None:
        if not 0 <= fraction < 1:
            raise InvalidRemovalError(f"fraction must lie in [0, 1), got {fraction}")
        count = math.floor(fraction * n)
        removed = rng_streams.stream(seed, "removal").choice(n, size=count, replace=False)
    else:
        removed = np.asarray(sorted(set(int(v) for v in ids)), dtype=np.int64)
        if len(removed) and (removed.min() < 0 or removed.max() >= n):
            raise InvalidRemovalError("vertex id out of range")
    removed = np.sort(removed)
    if len(removed) >= n:
        raise InvalidRemovalError("cannot remove every vertex")
    graph, vocab = dataset.graph, dataset.vocab
    gone = np.zeros(n, dtype=bool)
    gone[removed] = True
    keep = np.flatnonzero(~gone)
    new_id = -np.ones(n, dtype=np.int64)
    new_id[keep] = np.arange(len(keep))

    held = HeldOutNodes(
        names=[dataset.vertex_names[v] for v in removed],
        labels=[[tuple(vocab[i].labels[l] for l in graph.labels[i][v]) for i in range(len(vocab))]
                for v in removed],
        classes=[dataset.classes[v] for v in removed],
        neighbors=[[dataset.vertex_names[u] for u in graph.neighbors(v)] for v in removed],
    )

    emask = ~(gone[graph.edges[:, 0]] | gone[graph.edges[:, 1]])
    edges = new_id[graph.edges[emask]]
    etypes = graph.edge_types[emask] if graph.has_edge_types else None

    new_labels, new_types = [], []
    for i, ltype in enumerate(vocab):
        used = sorted({l for v in keep for l in graph.labels[i][v]})
        remap = {l: j for j, l in enumerate(used)}
        new_labels.append([tuple(remap[l] for l in graph.labels[i][v]) for v in keep])
        real = [l for l in used if l < ltype.num_real]
        owners = {remap[l]: int(new_id[o]) for l, o in ltype.dummy_owner.items() if l in remap}
        new_types.append(LabelType(ltype.name, tuple(ltype.labels[l] for l in used), len(real), owners))

    train_graph = LabeledGraph(len(keep), edges, new_labels, graph.directed, etypes)
    train = ParsedDataset(train_graph, LabelVocabulary(tuple(new_types)),
                          [dataset.classes[v] for v in keep], list(dataset.class_names),
                          [dataset.vertex_names[v] for v in keep], dataset.edge_type_names,
                          int(emask.sum()))
    return train, held


# synthetic data -------------------------------------------------------------

def make_toy_citation_dataset(num_vertices: int = 300, num_classes: int = 3, num_words: int = 120,
                              words_per_vertex: int = 8, mean_degree: float = 4.0,
                              homophily: float = 0.85, topic_purity: float = 0.7,
                              seed: int = 0, directed: bool = False) -> ParsedDataset:
    """Small citation-style graph with node-id and word label types.

    Vertices get one class each; edges join same-class vertices with
    probability ``homophily``; a ``topic_purity`` share of each vertex's
    words comes from its class's slice of the vocabulary. Some vertices end
    up without words, exercising dummy labels.
    """
    rng = np.random.default_rng(seed)
    cls = rng.integers(0, num_classes, size=num_vertices)
    members = [np.flatnonzero(cls == c) for c in range(num_classes)]
    num_edges = int(round(mean_degree * num_vertices / 2))
    edges = []
    while len(edges) < num_edges:
        s = int(rng.integers(num_vertices))
        pool = members[cls[s]] if rng.random() < homophily else np.arange(num_vertices)
        t = int(rng.choice(pool))
        if s != t:
            edges.append((s, t))
    topic_words = np.array_split(np.arange(num_words), num_classes)
    words: dict[int, set[int]] = {}
    for v in range(num_vertices):
        if rng.random() < 0.05:
            continue
        pure = rng.random(words_per_vertex) < topic_purity
        chosen = np.where(pure, rng.choice(topic_words[cls[v]], size=words_per_vertex),
                          rng.integers(0, num_words, size=words_per_vertex))
        words[v] = set(int(w) for w in chosen)
    used_words = sorted(set().union(*words.values())) if words else []
    remap = {w: j for j, w in enumerate(used_words)}
    names = [f"p{v}" for v in range(num_vertices)]
    graph = LabeledGraph(num_vertices, edges,
                         [{v: {v} for v in range(num_vertices)},
                          {v: {remap[w] for w in ws} for v, ws in words.items()}], directed)
    vocab = LabelVocabulary((LabelType.from_labels(NODE_ID_TYPE, names),
                             LabelType.from_labels("words", [f"w{w}" for w in used_words])))
    return ParsedDataset(graph, vocab, [frozenset({int(c)}) for c in cls],
                         [f"c{c}" for c in range(num_classes)], names, None, len(edges))
