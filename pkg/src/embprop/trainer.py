"""Margin-ranking training of label embeddings with lazy Adam.

Each epoch visits every vertex once in a seeded random order.  For a vertex
``v`` and every label type ``i`` the loss is

    [margin + |h~_i(v) - h_i(v)| - |h~_i(v) - h_i(u_i)|]_+

with ``u_i`` a uniformly drawn vertex other than ``v``.  Losses are averaged
over the vertices of a mini-batch and one Adam step is applied to the rows
that took part in the batch.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from . import rng as rng_streams
from .errors import (ConfigError, InvalidArgumentError, NoNeighborsError, SamplingError,
                     ShapeError, TrainingDivergedError)
from .graph import LabeledGraph
from .model import (EmbeddingTable, RelationTable, label_mean_matrix, label_type_embedding,
                    neighbor_lists_csr, reconstruct_label_type_embedding,
                    reconstruct_with_relations, reconstruction_matrix)

logger = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


@dataclass(frozen=True)
class TrainingConfig:
    margin: float
    learning_rate: float = 0.001
    batch_size: int = 64
    epochs: int = 200
    kappa: int | None = None
    seed: int = 42
    negative_samples_per_vertex: int = 1
    use_relations: bool = False
    dimension: int = 128
    type_dimensions: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.margin > 0:
            raise ConfigError(f"margin must be positive, got {self.margin}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.kappa is not None and self.kappa < 1:
            raise ConfigError("kappa must be at least 1 when set")
        if self.negative_samples_per_vertex < 1:
            raise ConfigError("negative_samples_per_vertex must be at least 1")
        if self.dimension < 1 or any(d < 1 for d in self.type_dimensions.values()):
            raise ConfigError("embedding dimensions must be positive")


@dataclass
class LossReport:
    epoch: int
    mean_batch_loss: float
    per_type_loss: dict[int, float]
    wall_time: float


@dataclass
class SparseGradients:
    """Gradients keyed by label type, then by table row (or edge type for relations)."""

    tables: dict[int, dict[int, np.ndarray]] = field(default_factory=dict)
    relations: dict[int, dict[int, np.ndarray]] = field(default_factory=dict)

    def _add(self, store, i, row, vec):
        rows = store.setdefault(i, {})
        if row in rows:
            rows[row] = rows[row] + vec
        else:
            rows[row] = np.array(vec, dtype=np.float64)

    def add_table(self, i, row, vec):
        self._add(self.tables, i, int(row), vec)

    def add_relation(self, i, t, vec):
        self._add(self.relations, i, int(t), vec)


class TrainingResult(NamedTuple):
    tables: list[EmbeddingTable]
    reports: list[LossReport]
    relations: RelationTable | None = None


# loss pieces ---------------------------------------------------------------

def margin_loss_term(h_rec, h_pos, h_neg, margin: float) -> float:
    h_rec, h_pos, h_neg = (np.asarray(x, dtype=np.float64) for x in (h_rec, h_pos, h_neg))
    if not h_rec.shape == h_pos.shape == h_neg.shape:
        raise ShapeError(f"shape mismatch: {h_rec.shape}, {h_pos.shape}, {h_neg.shape}")
    return max(0.0, margin + float(np.linalg.norm(h_rec - h_pos)) - float(np.linalg.norm(h_rec - h_neg)))


def _unit(diff, dist):
    return diff / dist if dist > 0 else np.zeros_like(diff)


def sample_negative(v: int, num_vertices: int, rng) -> int:
    """Uniform draw from ``{0..num_vertices-1} \\ {v}``."""
    if num_vertices < 2:
        raise SamplingError("need at least two vertices to draw a negative sample")
    u = int(rng.integers(0, num_vertices - 1))
    return u + (u >= v)


def sample_negatives(vertices, num_vertices: int, rng, shape_prefix=()) -> np.ndarray:
    """Vectorised :func:`sample_negative` for every vertex in ``vertices``."""
    if num_vertices < 2:
        raise SamplingError("need at least two vertices to draw a negative sample")
    vertices = np.asarray(vertices, dtype=np.int64)
    u = rng.integers(0, num_vertices - 1, size=(*shape_prefix, len(vertices)))
    return u + (u >= vertices)


def sample_neighbors(graph: LabeledGraph, v: int, kappa: int | None, rng) -> np.ndarray:
    """``N(v)`` itself, or a uniform ``kappa``-subset of it when the bound binds.

    No random numbers are consumed unless ``|N(v)| > kappa``.
    """
    nbrs = graph.neighbors(v)
    if kappa is None or len(nbrs) <= kappa:
        return nbrs
    return np.sort(rng.choice(nbrs, size=kappa, replace=False))


# per-vertex reference ------------------------------------------------------

def vertex_loss_and_gradients(graph: LabeledGraph, tables, config: TrainingConfig, v: int,
                              negatives, relations: RelationTable | None = None,
                              sampled_neighbors=None):
    """Loss of vertex ``v`` summed over label types, with its sparse gradient.

    ``negatives`` maps label type to a negative vertex, or to a sequence of
    them when several negatives per vertex are used. Raises
    :class:`NoNeighborsError` when ``v`` has nothing to reconstruct from;
    the trainer treats that as "skip this vertex".
    """
    nbrs = graph.neighbors(v) if sampled_neighbors is None else np.sort(np.asarray(list(sampled_neighbors), dtype=np.int64))
    if len(nbrs) == 0:
        raise NoNeighborsError(f"vertex {v} has no neighbors")
    use_rel = relations is not None and config.use_relations
    etypes = graph.neighbor_edge_types(v)
    all_nbrs = graph.neighbors(v)
    et_of = dict(zip(all_nbrs.tolist(), etypes.tolist()))

    total = 0.0
    grads = SparseGradients()
    for table in tables:
        i = table.type_id
        if use_rel:
            h_rec = reconstruct_with_relations(graph, table, relations, v, i, nbrs)
        else:
            h_rec = reconstruct_label_type_embedding(graph, table, v, i, nbrs)
        own = graph.vertex_labels(v, i)
        h_pos = label_type_embedding(table, own)
        d_pos = float(np.linalg.norm(h_rec - h_pos))
        a = _unit(h_rec - h_pos, d_pos)
        negs = negatives[i]
        negs = [negs] if np.ndim(negs) == 0 else list(negs)
        g_rec = np.zeros(table.dim)
        for u in negs:
            if u == v:
                raise InvalidArgumentError("negative sample equals the vertex itself")
            neg_labels = graph.vertex_labels(int(u), i)
            h_neg = label_type_embedding(table, neg_labels)
            d_neg = float(np.linalg.norm(h_rec - h_neg))
            z = config.margin + d_pos - d_neg
            if z <= 0:
                continue
            total += z
            b = _unit(h_rec - h_neg, d_neg)
            g_rec += a - b
            for l in own:
                grads.add_table(i, l, -a / len(own))
            for l in neg_labels:
                grads.add_table(i, l, b / len(neg_labels))
        if not np.any(g_rec):
            continue
        n = sum(len(graph.vertex_labels(int(u), i)) for u in nbrs)
        for u in nbrs:
            labs = graph.vertex_labels(int(u), i)
            for l in labs:
                grads.add_table(i, l, g_rec / n)
            if use_rel:
                grads.add_relation(i, et_of[int(u)], g_rec * (len(labs) / n))
    return total, grads


# batched path ---------------------------------------------------------------

@dataclass
class BatchGradients:
    """Mean loss of a batch and the gradients of the touched rows."""

    loss: float
    per_type_loss: dict[int, float]
    num_vertices: int
    rows: dict[int, np.ndarray]
    row_grads: dict[int, np.ndarray]
    relation_rows: dict[int, np.ndarray] = field(default_factory=dict)
    relation_grads: dict[int, np.ndarray] = field(default_factory=dict)


def batch_loss_and_gradients(graph: LabeledGraph, tables, config: TrainingConfig, vertices,
                             negatives, relations: RelationTable | None = None,
                             neighbor_lists=None) -> BatchGradients:
    """Mean per-vertex loss over ``vertices`` and its gradient.

    ``negatives`` has shape ``(k, s, len(vertices))``. ``neighbor_lists`` is
    an optional ``(indptr, neighbors, edge_types)`` triple holding the
    (sampled) neighbors of each vertex; vertices with no neighbors must
    already be excluded.
    """
    vertices = np.asarray(vertices, dtype=np.int64)
    negatives = np.asarray(negatives, dtype=np.int64)
    B = len(vertices)
    if neighbor_lists is None:
        neighbor_lists = neighbor_lists_csr(graph, vertices)
    nbr_indptr, nbrs, nbr_etypes = neighbor_lists
    if np.any(np.diff(nbr_indptr) == 0):
        raise NoNeighborsError("batch contains a vertex without neighbors")
    use_rel = relations is not None and config.use_relations
    s = negatives.shape[1]
    scale = 1.0 / B
    out = BatchGradients(0.0, {}, B, {}, {})
    for table in tables:
        i = table.type_id
        E = table.matrix
        A, C = reconstruction_matrix(graph, i, nbr_indptr, nbrs, table.num_rows,
                                     nbr_etypes if use_rel else None,
                                     relations.num_edge_types if use_rel else 0)
        P = label_mean_matrix(graph, i, vertices, table.num_rows)
        Q = label_mean_matrix(graph, i, negatives[i].reshape(-1), table.num_rows)
        M = sp.vstack([A, P, Q], format="csr")
        rows, local = np.unique(M.indices, return_inverse=True)
        M = sp.csr_matrix((M.data, local.reshape(-1), M.indptr), shape=(M.shape[0], len(rows)))
        X = M @ E[rows]
        h_rec, h_pos, h_neg = X[:B], X[B:2 * B], X[2 * B:].reshape(s, B, -1)
        if use_rel:
            h_rec = h_rec + C @ relations.vectors[i]

        diff_pos = h_rec - h_pos
        d_pos = np.linalg.norm(diff_pos, axis=1)
        a = np.divide(diff_pos, d_pos[:, None], out=np.zeros_like(diff_pos), where=d_pos[:, None] > 0)
        diff_neg = h_rec[None] - h_neg
        d_neg = np.linalg.norm(diff_neg, axis=2)
        b = np.divide(diff_neg, d_neg[..., None], out=np.zeros_like(diff_neg), where=d_neg[..., None] > 0)
        z = config.margin + d_pos[None] - d_neg
        active = (z > 0).astype(np.float64)
        type_loss = float(np.sum(z * active)) * scale
        out.per_type_loss[i] = type_loss
        out.loss += type_loss

        n_active = active.sum(axis=0)[:, None]
        g_rec = n_active * a - np.einsum("sb,sbd->bd", active, b)
        g_pos = -n_active * a
        g_neg = active[..., None] * b
        G = np.vstack([g_rec, g_pos, g_neg.reshape(s * B, -1)]) * scale
        out.rows[i] = rows
        out.row_grads[i] = np.asarray(M.T @ G)
        if use_rel:
            g_rel = np.asarray(C.T @ (g_rec * scale))
            rel_rows = np.unique(C.indices)
            out.relation_rows[i] = rel_rows
            out.relation_grads[i] = g_rel[rel_rows]
    return out


class LazyAdam:
    """Adam whose moments and bias correction advance only for updated rows."""

    def __init__(self, params, learning_rate: float, beta1: float = BETA1, beta2: float = BETA2,
                 eps: float = EPSILON):
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.steps = [np.zeros(p.shape[0], dtype=np.int64) for p in params]

    def update(self, k: int, param: np.ndarray, rows: np.ndarray, grad: np.ndarray) -> None:
        m, v, steps = self.m[k], self.v[k], self.steps[k]
        steps[rows] += 1
        t = steps[rows][:, None]
        m[rows] = self.beta1 * m[rows] + (1 - self.beta1) * grad
        v[rows] = self.beta2 * v[rows] + (1 - self.beta2) * grad * grad
        m_hat = m[rows] / (1 - self.beta1 ** t)
        v_hat = v[rows] / (1 - self.beta2 ** t)
        param[rows] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _sampled_neighbor_lists(graph, vertices, kappa, rng):
    if kappa is None or (len(vertices) and graph.degrees()[vertices].max() <= kappa):
        return neighbor_lists_csr(graph, vertices)
    indptr = [0]
    chunks, type_chunks = [], []
    for v in vertices:
        full = graph.neighbors(v)
        chosen = sample_neighbors(graph, v, kappa, rng)
        pos = np.searchsorted(full, chosen)
        chunks.append(chosen)
        type_chunks.append(graph.neighbor_edge_types(v)[pos])
        indptr.append(indptr[-1] + len(chosen))
    return (np.asarray(indptr, dtype=np.int64), np.concatenate(chunks).astype(np.int64),
            np.concatenate(type_chunks).astype(np.int64))


def train(graph: LabeledGraph, tables, config: TrainingConfig,
          relations: RelationTable | None = None, callback=None) -> TrainingResult:
    """Optimise copies of ``tables`` (and ``relations``) for ``config.epochs`` epochs.

    ``callback(report)`` is called after every epoch. The inputs are not
    modified. Vertices without neighbors never contribute.
    """
    if graph.num_vertices < 2 and config.epochs > 0:
        raise SamplingError("training needs at least two vertices")
    if config.use_relations and relations is None:
        raise InvalidArgumentError("use_relations is set but no relation table was given")
    for t in tables:
        if any(not labs for labs in graph.labels[t.type_id]):
            raise InvalidArgumentError("graph has empty label sets; run complete_with_dummy_labels")
    tables = [t.copy() for t in tables]
    relations = relations.copy() if relations is not None else None
    use_rel = relations is not None and config.use_relations
    params = [t.matrix for t in tables] + (relations.vectors if use_rel else [])
    adam = LazyAdam(params, config.learning_rate)
    k = len(tables)

    shuffle_rng = rng_streams.stream(config.seed, "shuffle")
    neg_rng = rng_streams.stream(config.seed, "negatives")
    nbr_rng = rng_streams.stream(config.seed, "neighbors")
    degrees = graph.degrees()
    n = graph.num_vertices
    s = config.negative_samples_per_vertex

    reports = []
    for epoch in range(config.epochs):
        start = time.perf_counter()
        order = shuffle_rng.permutation(n)
        batch_losses, type_losses = [], {t.type_id: [] for t in tables}
        for b, lo in enumerate(range(0, n, config.batch_size)):
            batch = np.sort(order[lo:lo + config.batch_size])
            negs = sample_negatives(batch, n, neg_rng, (k, s))
            keep = degrees[batch] > 0
            batch, negs = batch[keep], negs[..., keep]
            if len(batch) == 0:
                continue
            nl = _sampled_neighbor_lists(graph, batch, config.kappa, nbr_rng)
            bg = batch_loss_and_gradients(graph, tables, config, batch, negs,
                                          relations if use_rel else None, nl)
            batch_losses.append(bg.loss)
            for i, val in bg.per_type_loss.items():
                type_losses[i].append(val)
            for idx, t in enumerate(tables):
                rows = bg.rows[t.type_id]
                adam.update(idx, t.matrix, rows, bg.row_grads[t.type_id])
                if not np.isfinite(t.matrix[rows]).all():
                    raise TrainingDivergedError(epoch, b)
            if use_rel:
                for i, rows in bg.relation_rows.items():
                    adam.update(k + i, relations.vectors[i], rows, bg.relation_grads[i])
                    if not np.isfinite(relations.vectors[i][rows]).all():
                        raise TrainingDivergedError(epoch, b)
        report = LossReport(
            epoch=epoch,
            mean_batch_loss=float(np.mean(batch_losses)) if batch_losses else 0.0,
            per_type_loss={i: float(np.mean(v)) if v else 0.0 for i, v in type_losses.items()},
            wall_time=time.perf_counter() - start,
        )
        reports.append(report)
        logger.debug("epoch %d loss %.6f (%.2fs)", epoch, report.mean_batch_loss, report.wall_time)
        if callback is not None:
            callback(report)
    return TrainingResult(tables, reports, relations)


def parameter_count(tables, relations: RelationTable | None = None) -> int:
    count = sum(t.matrix.size for t in tables)
    if relations is not None:
        count += sum(v.size for v in relations.vectors)
    return count


def write_loss_curve(reports, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(f"{r.epoch}\t{r.mean_batch_loss!r}\t{r.wall_time!r}\n")


def read_loss_curve(path) -> list[tuple[int, float, float]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            epoch, loss, wall = line.rstrip("\n").split("\t")
            rows.append((int(epoch), float(loss), float(wall)))
    return rows
