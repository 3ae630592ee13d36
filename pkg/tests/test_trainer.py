import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from embprop import rng as rng_streams
from embprop.datasets import make_toy_citation_dataset
from embprop.errors import (ConfigError, InvalidArgumentError, NoNeighborsError, SamplingError,
                            ShapeError, TrainingDivergedError)
from embprop.graph import LabeledGraph, complete_with_dummy_labels
from embprop.model import EmbeddingTable, RelationTable, init_tables
from embprop.trainer import (LazyAdam, TrainingConfig, batch_loss_and_gradients, margin_loss_term,
                             parameter_count, read_loss_curve, sample_negative, sample_negatives,
                             sample_neighbors, train, vertex_loss_and_gradients, write_loss_curve)

from conftest import random_labeled_graph
from oracles import expected_sampled_loss, full_sum_loss, gradient_check_instance


# margin term ----------------------------------------------------------------

def test_margin_equal_positive_and_negative_gives_margin():
    h = np.array([0.3, -1.2])
    assert margin_loss_term(np.array([5.0, 1.0]), h, h, 2.5) == 2.5


def test_margin_clamps_at_zero():
    assert margin_loss_term([0, 0], [0, 0], [3, 4], 1.0) == 0.0


def test_margin_direct_arithmetic():
    assert margin_loss_term([0, 0], [1, 0], [0, 0.5], 1.0) == 1.5


def test_margin_shape_mismatch():
    with pytest.raises(ShapeError):
        margin_loss_term([0, 0], [0, 0, 0], [0, 0], 1.0)


# negative sampling ---------------------------------------------------------------

def test_two_vertex_negative_is_forced():
    rng = np.random.default_rng(0)
    assert {sample_negative(0, 2, rng) for _ in range(50)} == {1}


def test_single_vertex_cannot_sample():
    with pytest.raises(SamplingError):
        sample_negative(0, 1, np.random.default_rng(0))


def test_negative_sampling_is_uniform():
    rng = np.random.default_rng(2024)
    draws = np.array([sample_negative(2, 5, rng) for _ in range(10_000)])
    counts = np.bincount(draws, minlength=5)
    assert counts[2] == 0
    sigma = np.sqrt(10_000 * 0.25 * 0.75)
    for u in (0, 1, 3, 4):
        assert abs(counts[u] - 2500) < 3 * sigma


def test_negative_sampling_deterministic():
    r1, r2 = np.random.default_rng(5), np.random.default_rng(5)
    assert [sample_negative(1, 9, r1) for _ in range(100)] == [sample_negative(1, 9, r2) for _ in range(100)]


def test_vectorised_negatives_never_hit_vertex():
    rng = np.random.default_rng(3)
    verts = np.arange(7)
    negs = sample_negatives(verts, 7, rng, (3, 2))
    assert negs.shape == (3, 2, 7)
    assert np.all(negs != verts) and negs.min() >= 0 and negs.max() < 7


# neighbor sampling ----------------------------------------------------------

def _star(deg):
    return LabeledGraph(deg + 1, [(0, u) for u in range(1, deg + 1)])


def test_kappa_not_binding_returns_all():
    g = _star(10)
    rng = np.random.default_rng(0)
    state = rng.bit_generator.state
    assert sample_neighbors(g, 0, 50, rng).tolist() == list(range(1, 11))
    assert rng.bit_generator.state == state


def test_kappa_subset():
    g = _star(8)
    rng = np.random.default_rng(1)
    for _ in range(20):
        got = sample_neighbors(g, 0, 3, rng)
        assert len(got) == 3 == len(set(got.tolist()))
        assert set(got.tolist()) <= set(range(1, 9))


def test_kappa_one_frequency():
    g = _star(5)
    rng = np.random.default_rng(2)
    draws = np.array([sample_neighbors(g, 0, 1, rng)[0] for _ in range(10_000)])
    counts = np.bincount(draws, minlength=6)[1:]
    sigma = np.sqrt(10_000 * 0.2 * 0.8)
    assert np.all(np.abs(counts - 2000) < 3 * sigma)


# per-vertex loss and gradients ----------------------------------------------

def test_all_zero_embeddings():
    rng = np.random.default_rng(0)
    g, vocab = random_labeled_graph(rng, 8, p_edge=0.6)
    tables = [EmbeddingTable(i, np.zeros((vocab[i].size, 4))) for i in range(2)]
    cfg = TrainingConfig(margin=3.0)
    v = next(v for v in range(8) if len(g.neighbors(v)))
    loss, grads = vertex_loss_and_gradients(g, tables, cfg, v, {0: (v + 1) % 8, 1: (v + 2) % 8})
    assert loss == 2 * 3.0
    assert all(not np.any(vec) for rows in grads.tables.values() for vec in rows.values())


def test_inactive_hinge_gives_zero():
    g = LabeledGraph(3, [(0, 1)], [[(0,), (1,), (2,)]])
    t = EmbeddingTable(0, np.array([[0.0, 0.0], [0.0, 0.0], [10.0, 0.0]]))
    loss, grads = vertex_loss_and_gradients(g, [t], TrainingConfig(margin=1.0), 0, {0: 2})
    assert loss == 0.0 and grads.tables == {}


def test_no_neighbors_signals_skip():
    g = LabeledGraph(3, [(0, 1)], [[(0,), (1,), (2,)]])
    t = EmbeddingTable(0, np.zeros((3, 2)))
    with pytest.raises(NoNeighborsError):
        vertex_loss_and_gradients(g, [t], TrainingConfig(margin=1.0), 2, {0: 0})


def test_negative_equal_to_vertex_rejected():
    g = LabeledGraph(2, [(0, 1)], [[(0,), (1,)]])
    t = EmbeddingTable(0, np.ones((2, 2)))
    with pytest.raises(InvalidArgumentError):
        vertex_loss_and_gradients(g, [t], TrainingConfig(margin=1.0), 0, {0: 0})


@pytest.mark.parametrize("use_relations", [False, True])
def test_gradients_match_finite_differences(use_relations):
    checked = 0
    for seed in range(100):
        result = gradient_check_instance(seed, use_relations)
        if result is None:
            continue
        assert result[0] < 1e-4
        checked += 1
        if checked == 10:
            break
    assert checked == 10


def test_gradients_only_on_participating_rows():
    rng = np.random.default_rng(4)
    g, vocab = random_labeled_graph(rng, 10, p_edge=0.3, vocab_sizes=(30, 40))
    tables = [EmbeddingTable(i, rng.normal(size=(vocab[i].size, 4))) for i in range(2)]
    v = next(v for v in range(10) if len(g.neighbors(v)))
    negs = {0: (v + 1) % 10, 1: (v + 3) % 10}
    _, grads = vertex_loss_and_gradients(g, tables, TrainingConfig(margin=50.0), v, negs)
    for i in range(2):
        allowed = set(g.vertex_labels(v, i)) | set(g.vertex_labels(negs[i], i)) | set(g.neighbor_labels(v, i))
        assert set(grads.tables.get(i, {})) <= allowed


def _dense(grads, tables):
    out = [np.zeros_like(t.matrix) for t in tables]
    for i, rows in grads.tables.items():
        for r, vec in rows.items():
            out[i][r] += vec
    return out


@pytest.mark.parametrize("use_relations,s", [(False, 1), (True, 1), (False, 3)])
def test_batch_gradient_is_mean_of_vertex_gradients(use_relations, s):
    rng = np.random.default_rng(5)
    g, vocab = random_labeled_graph(rng, 25, p_edge=0.2, num_edge_types=3 if use_relations else 0)
    tables = [EmbeddingTable(i, rng.normal(size=(vocab[i].size, 6))) for i in range(2)]
    rels = RelationTable([rng.normal(size=(3, 6)) for _ in range(2)]) if use_relations else None
    cfg = TrainingConfig(margin=2.0, use_relations=use_relations, negative_samples_per_vertex=s)
    batch = np.array([v for v in range(25) if len(g.neighbors(v))])
    negs = sample_negatives(batch, 25, rng, (2, s))
    bg = batch_loss_and_gradients(g, tables, cfg, batch, negs, rels)

    loss = 0.0
    dense = [np.zeros_like(t.matrix) for t in tables]
    dense_rel = [np.zeros((3, 6)) for _ in range(2)]
    for b, v in enumerate(batch):
        lv, gv = vertex_loss_and_gradients(g, tables, cfg, int(v), {i: negs[i, :, b] for i in range(2)}, rels)
        loss += lv
        for i, d in enumerate(_dense(gv, tables)):
            dense[i] += d
        for i, rows in gv.relations.items():
            for t, vec in rows.items():
                dense_rel[i][t] += vec
    B = len(batch)
    assert bg.loss == pytest.approx(loss / B, rel=1e-12)
    for i in range(2):
        got = np.zeros_like(tables[i].matrix)
        got[bg.rows[i]] = bg.row_grads[i]
        assert np.allclose(got, dense[i] / B, rtol=1e-10, atol=1e-12)
        if use_relations:
            got = np.zeros((3, 6))
            got[bg.relation_rows[i]] = bg.relation_grads[i]
            assert np.allclose(got, dense_rel[i] / B, rtol=1e-10, atol=1e-12)


def test_expected_sampled_loss_equals_full_sum_over_choices():
    rng = np.random.default_rng(6)
    for _ in range(5):
        g, vocab = random_labeled_graph(rng, 7, p_edge=0.5)
        tables = [EmbeddingTable(i, rng.normal(size=(vocab[i].size, 3))) for i in range(2)]
        cfg = TrainingConfig(margin=1.5)
        for v in range(7):
            if len(g.neighbors(v)):
                mean, count = expected_sampled_loss(g, tables, cfg, v)
                assert count == 36
                assert mean == pytest.approx(full_sum_loss(g, tables, 1.5, v) / 6, rel=1e-12)


# training loop ------------------------------------------------------------------

def _toy(seed=0, n=120):
    ds = make_toy_citation_dataset(num_vertices=n, num_words=40, seed=seed)
    g, vocab = complete_with_dummy_labels(ds.graph, ds.vocab)
    return g, vocab


def test_epochs_zero_is_no_op():
    g, vocab = _toy()
    tables = init_tables(vocab, np.random.default_rng(0), dimension=8)
    result = train(g, tables, TrainingConfig(margin=1.0, epochs=0))
    assert result.reports == []
    for a, b in zip(tables, result.tables):
        assert np.array_equal(a.matrix, b.matrix)


def test_train_does_not_mutate_inputs():
    g, vocab = _toy()
    tables = init_tables(vocab, np.random.default_rng(0), dimension=8)
    before = [t.matrix.copy() for t in tables]
    result = train(g, tables, TrainingConfig(margin=1.0, epochs=2))
    assert all(np.array_equal(a, t.matrix) for a, t in zip(before, tables))
    assert not np.array_equal(before[0], result.tables[0].matrix)


def test_two_vertex_graph_loss_decreases():
    g = LabeledGraph(2, [(0, 1)], [[(0,), (1,)]])
    tables = [EmbeddingTable.glorot(0, 2, 16, np.random.default_rng(0))]
    cfg = TrainingConfig(margin=1.0, epochs=100, learning_rate=0.01)
    reports = train(g, tables, cfg).reports
    assert reports[-1].mean_batch_loss < reports[0].mean_batch_loss
    # the only negative is the neighbor itself, so the loss cannot drop below the margin
    assert reports[-1].mean_batch_loss >= 1.0 - 1e-12


def test_loss_reports_non_negative_and_decreasing_on_toy():
    g, vocab = _toy()
    tables = init_tables(vocab, np.random.default_rng(0), dimension=16)
    reports = train(g, tables, TrainingConfig(margin=5.0, epochs=30, batch_size=16)).reports
    assert len(reports) == 30
    assert all(r.mean_batch_loss >= 0 and all(x >= 0 for x in r.per_type_loss.values()) for r in reports)
    assert np.mean([r.mean_batch_loss for r in reports[-5:]]) < np.mean([r.mean_batch_loss for r in reports[:5]])


def _run(g, vocab, **kw):
    tables = init_tables(vocab, rng_streams.stream(7, "init"), dimension=8)
    cfg = TrainingConfig(margin=5.0, epochs=5, batch_size=16, seed=7, **kw)
    return train(g, tables, cfg)


def test_training_is_bitwise_deterministic():
    g, vocab = _toy()
    a, b = _run(g, vocab), _run(g, vocab)
    for ta, tb in zip(a.tables, b.tables):
        assert np.array_equal(ta.matrix, tb.matrix)
    assert [r.mean_batch_loss for r in a.reports] == [r.mean_batch_loss for r in b.reports]


def test_different_seed_changes_result():
    g, vocab = _toy()
    a = _run(g, vocab)
    tables = init_tables(vocab, rng_streams.stream(7, "init"), dimension=8)
    b = train(g, tables, TrainingConfig(margin=5.0, epochs=5, batch_size=16, seed=8))
    assert not np.array_equal(a.tables[0].matrix, b.tables[0].matrix)


def test_large_kappa_is_bitwise_equal_to_unbounded():
    g, vocab = _toy()
    kmax = int(g.degrees().max())
    a, b = _run(g, vocab), _run(g, vocab, kappa=kmax)
    assert [r.mean_batch_loss for r in a.reports] == [r.mean_batch_loss for r in b.reports]
    for ta, tb in zip(a.tables, b.tables):
        assert np.array_equal(ta.matrix, tb.matrix)


def test_small_kappa_trains():
    g, vocab = _toy()
    reports = _run(g, vocab, kappa=2).reports
    assert all(np.isfinite(r.mean_batch_loss) for r in reports)


def test_relation_training_updates_relations():
    rng = np.random.default_rng(9)
    g, vocab = random_labeled_graph(rng, 30, p_edge=0.2, num_edge_types=2)
    tables = init_tables(vocab, rng, dimension=4)
    rels = RelationTable.glorot(2, [4, 4], rng)
    result = train(g, tables, TrainingConfig(margin=2.0, epochs=3, batch_size=8, use_relations=True), rels)
    assert not np.array_equal(result.relations.vectors[0], rels.vectors[0])


def test_lazy_adam_touches_only_given_rows():
    param = np.ones((5, 3))
    adam = LazyAdam([param], 0.1)
    adam.update(0, param, np.array([1, 3]), np.ones((2, 3)))
    assert np.array_equal(param[[0, 2, 4]], np.ones((3, 3)))
    assert np.all(param[[1, 3]] < 1)
    assert adam.steps[0].tolist() == [0, 1, 0, 1, 0]
    assert not np.any(adam.m[0][[0, 2, 4]]) and not np.any(adam.v[0][[0, 2, 4]])


def test_lazy_adam_first_step_magnitude_is_learning_rate():
    param = np.zeros((2, 2))
    adam = LazyAdam([param], 0.001)
    adam.update(0, param, np.array([0]), np.array([[3.0, -0.5]]))
    assert np.allclose(param[0], [-0.001, 0.001], rtol=1e-6)


def test_batch_step_only_changes_participating_rows():
    g, vocab = _toy()
    tables = init_tables(vocab, np.random.default_rng(0), dimension=8)
    cfg = TrainingConfig(margin=5.0, epochs=1, batch_size=g.num_vertices)
    batch = np.array([v for v in range(10) if g.degrees()[v] > 0])
    negs = sample_negatives(batch, g.num_vertices, np.random.default_rng(1), (2, 1))
    bg = batch_loss_and_gradients(g, tables, cfg, batch, negs)
    for i in range(2):
        participating = set()
        for b, v in enumerate(batch):
            participating |= set(g.vertex_labels(int(v), i)) | set(g.neighbor_labels(int(v), i))
            participating |= set(g.vertex_labels(int(negs[i, 0, b]), i))
        assert set(bg.rows[i].tolist()) == participating


def test_nan_raises_diverged():
    g = LabeledGraph(3, [(0, 1), (1, 2)], [[(0,), (1,), (2,)]])
    t = EmbeddingTable(0, np.zeros((3, 2)))
    t.matrix[1, 0] = np.nan
    with pytest.raises(TrainingDivergedError) as exc:
        train(g, [t], TrainingConfig(margin=1.0, epochs=1))
    assert exc.value.epoch == 0 and exc.value.batch == 0


def test_empty_label_sets_rejected():
    g = LabeledGraph(2, [(0, 1)], [[(0,), ()]])
    with pytest.raises(InvalidArgumentError):
        train(g, [EmbeddingTable(0, np.zeros((1, 2)))], TrainingConfig(margin=1.0, epochs=1))


@pytest.mark.parametrize("kwargs", [dict(margin=0), dict(margin=1, learning_rate=0),
                                    dict(margin=1, batch_size=0), dict(margin=1, kappa=0)])
def test_invalid_config(kwargs):
    with pytest.raises(ConfigError):
        TrainingConfig(**kwargs)


def test_parameter_counts():
    rng = np.random.default_rng(0)
    assert parameter_count([EmbeddingTable.glorot(0, 100, 128, rng)]) == 12800
    two = [EmbeddingTable.glorot(0, 100, 128, rng), EmbeddingTable.glorot(1, 500, 128, rng)]
    assert parameter_count(two) == 76800
    assert parameter_count(two[:1], RelationTable.zeros(3, [128])) == 12800 + 384


def test_loss_curve_round_trip(tmp_path):
    g, vocab = _toy()
    reports = _run(g, vocab).reports
    path = tmp_path / "loss.tsv"
    write_loss_curve(reports, path)
    rows = read_loss_curve(path)
    assert [r[0] for r in rows] == list(range(5))
    assert [r[1] for r in rows] == [r.mean_batch_loss for r in reports]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_vertex_loss_non_negative(seed):
    rng = np.random.default_rng(seed)
    g, vocab = random_labeled_graph(rng, 6, p_edge=0.5)
    tables = [EmbeddingTable(i, rng.normal(size=(vocab[i].size, 3))) for i in range(2)]
    for v in range(6):
        if len(g.neighbors(v)):
            loss, _ = vertex_loss_and_gradients(g, tables, TrainingConfig(margin=float(rng.uniform(0.1, 5))),
                                                v, {0: (v + 1) % 6, 1: (v + 5) % 6})
            assert loss >= 0
