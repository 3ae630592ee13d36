import json
import subprocess
import sys

import numpy as np
import pytest

from embprop import cli
from embprop.datasets import load_embeddings, make_toy_citation_dataset, save_dataset
from embprop.trainer import read_loss_curve


@pytest.fixture(scope="module")
def toy_manifest(tmp_path_factory):
    return save_dataset(make_toy_citation_dataset(num_vertices=150, seed=1),
                        tmp_path_factory.mktemp("data"), "toy")


@pytest.fixture(scope="module")
def trained(toy_manifest, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = cli.main(["train", "--dataset", str(toy_manifest), "--gamma", "5", "--epochs", "3",
                     "--dim", "8", "--out", str(out)])
    assert code == 0
    return out


def test_train_outputs(trained):
    assert len(read_loss_curve(trained / "loss.tsv")) == 3
    ids, X = load_embeddings(trained / "nodes.emb")
    assert X.shape == (150, 16) and ids[0] == "p0"
    run = json.loads((trained / "run.json").read_text())
    assert run["training"]["margin"] == 5.0 and run["training"]["seed"] == 42
    assert run["label_types"] == ["node_id", "words"]
    assert (trained / "labels.words.emb").is_file()


def test_train_is_reproducible_from_run_manifest(trained, toy_manifest, tmp_path):
    run = json.loads((trained / "run.json").read_text())["training"]
    code = cli.main(["train", "--dataset", str(toy_manifest), "--gamma", str(run["margin"]),
                     "--epochs", str(run["epochs"]), "--dim", str(run["dimension"]),
                     "--seed", str(run["seed"]), "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "nodes.emb").read_text() == (trained / "nodes.emb").read_text()


def test_epochs_zero_writes_initial_embeddings(toy_manifest, tmp_path):
    assert cli.main(["train", "--dataset", str(toy_manifest), "--gamma", "1", "--epochs", "0",
                     "--dim", "4", "--out", str(tmp_path)]) == 0
    assert read_loss_curve(tmp_path / "loss.tsv") == []
    assert load_embeddings(tmp_path / "nodes.emb")[1].shape == (150, 8)


def test_missing_dataset_exit_code(tmp_path, capsys):
    missing = tmp_path / "nowhere.manifest"
    assert cli.main(["train", "--dataset", str(missing), "--gamma", "1"]) == 2
    assert str(missing) in capsys.readouterr().err


def test_missing_margin_is_usage_error(toy_manifest, capsys):
    assert cli.main(["train", "--dataset", str(toy_manifest)]) == 2
    assert "margin" in capsys.readouterr().err


def test_config_file_and_flag_precedence(toy_manifest, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"dataset = {toy_manifest}\ngamma = 2\nepochs = 1\ndim = 4\nseed = 3\n")
    out = tmp_path / "out"
    assert cli.main(["train", "--config", str(cfg), "--epochs", "2", "--out", str(out)]) == 0
    run = json.loads((out / "run.json").read_text())["training"]
    assert run["epochs"] == 2 and run["margin"] == 2.0 and run["seed"] == 3


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("gamma = 2\nflavour = mint\n")
    assert cli.main(["inspect", "--config", str(cfg)]) == 2
    assert "flavour" in capsys.readouterr().err


def test_infer(trained, tmp_path, capsys):
    new_nodes_path = tmp_path / "new.tsv"
    new_nodes_path.write_text("fresh\tp1\tp2\nlonely\nghost\tp1\tnot-a-vertex\n")
    out = tmp_path / "inf"
    assert cli.main(["infer", "--model-dir", str(trained), "--new-nodes", str(new_nodes_path), "--out", str(out)]) == 0
    assert "rejected" in capsys.readouterr().err
    ids, X = load_embeddings(out / "inductive.emb")
    assert ids == ["fresh"] and X.shape == (1, 16)
    rejects = (out / "inductive.rejects").read_text().splitlines()
    assert [r.split("\t")[0] for r in rejects] == ["lonely", "ghost"]


def test_infer_duplicate_neighbors_matches_reconstruction(trained, toy_manifest, tmp_path):
    from embprop.datasets import DatasetManifest, load_dataset
    from embprop.graph import complete_with_dummy_labels
    from embprop.model import EmbeddingTable, reconstruct_label_type_embedding

    ds = load_dataset(DatasetManifest.read(toy_manifest))
    graph, vocab = complete_with_dummy_labels(ds.graph, ds.vocab)
    w = int(np.argmax(graph.degrees()))
    new_nodes_path = tmp_path / "new.tsv"
    new_nodes_path.write_text("twin\t" + "\t".join(ds.vertex_names[u] for u in graph.neighbors(w)) + "\n")
    assert cli.main(["infer", "--model-dir", str(trained), "--new-nodes", str(new_nodes_path), "--out", str(tmp_path)]) == 0
    _, X = load_embeddings(tmp_path / "inductive.emb")
    tables = [EmbeddingTable(i, load_embeddings(trained / f"labels.{t.name}.emb")[1]) for i, t in enumerate(vocab)]
    expected = np.concatenate([reconstruct_label_type_embedding(graph, t, w, t.type_id) for t in tables])
    assert np.array_equal(X[0], expected)


def test_infer_empty_spec(trained, tmp_path):
    new_nodes_path = tmp_path / "empty.tsv"
    new_nodes_path.write_text("")
    assert cli.main(["infer", "--model-dir", str(trained), "--new-nodes", str(new_nodes_path), "--out", str(tmp_path)]) == 0
    ids, X = load_embeddings(tmp_path / "inductive.emb")
    assert ids == [] and X.shape == (0, 16)


def test_evaluate_per_class(trained, toy_manifest, tmp_path, capsys):
    out = tmp_path / "ev"
    assert cli.main(["evaluate", "--dataset", str(toy_manifest), "--embeddings", str(trained / "nodes.emb"),
                     "--repetitions", "3", "--per-class-n", "10", "--n-test", "40", "--n-val", "40",
                     "--out", str(out)]) == 0
    lines = (out / "metrics.per-class-10.tsv").read_text().splitlines()
    assert len(lines) == 4 and lines[-1].startswith("mean±std")
    assert "per-class 10" in capsys.readouterr().out
    assert len(list(out.glob("split.per-class-10.run*.tsv"))) == 3


def test_evaluate_single_repetition_std_zero(trained, toy_manifest, tmp_path):
    assert cli.main(["evaluate", "--dataset", str(toy_manifest), "--embeddings", str(trained / "nodes.emb"),
                     "--repetitions", "1", "--tr", "0.5", "--out", str(tmp_path)]) == 0
    summary = (tmp_path / "metrics.fraction-0.5.tsv").read_text().splitlines()[-1].split("\t")
    assert all(field.endswith("±0.0") for field in summary[1:])


def test_evaluate_fraction_sweep(trained, toy_manifest, tmp_path, capsys):
    assert cli.main(["evaluate", "--dataset", str(toy_manifest), "--embeddings", str(trained / "nodes.emb"),
                     "--repetitions", "2", "--tr", "0.1", "0.5", "0.9", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.count("fraction") == 3
    assert len(list(tmp_path.glob("metrics.fraction-*.tsv"))) == 3


def test_inspect(toy_manifest, capsys):
    assert cli.main(["inspect", "--dataset", str(toy_manifest)]) == 0
    out = capsys.readouterr().out
    assert "toy\t150\t" in out


def test_reproduce_without_data_names_expected_path(tmp_path, capsys):
    assert cli.main(["reproduce", "cora", "transductive", "--data-dir", str(tmp_path)]) == 2
    assert str(tmp_path / "cora" / "cora.manifest") in capsys.readouterr().err


@pytest.mark.parametrize("name,margin", [("cora", 20), ("citeseer", 10), ("pubmed", 1)])
def test_reproduce_uses_published_margin(name, margin, tmp_path, monkeypatch, capsys):
    d = tmp_path / name
    save_dataset(make_toy_citation_dataset(num_vertices=90, seed=2), d, name)
    seen = {}

    def fake(dataset, config, *args):
        seen["margin"] = config.margin
        from embprop.experiments import ProtocolResult
        from embprop.evaluation import MetricsReport
        return ProtocolResult([MetricsReport(0.5, 0.5, 0.5)], [0.1], config.margin)

    monkeypatch.setattr(cli.experiments, "per_class_transductive", fake)
    assert cli.main(["reproduce", name, "transductive", "--data-dir", str(tmp_path),
                     "--out", str(tmp_path / "out")]) == 0
    assert seen["margin"] == margin
    assert "reference" in capsys.readouterr().out


def test_console_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "embprop.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "embprop" in proc.stdout


def test_cli_module_has_no_numeric_dependencies():
    import ast
    import inspect
    tree = ast.parse(inspect.getsource(cli))
    imported = {node.module for node in ast.walk(tree) if isinstance(node, ast.ImportFrom) and node.module}
    imported |= {a.name for node in ast.walk(tree) if isinstance(node, ast.Import) for a in node.names}
    assert "scipy" not in imported and not any(m and m.startswith("scipy") for m in imported)
