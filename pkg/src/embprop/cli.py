"""Command-line entry point: ``embprop {train,infer,evaluate,reproduce,inspect}``.

Settings come from an optional flat ``key = value`` config file
(``--config``); command-line flags override it. Exit codes: 0 success,
1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import experiments
from .datasets import (DatasetManifest, load_dataset, load_embeddings, parse_bool,
                       read_key_values, save_embeddings, write_metrics, write_split)
from .errors import ConfigError, EmbpropError
from .evaluation import (L2_GRID, MetricsSummary, evaluate, make_fraction_split,
                         make_per_class_split, select_l2)
from .graph import complete_with_dummy_labels
from .model import EmbeddingTable, inductive_node_representation
from .trainer import TrainingConfig, write_loss_curve

logger = logging.getLogger("embprop")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _floats(text):
    return [float(x) for x in str(text).replace(",", " ").split()]


def _opt_int(text):
    return None if str(text).lower() in ("", "none") else int(text)


# key -> converter; every config-file key must appear here
CONFIG_KEYS = {
    "dataset": str, "gamma": float, "kappa": _opt_int, "epochs": int, "seed": int, "out": str,
    "directed": parse_bool, "learning_rate": float, "batch_size": int, "dim": int,
    "negatives": int, "relations": parse_bool, "repetitions": int, "tr": _floats,
    "per_class_n": int, "n_test": int, "n_val": int, "l2_grid": _floats, "embeddings": str,
    "new_nodes": str, "model_dir": str, "data_dir": str, "removed": _floats,
}


@dataclass
class RunConfig:
    dataset: str | None = None
    gamma: float | None = None
    kappa: int | None = None
    epochs: int = 200
    seed: int = 42
    out: str = "run"
    directed: bool | None = None
    learning_rate: float = 0.001
    batch_size: int = 64
    dim: int = 128
    negatives: int = 1
    relations: bool = False
    repetitions: int = 10
    tr: list[float] | None = None
    per_class_n: int = 20
    n_test: int = 1000
    n_val: int = 1000
    l2_grid: list[float] = field(default_factory=lambda: list(L2_GRID))
    embeddings: str | None = None
    new_nodes: str | None = None
    model_dir: str | None = None
    data_dir: str | None = None
    removed: list[float] | None = None

    def training_config(self, margin: float | None = None) -> TrainingConfig:
        margin = self.gamma if margin is None else margin
        if margin is None:
            raise ConfigError("no margin given (use --gamma or 'gamma = ...')")
        return TrainingConfig(margin=margin, learning_rate=self.learning_rate,
                              batch_size=self.batch_size, epochs=self.epochs, kappa=self.kappa,
                              seed=self.seed, negative_samples_per_vertex=self.negatives,
                              use_relations=self.relations, dimension=self.dim)


def build_run_config(args) -> RunConfig:
    values = {}
    if args.config:
        if not Path(args.config).is_file():
            raise FileNotFoundError(args.config)
        for key, raw in read_key_values(args.config).items():
            if key not in CONFIG_KEYS:
                raise ConfigError(f"{args.config}: unknown config key {key!r}")
            try:
                values[key] = CONFIG_KEYS[key](raw)
            except ValueError as exc:
                raise ConfigError(f"{args.config}: bad value for {key!r}: {raw!r}") from exc
    for key in CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    cfg = RunConfig(**values)
    if cfg.repetitions < 1:
        raise ConfigError("repetitions must be at least 1")
    # validates everything except the margin, which some commands do not need
    cfg.training_config(cfg.gamma if cfg.gamma is not None else 1.0)
    return cfg


def _load(cfg: RunConfig, dataset=None):
    path = dataset or cfg.dataset
    if not path:
        raise ConfigError("no dataset manifest given (use --dataset)")
    if not Path(path).is_file():
        raise FileNotFoundError(path)
    manifest = DatasetManifest.read(path)
    missing = manifest.missing_files()
    if missing:
        raise FileNotFoundError(missing[0])
    return load_dataset(manifest, cfg.directed)


def _label_file(out: Path, name: str) -> Path:
    return out / f"labels.{name}.emb"


def cmd_train(cfg: RunConfig) -> int:
    dataset = _load(cfg)
    tc = cfg.training_config()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    emb = experiments.train_embeddings(dataset, tc)
    for table, ltype in zip(emb.tables, emb.dataset.vocab):
        save_embeddings(ltype.labels, table.matrix, _label_file(out, ltype.name))
    if emb.relations is not None:
        for table, ltype, rel in zip(emb.tables, emb.dataset.vocab, emb.relations.vectors):
            save_embeddings(dataset.edge_type_names, rel, out / f"relations.{ltype.name}.emb")
    save_embeddings(dataset.vertex_names, emb.representations, out / "nodes.emb")
    write_loss_curve(emb.reports, out / "loss.tsv")
    run = {
        "version": __version__,
        "dataset": str(Path(cfg.dataset).resolve()),
        "directed": dataset.graph.directed,
        "label_types": emb.dataset.vocab.names,
        "training": dataclasses.asdict(tc),
    }
    (out / "run.json").write_text(json.dumps(run, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"trained {len(emb.tables)} label tables for {dataset.graph.num_vertices} vertices -> {out}")
    return EXIT_OK


def _load_trained(model_dir: Path, cfg: RunConfig):
    run_path = model_dir / "run.json"
    if not run_path.is_file():
        raise FileNotFoundError(run_path)
    run = json.loads(run_path.read_text(encoding="utf-8"))
    if cfg.directed is None:
        cfg = dataclasses.replace(cfg, directed=run["directed"])
    dataset = _load(cfg, cfg.dataset or run["dataset"])
    graph, vocab = complete_with_dummy_labels(dataset.graph, dataset.vocab)
    tables = []
    for i, ltype in enumerate(vocab):
        path = _label_file(model_dir, ltype.name)
        if not path.is_file():
            raise FileNotFoundError(path)
        ids, matrix = load_embeddings(path)
        if list(ids) != list(ltype.labels):
            raise ConfigError(f"{path}: labels do not match the dataset vocabulary")
        tables.append(EmbeddingTable(i, matrix))
    return dataset, graph, tables


def cmd_infer(cfg: RunConfig) -> int:
    if not cfg.new_nodes:
        raise ConfigError("infer needs --new-nodes")
    new_nodes_path = Path(cfg.new_nodes)
    if not new_nodes_path.is_file():
        raise FileNotFoundError(new_nodes_path)
    model_dir = Path(cfg.model_dir or cfg.out)
    dataset, graph, tables = _load_trained(model_dir, cfg)
    names, rows, rejects = [], [], []
    with open(new_nodes_path, encoding="utf-8") as fh:
        for line in fh:
            fields = [f for f in line.rstrip("\r\n").split("\t") if f]
            if not fields or fields[0].startswith("#"):
                continue
            name, nbr_names = fields[0], fields[1:]
            unknown = [n for n in nbr_names if not dataset.has_vertex(n)]
            if unknown:
                rejects.append((name, f"unknown neighbor {unknown[0]}"))
            elif not nbr_names:
                rejects.append((name, "no neighbors"))
            else:
                rep = inductive_node_representation(graph, tables, [dataset.vertex_id(n) for n in nbr_names])
                names.append(name)
                rows.append(rep.vector)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    dim = sum(t.dim for t in tables)
    save_embeddings(names, np.asarray(rows).reshape(len(rows), dim), out / "inductive.emb")
    with open(out / "inductive.rejects", "w", encoding="utf-8") as fh:
        for name, reason in rejects:
            fh.write(f"{name}\t{reason}\n")
    if rejects:
        print(f"warning: {len(rejects)} new node(s) rejected, see {out / 'inductive.rejects'}",
              file=sys.stderr)
    print(f"embedded {len(names)} new node(s) -> {out / 'inductive.emb'}")
    return EXIT_OK


def _summary_line(label, runs):
    summary = MetricsSummary(runs)
    parts = [label]
    for name in ("accuracy", "micro_f1", "macro_f1"):
        parts.append(f"{name}={100 * summary.mean(name):.2f}±{100 * summary.std(name):.2f}")
    return "  ".join(parts)


def cmd_evaluate(cfg: RunConfig) -> int:
    dataset = _load(cfg)
    emb_path = Path(cfg.embeddings or Path(cfg.out) / "nodes.emb")
    if not emb_path.is_file():
        raise FileNotFoundError(emb_path)
    ids, matrix = load_embeddings(emb_path)
    index = {name: r for r, name in enumerate(ids)}
    missing = [n for n in dataset.vertex_names if n not in index]
    if missing:
        raise ConfigError(f"{emb_path}: no embedding for vertex {missing[0]!r}")
    X = matrix[[index[n] for n in dataset.vertex_names]]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    settings = [("per-class", cfg.per_class_n)] if not cfg.tr else [("fraction", t) for t in cfg.tr]
    for protocol, param in settings:
        runs = []
        for r in range(cfg.repetitions):
            seed = cfg.seed + r
            if protocol == "per-class":
                split = make_per_class_split(dataset.classes, param, cfg.n_test, cfg.n_val, seed)
            else:
                split = make_fraction_split(dataset.classes, param, seed)
            l2 = select_l2(X, split, dataset.classes, cfg.l2_grid, num_classes=dataset.num_classes)
            runs.append(evaluate(X, split.train, split.test, dataset.classes, l2, dataset.num_classes))
            write_split(split, out / f"split.{protocol}-{param:g}.run{r}.tsv", dataset.vertex_names)
        write_metrics(runs, out / f"metrics.{protocol}-{param:g}.tsv")
        print(_summary_line(f"{protocol} {param:g}:", runs))
    return EXIT_OK


def _find_manifest(name: str, cfg: RunConfig) -> str:
    if cfg.dataset:
        return cfg.dataset
    base = Path(cfg.data_dir or os.environ.get("EMBPROP_DATA", "data")) / name
    for candidate in (base / f"{name}.manifest", base / "manifest.txt", base / "manifest"):
        if candidate.is_file():
            return str(candidate)
    raise FileNotFoundError(base / f"{name}.manifest")


def cmd_reproduce(cfg: RunConfig, name: str, setting: str) -> int:
    key = (name.lower(), setting)
    if key not in experiments.REFERENCE_RESULTS:
        raise ConfigError(f"no reference setting for {name} / {setting}")
    ref = experiments.REFERENCE_RESULTS[key]
    cfg = dataclasses.replace(cfg, dataset=_find_manifest(key[0], cfg),
                              directed=(setting == "directed") if cfg.directed is None else cfg.directed)
    dataset = _load(cfg)
    metric = ref["metric"]
    rows = []
    if ref["protocol"] == "per-class":
        tc = cfg.training_config(ref["margin"] if cfg.gamma is None else cfg.gamma)
        run = experiments.per_class_inductive if setting == "inductive" else experiments.per_class_transductive
        result = run(dataset, tc, cfg.repetitions, cfg.per_class_n, cfg.n_test, cfg.n_val, cfg.l2_grid)
        rows.append((f"{name} {setting} γ={tc.margin:g}", result.runs, ref["value"]))
    elif setting == "inductive":
        for frac in cfg.removed or sorted(ref["value"]):
            tc = cfg.training_config(ref["margin"].get(frac, 10) if cfg.gamma is None else cfg.gamma)
            result = experiments.fraction_inductive(dataset, tc, frac, 0.1, cfg.repetitions, cfg.l2_grid)
            rows.append((f"{name} inductive removed={frac:g} γ={tc.margin:g}", result.runs,
                         ref["value"].get(frac)))
    else:
        tc = cfg.training_config(ref["margin"] if cfg.gamma is None else cfg.gamma)
        results = experiments.fraction_transductive(dataset, tc, cfg.tr or sorted(ref["value"]),
                                                    cfg.repetitions, cfg.l2_grid)
        for frac, result in results.items():
            rows.append((f"{name} transductive T_r={frac:g} γ={tc.margin:g}", result.runs,
                         ref["value"].get(frac)))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for label, runs, ref in rows:
        summary = MetricsSummary(runs)
        ref_txt = f"{ref[0]:.2f} ± {ref[1]:.2f}" if ref else "n/a"
        print(f"{label}: {metric} ours {100 * summary.mean(metric):.2f} ± "
              f"{100 * summary.std(metric):.2f} | reference {ref_txt}")
        write_metrics(runs, out / ("metrics." + label.split(" γ")[0].replace(" ", "_") + ".tsv"))
    return EXIT_OK


def cmd_inspect(cfg: RunConfig) -> int:
    dataset = _load(cfg)
    stats = dataset.stats()
    print("dataset\t|V|\t|E|\t#classes\tk")
    print(f"{Path(cfg.dataset).stem}\t{stats['vertices']}\t{stats['edges']}\t{stats['classes']}\t"
          f"{stats['label_types']}")
    graph = dataset.graph
    print(f"edge lines: {stats['raw_edge_lines']}, duplicates dropped: {graph.num_duplicate_edges}, "
          f"self-loops dropped: {graph.num_self_loops}, directed: {graph.directed}")
    for ltype, labels in zip(dataset.vocab, graph.labels):
        empty = sum(1 for labs in labels if not labs)
        print(f"label type {ltype.name}: {ltype.size} labels, {empty} vertices without labels")
    deg = graph.degrees()
    print(f"mean |N(v)|: {deg.mean():.4f}, max |N(v)|: {deg.max() if len(deg) else 0}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--dataset", help="dataset manifest")
    common.add_argument("--gamma", type=float, help="margin")
    common.add_argument("--kappa", type=int, help="neighbor sample bound")
    common.add_argument("--epochs", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--directed", type=parse_bool, nargs="?", const=True,
                        help="use edge directions (true/false)")
    common.add_argument("--repetitions", type=int)
    common.add_argument("--tr", type=float, nargs="+", help="training fraction(s)")
    common.add_argument("--per-class-n", dest="per_class_n", type=int)
    common.add_argument("--learning-rate", dest="learning_rate", type=float)
    common.add_argument("--batch-size", dest="batch_size", type=int)
    common.add_argument("--dim", type=int)
    common.add_argument("--relations", type=parse_bool, nargs="?", const=True)
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="embprop", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"embprop {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train label embeddings")
    p = sub.add_parser("infer", parents=[common], help="embed new nodes from their neighbors")
    p.add_argument("--new-nodes", dest="new_nodes", help="'<name>\\t<neighbor>...' per line")
    p.add_argument("--model-dir", dest="model_dir", help="output directory of a train run")
    p = sub.add_parser("evaluate", parents=[common], help="node classification on embeddings")
    p.add_argument("--embeddings", help="node embedding file (default: OUT/nodes.emb)")
    p.add_argument("--n-test", dest="n_test", type=int, help="per-class protocol test size")
    p.add_argument("--n-val", dest="n_val", type=int, help="per-class protocol validation size")
    p = sub.add_parser("reproduce", parents=[common], help="rerun a published setting")
    p.add_argument("name", help="dataset name, e.g. cora")
    p.add_argument("setting", choices=["transductive", "inductive", "directed"])
    p.add_argument("--data-dir", dest="data_dir", help="directory holding <name>/<name>.manifest")
    p.add_argument("--removed", type=float, nargs="+", help="removed fractions (inductive)")
    sub.add_parser("inspect", parents=[common], help="print dataset statistics")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_run_config(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "infer":
            return cmd_infer(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "reproduce":
            return cmd_reproduce(cfg, args.name, args.setting)
        return cmd_inspect(cfg)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EmbpropError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
