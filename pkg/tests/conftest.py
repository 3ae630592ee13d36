import numpy as np
import pytest

from embprop.graph import LabeledGraph, LabelType, LabelVocabulary


def random_labeled_graph(rng, n, k=2, p_edge=0.25, max_labels=4, vocab_sizes=(6, 9),
                         directed=False, num_edge_types=0, allow_empty=False):
    """Random graph with ``k`` label types; labels drawn per vertex."""
    edges = [(u, v) for u in range(n) for v in range(n)
             if u != v and (directed or u < v) and rng.random() < p_edge]
    labels = []
    for i in range(k):
        size = vocab_sizes[i % len(vocab_sizes)]
        lo = 0 if allow_empty else 1
        labels.append([tuple(sorted(set(rng.integers(0, size, size=rng.integers(lo, max_labels + 1)).tolist())))
                       for _ in range(n)])
    etypes = rng.integers(0, num_edge_types, size=len(edges)).tolist() if num_edge_types else None
    graph = LabeledGraph(n, edges, labels, directed, etypes)
    vocab = LabelVocabulary(tuple(
        LabelType.from_labels(f"t{i}", [f"l{j}" for j in range(vocab_sizes[i % len(vocab_sizes)])])
        for i in range(k)))
    return graph, vocab


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion -------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion the test belongs to")


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            item.user_properties.append(("criterion", str(marker.args[0])))


def pytest_runtest_logreport(report):
    # a criterion fails if any of its tests fails, errors or is skipped
    crit = dict(report.user_properties).get("criterion")
    if crit is None or (report.when != "call" and report.outcome == "passed"):
        return
    ok = report.outcome == "passed"
    _CRITERIA[crit] = _CRITERIA.get(crit, True) and ok


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_CRITERIA, key=lambda c: (len(c), c)):
        line = f"criterion {crit}: {'PASS' if _CRITERIA[crit] else 'FAIL'}"
        terminalreporter.write_line(line)
