"""Node-classification evaluation on frozen embeddings.

Splits, one-vs-rest L2-regularised logistic regression, top-n multi-label
prediction, and accuracy / micro-F1 / macro-F1.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from . import rng as rng_streams
from .errors import InsufficientClassError, InvalidArgumentError, InvalidFractionError

logger = logging.getLogger(__name__)

MARGIN_GRID = (1.0, 5.0, 10.0, 20.0)
L2_GRID = (0.01, 0.1, 0.5, 1.0, 5.0, 10.0)

GRADIENT_TOLERANCE = 1e-6
MAX_ITERATIONS = 1000


def _as_label_sets(labels):
    return [frozenset(int(c) for c in labs) for labs in labels]


@dataclass
class Split:
    protocol: str
    seed: int
    train: np.ndarray
    test: np.ndarray
    val: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def roles(self):
        """``(vertex, role)`` pairs sorted by vertex id."""
        pairs = [(int(v), "train") for v in self.train] + [(int(v), "test") for v in self.test]
        pairs += [(int(v), "val") for v in self.val]
        return sorted(pairs)


def make_fraction_split(labels, fraction: float, seed: int) -> Split:
    """Uniformly pick ``floor(fraction * n)`` labeled vertices for training; the rest is test."""
    if not 0 < fraction < 1:
        raise InvalidFractionError(f"fraction must lie in (0, 1), got {fraction}")
    labels = _as_label_sets(labels)
    labeled = np.array([v for v, labs in enumerate(labels) if labs], dtype=np.int64)
    n_train = math.floor(fraction * len(labeled))
    if n_train == 0 or n_train == len(labeled):
        raise InvalidFractionError(f"fraction {fraction} leaves an empty train or test set")
    perm = rng_streams.stream(seed, "splits").permutation(labeled)
    return Split("fraction", seed, np.sort(perm[:n_train]), np.sort(perm[n_train:]))


def make_per_class_split(labels, n_per_class: int, n_test: int, n_val: int, seed: int) -> Split:
    """``n_per_class`` training vertices per class, then disjoint test and validation sets."""
    labels = _as_label_sets(labels)
    labeled = np.array([v for v, labs in enumerate(labels) if labs], dtype=np.int64)
    perm = rng_streams.stream(seed, "splits").permutation(labeled)
    classes = sorted(set().union(*labels)) if labels else []
    chosen, taken = [], set()
    for c in classes:
        members = [int(v) for v in perm if c in labels[v] and int(v) not in taken]
        if len(members) < n_per_class:
            raise InsufficientClassError(
                f"class {c} has {len(members)} available vertices, need {n_per_class}")
        picked = members[:n_per_class]
        chosen.extend(picked)
        taken.update(picked)
    rest = [int(v) for v in perm if int(v) not in taken]
    if len(rest) < n_test + n_val:
        raise InsufficientClassError(
            f"only {len(rest)} vertices left for {n_test} test and {n_val} validation vertices")
    return Split("per-class", seed, np.sort(np.array(chosen, dtype=np.int64)),
                 np.sort(np.array(rest[:n_test], dtype=np.int64)),
                 np.sort(np.array(rest[n_test:n_test + n_val], dtype=np.int64)))


# logistic regression ------------------------------------------------------

@dataclass
class ClassifierModel:
    weights: np.ndarray          # (num_classes, dim)
    bias: np.ndarray             # (num_classes,)
    l2: float
    converged: np.ndarray        # (num_classes,) bool
    objective_history: list = field(default_factory=list, repr=False)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    def scores(self, X) -> np.ndarray:
        return np.asarray(X) @ self.weights.T + self.bias


def logistic_objective(params, X, y, l2):
    """Objective and gradient of ``sum log(1 + exp(-y (w.x + b))) + l2 * |w|^2``."""
    w, b = params[:-1], params[-1]
    margins = y * (X @ w + b)
    value = float(np.sum(np.logaddexp(0.0, -margins)) + l2 * (w @ w))
    coef = -y * expit(-margins)
    grad = np.empty_like(params)
    grad[:-1] = X.T @ coef + 2.0 * l2 * w
    grad[-1] = coef.sum()
    return value, grad


def _fit_binary(X, y, l2):
    history = []
    x0 = np.zeros(X.shape[1] + 1)
    history.append(logistic_objective(x0, X, y, l2)[0])

    def record(intermediate_result):
        history.append(float(intermediate_result.fun))

    res = minimize(logistic_objective, x0, args=(X, y, l2), jac=True, method="L-BFGS-B",
                   callback=record,
                   options={"maxiter": MAX_ITERATIONS, "gtol": GRADIENT_TOLERANCE, "ftol": 0.0})
    grad_norm = float(np.linalg.norm(logistic_objective(res.x, X, y, l2)[1]))
    converged = grad_norm < GRADIENT_TOLERANCE or bool(res.success)
    return res.x, converged, history


def fit_logistic(representations, split_or_ids, labels, l2: float, num_classes: int | None = None
                 ) -> ClassifierModel:
    """One binary classifier per class on the training vertices; the bias is not penalised.

    ``split_or_ids`` is a :class:`Split` (its ``train`` part is used) or an
    array of vertex ids.
    """
    if l2 < 0:
        raise InvalidArgumentError("l2 must be non-negative")
    train = split_or_ids.train if isinstance(split_or_ids, Split) else np.asarray(split_or_ids)
    labels = _as_label_sets(labels)
    if num_classes is None:
        num_classes = max((max(l) for l in labels if l), default=-1) + 1
    X = np.asarray(representations, dtype=np.float64)[train]
    W = np.zeros((num_classes, X.shape[1]))
    bias = np.zeros(num_classes)
    converged = np.zeros(num_classes, dtype=bool)
    histories = []
    for c in range(num_classes):
        y = np.array([1.0 if c in labels[v] else -1.0 for v in train])
        params, ok, hist = _fit_binary(X, y, l2)
        W[c], bias[c], converged[c] = params[:-1], params[-1], ok
        histories.append(hist)
        if not ok:
            logger.warning("logistic regression for class %d did not converge", c)
    return ClassifierModel(W, bias, l2, converged, histories)


def predict_multilabel(model: ClassifierModel, representations, vertices, label_counts):
    """Top-``n`` classes per vertex, ``n`` being that vertex's true label count.

    Ties are broken by ascending class id.
    """
    X = np.asarray(representations)[np.asarray(vertices, dtype=np.int64)]
    scores = model.scores(X)
    order = np.argsort(-scores, axis=1, kind="stable")
    return [frozenset(int(c) for c in order[r, :int(n)]) for r, n in enumerate(label_counts)]


# metrics ------------------------------------------------------------------

@dataclass
class MetricsReport:
    accuracy: float
    micro_f1: float
    macro_f1: float


@dataclass
class MetricsSummary:
    runs: list[MetricsReport]

    def _stat(self, name, fn):
        return float(fn([getattr(r, name) for r in self.runs]))

    def mean(self, name: str) -> float:
        return self._stat(name, np.mean)

    def std(self, name: str) -> float:
        return self._stat(name, np.std)


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def compute_metrics(predictions, truths, num_classes: int | None = None) -> MetricsReport:
    """Accuracy (exact set match), micro-F1 and macro-F1.

    A class that never occurs in either predictions or truths scores F1 = 0
    and still counts towards the macro average.
    """
    predictions = _as_label_sets(predictions)
    truths = _as_label_sets(truths)
    if len(predictions) != len(truths):
        raise InvalidArgumentError("predictions and truths differ in length")
    if num_classes is None:
        num_classes = max((max(s) for s in predictions + truths if s), default=-1) + 1
    tp = np.zeros(num_classes)
    fp = np.zeros(num_classes)
    fn = np.zeros(num_classes)
    exact = 0
    for pred, true in zip(predictions, truths):
        for c in pred & true:
            tp[c] += 1
        for c in pred - true:
            fp[c] += 1
        for c in true - pred:
            fn[c] += 1
        exact += pred == true
    accuracy = exact / len(truths) if truths else 0.0
    micro = _f1(tp.sum(), fp.sum(), fn.sum())
    macro = float(np.mean([_f1(tp[c], fp[c], fn[c]) for c in range(num_classes)])) if num_classes else 0.0
    return MetricsReport(float(accuracy), float(micro), macro)


def evaluate(representations, train_ids, test_ids, labels, l2: float,
             num_classes: int | None = None) -> MetricsReport:
    """Fit on ``train_ids`` and score the top-n predictions on ``test_ids``."""
    labels = _as_label_sets(labels)
    if num_classes is None:
        num_classes = max((max(l) for l in labels if l), default=-1) + 1
    model = fit_logistic(representations, train_ids, labels, l2, num_classes)
    truths = [labels[v] for v in test_ids]
    preds = predict_multilabel(model, representations, test_ids, [len(t) for t in truths])
    return compute_metrics(preds, truths, num_classes)


def is_single_label(labels) -> bool:
    return all(len(l) == 1 for l in _as_label_sets(labels) if l)


def selection_score(report: MetricsReport, single_label: bool) -> float:
    return report.accuracy if single_label else report.micro_f1


def cross_validation_score(representations, train_ids, labels, l2: float, folds: int = 3,
                           seed: int = 0, num_classes: int | None = None) -> float:
    """Mean selection score over ``folds`` folds of ``train_ids``."""
    labels = _as_label_sets(labels)
    single = is_single_label(labels)
    perm = rng_streams.stream(seed, "splits", 1).permutation(np.asarray(train_ids))
    parts = np.array_split(perm, folds)
    scores = []
    for f in range(folds):
        held = np.sort(parts[f])
        fit_ids = np.sort(np.concatenate([parts[g] for g in range(folds) if g != f]))
        scores.append(selection_score(
            evaluate(representations, fit_ids, held, labels, l2, num_classes), single))
    return float(np.mean(scores))


def select_hyperparameters(margins, l2_values, score):
    """Pair ``(margin, l2)`` maximising ``score(margin, l2)``.

    Ties go to the smaller margin, then the smaller ``l2``.
    """
    best, best_score = None, -np.inf
    for margin in sorted(margins):
        for l2 in sorted(l2_values):
            value = score(margin, l2)
            if value > best_score:
                best, best_score = (margin, l2), value
    return best


def select_l2(representations, split: Split, labels, l2_values=L2_GRID, folds: int = 3,
              num_classes: int | None = None) -> float:
    """Regularisation chosen on the validation set if the split has one, else by CV."""
    labels = _as_label_sets(labels)
    single = is_single_label(labels)
    if len(split.val):
        def score(_, l2):
            return selection_score(
                evaluate(representations, split.train, split.val, labels, l2, num_classes), single)
    else:
        def score(_, l2):
            return cross_validation_score(representations, split.train, labels, l2, folds,
                                          split.seed, num_classes)
    return select_hyperparameters([0.0], l2_values, score)[1]
