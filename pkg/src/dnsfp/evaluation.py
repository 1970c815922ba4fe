"""Experiment harness for trace classifiers.

Closed-world cross-validation and cross-dataset tests report macro metrics;
the open-world harness sweeps a probability threshold over a monitored set.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.model_selection import StratifiedKFold
from sklearn.pipeline import Pipeline
from sklearn.utils.validation import check_is_fitted

from .features import NGramFeaturizer
from .forest import RandomForest
from .traces import Dataset

_LOGGER = logging.getLogger(__name__)

UNMONITORED = "__unmonitored__"


def make_classifier(n_trees=100, random_state=0, n_jobs=1, **forest_params) -> Pipeline:
    """The default attack: n-gram features followed by a random forest."""
    return Pipeline([
        ("ngrams", NGramFeaturizer()),
        ("forest", RandomForest(n_trees=n_trees, random_state=random_state,
                                n_jobs=n_jobs, **forest_params)),
    ])


# --------------------------------------------------------------------------
# Metrics

@dataclass
class ConfusionMatrix:
    labels: list
    counts: np.ndarray  # rows = true label, columns = predicted label

    def support(self) -> dict:
        return {lab: int(n) for lab, n in zip(self.labels, self.counts.sum(axis=1))}

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        labels = sorted(set(self.labels) | set(other.labels))
        a, b = _reindex(self, labels), _reindex(other, labels)
        return ConfusionMatrix(labels, a.counts + b.counts)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["true\\pred"] + list(self.labels))
            for lab, row in zip(self.labels, self.counts):
                w.writerow([lab] + [int(v) for v in row])

    @classmethod
    def from_csv(cls, path) -> "ConfusionMatrix":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        labels = rows[0][1:]
        counts = np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64)
        return cls(labels, counts)

    def to_dot(self, path, name: str = "confusion") -> None:
        """Directed graph of misclassifications: edge true -> predicted."""
        lines = [f"digraph {_dot_id(name)} {{"]
        for lab in self.labels:
            lines.append(f"  {_dot_id(lab)};")
        for i, j in zip(*np.nonzero(self.counts)):
            if i != j:
                n = int(self.counts[i, j])
                lines.append(f"  {_dot_id(self.labels[i])} -> {_dot_id(self.labels[j])}"
                             f" [weight={n}, label={n}];")
        lines.append("}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


def _dot_id(s) -> str:
    return '"' + str(s).replace("\\", "\\\\").replace('"', '\\"') + '"'


def _reindex(cm: ConfusionMatrix, labels) -> ConfusionMatrix:
    pos = {lab: i for i, lab in enumerate(labels)}
    out = np.zeros((len(labels), len(labels)), dtype=np.int64)
    idx = [pos[lab] for lab in cm.labels]
    out[np.ix_(idx, idx)] = cm.counts
    return ConfusionMatrix(list(labels), out)


def export_confusion(cm: ConfusionMatrix, path, format: str = "csv") -> None:
    if format == "csv":
        cm.to_csv(path)
    elif format == "dot":
        cm.to_dot(path)
    else:
        raise ValueError(f"unknown confusion format {format!r}")


@dataclass
class Metrics:
    per_class: dict
    macro: dict
    support: dict

    def to_dict(self) -> dict:
        return asdict(self)


def _prf(tp, fp, fn):
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def metrics_from_confusion(cm: ConfusionMatrix) -> Metrics:
    """One-vs-all precision, recall and F1 per class plus their macro mean."""
    counts = cm.counts
    tp = np.diag(counts)
    predicted = counts.sum(axis=0)
    actual = counts.sum(axis=1)
    per_class = {}
    for i, lab in enumerate(cm.labels):
        p, r, f = _prf(int(tp[i]), int(predicted[i] - tp[i]), int(actual[i] - tp[i]))
        per_class[lab] = {"precision": p, "recall": r, "f1": f}
    macro = {k: float(np.mean([v[k] for v in per_class.values()]))
             for k in ("precision", "recall", "f1")}
    return Metrics(per_class, macro, cm.support())


def confusion_matrix(y_true, y_pred, labels=None) -> ConfusionMatrix:
    y_true, y_pred = list(y_true), list(y_pred)
    if len(y_true) != len(y_pred):
        raise ValueError(f"length mismatch: {len(y_true)} true vs {len(y_pred)} predicted")
    if not y_true:
        raise ValueError("need at least one prediction")
    if labels is None:
        labels = sorted(set(y_true) | set(y_pred))
    pos = {lab: i for i, lab in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        counts[pos[t], pos[p]] += 1
    return ConfusionMatrix(list(labels), counts)


def compute_metrics(y_true, y_pred, labels=None):
    """Return ``(Metrics, ConfusionMatrix)`` for a set of predictions.

    >>> m, _ = compute_metrics(["a", "a", "b", "b"], ["a", "b", "b", "b"])
    >>> round(m.macro["f1"], 4)
    0.7333
    """
    cm = confusion_matrix(y_true, y_pred, labels)
    return metrics_from_confusion(cm), cm


# --------------------------------------------------------------------------
# Closed world

def _summary(values) -> dict:
    a = np.asarray(values, dtype=np.float64)
    return {"mean": float(a.mean()), "std": float(a.std())}


@dataclass
class CVReport:
    folds: int
    seed: int
    per_fold: list          # macro metrics of every fold
    mean: dict
    std: dict
    per_class: dict         # metrics from the summed confusion matrix
    confusion: ConfusionMatrix
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "metrics": {"mean": self.mean, "std": self.std},
            "per_fold": self.per_fold,
            "per_class": self.per_class,
            "config": self.config,
            "seeds": {"cv": self.seed},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


_SCALARS = (int, float, str, bool, type(None))


def _model_config(model) -> dict:
    """JSON-safe view of the estimator's (nested) parameters."""
    out = {"estimator": type(model).__name__}
    for k, v in sorted(model.get_params(deep=True).items()):
        if k.endswith("n_jobs"):
            continue  # must not leak into reports: results do not depend on it
        if isinstance(v, _SCALARS):
            out[k] = v
        elif isinstance(v, (tuple, list)) and all(isinstance(x, _SCALARS) for x in v):
            out[k] = list(v)
        elif isinstance(v, type):
            out[k] = v.__name__
    return out


def stratified_folds(labels, folds: int, seed: int):
    """Per-fold ``(train_idx, test_idx)`` with every class split evenly."""
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    short = classes[counts < folds]
    if len(short):
        raise ValueError(f"class {str(short[0])!r} has {int(counts[counts < folds][0])} samples, "
                         f"fewer than folds={folds}")
    skf = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    return list(skf.split(np.zeros(len(labels)), labels))


def cross_validate(d: Dataset, model=None, folds: int = 10, seed: int = 0) -> CVReport:
    """Stratified k-fold cross-validation of a trace classifier.

    ``model`` is any estimator that is fit on traces and labels (default
    :func:`make_classifier`); it is cloned per fold so the feature space is
    rebuilt from the training split only.
    """
    model = make_classifier() if model is None else model
    traces = list(d.traces)
    labels = np.asarray(d.labels)
    per_fold, total = [], None
    for k, (train, test) in enumerate(stratified_folds(labels, folds, seed)):
        m = clone(model).fit([traces[i] for i in train], labels[train])
        pred = m.predict([traces[i] for i in test])
        metrics, cm = compute_metrics(labels[test], pred, labels=list(d.classes))
        per_fold.append(dict(metrics.macro, fold=k))
        total = cm if total is None else total + cm
        _LOGGER.info("fold %d: F1 %.4f", k, metrics.macro["f1"])
    keys = ("precision", "recall", "f1")
    summary = {k: _summary([f[k] for f in per_fold]) for k in keys}
    return CVReport(
        folds=folds, seed=seed, per_fold=per_fold,
        mean={k: summary[k]["mean"] for k in keys},
        std={k: summary[k]["std"] for k in keys},
        per_class=metrics_from_confusion(total).per_class,
        confusion=total,
        config={"dataset": d.name, "folds": folds, "model": _model_config(model)},
    )


@dataclass
class CrossReport:
    metrics: Metrics
    confusion: ConfusionMatrix
    coverage: float
    evaluated: int
    excluded: int
    config: dict = field(default_factory=dict)
    model: object = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"metrics": self.metrics.to_dict(), "coverage": self.coverage,
                "evaluated": self.evaluated, "excluded": self.excluded,
                "config": self.config}


def cross_dataset(train: Dataset, test: Dataset, model=None) -> CrossReport:
    """Train on all of ``train``; evaluate on the ``test`` traces whose label
    was seen in training."""
    model = make_classifier() if model is None else model
    known = set(train.classes)
    kept = [t for t in test if t.label in known]
    if not kept:
        raise ValueError(f"datasets {train.name!r} and {test.name!r} share no labels")
    m = clone(model).fit(list(train.traces), np.asarray(train.labels))
    pred = m.predict(kept)
    metrics, cm = compute_metrics([t.label for t in kept], pred,
                                  labels=sorted(known | set(pred)))
    return CrossReport(metrics, cm, coverage=len(kept) / len(test), evaluated=len(kept),
                       excluded=len(test) - len(kept),
                       config={"train": train.name, "test": test.name,
                               "model": _model_config(model)}, model=m)


# --------------------------------------------------------------------------
# Open world

def default_thresholds() -> list[float]:
    return [round(0.1 * i, 1) for i in range(10)] + [0.99]


@dataclass
class OpenWorldConfig:
    monitored_fraction: float = 0.01
    training_class_fraction: float = 0.10
    thresholds: Sequence[float] = field(default_factory=default_thresholds)
    folds: int = 10
    seed: int = 0

    def __post_init__(self):
        for name in ("monitored_fraction", "training_class_fraction"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if any(not 0 <= t < 1 for t in self.thresholds):
            raise ValueError("thresholds must lie in [0, 1)")
        if self.folds < 1:
            raise ValueError("folds must be >= 1")


@dataclass
class ROCCurve:
    thresholds: list
    per_fold: list      # per fold: list of {threshold, precision, recall, f1, flagged}
    points: list        # per threshold: means and stds over folds
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"points": self.points, "per_fold": self.per_fold, "config": self.config}

    def to_csv(self, path) -> None:
        cols = ["threshold", "precision_mean", "precision_std", "recall_mean",
                "recall_std", "f1_mean", "f1_std"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for p in self.points:
                w.writerow([repr(float(p[c])) for c in cols])


class UniformProbabilityClassifier(ClassifierMixin, BaseEstimator):
    """Baseline that assigns equal probability to every training class."""

    def fit(self, X, y):
        self.classes_ = np.unique(np.asarray(y))
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "classes_")
        n = len(X)
        return np.full((n, len(self.classes_)), 1.0 / len(self.classes_))

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


def _split_class(traces, test_share, rng):
    order = rng.permutation(len(traces))
    n_test = max(1, int(round(len(traces) * test_share)))
    if n_test >= len(traces):
        raise ValueError("a training class needs at least 2 samples for open-world folds")
    return [traces[i] for i in order[n_test:]], [traces[i] for i in order[:n_test]]


def _downsample(items, n, rng):
    if len(items) <= n:
        return list(items)
    keep = np.sort(rng.choice(len(items), size=n, replace=False))
    return [items[i] for i in keep]


def open_world(d: Dataset, extra_unmonitored: Optional[Dataset] = None,
               cfg: Optional[OpenWorldConfig] = None, model=None) -> ROCCurve:
    """Monitored-vs-unmonitored evaluation with a probability threshold sweep.

    Every fold draws a fresh partition of the classes. Monitored classes come
    from ``d``; the remaining classes are split into unmonitored ones seen in
    training and unseen ones. Training is balanced between monitored and
    unmonitored samples. The test set holds as many monitored as unmonitored
    traces, the latter split evenly between seen and unseen classes. A trace
    is flagged as monitored iff its largest monitored-class probability
    exceeds the threshold.
    """
    cfg = OpenWorldConfig() if cfg is None else cfg
    model = make_classifier() if model is None else model
    groups = d.by_class()
    if extra_unmonitored is not None:
        for lab, ts in extra_unmonitored.by_class().items():
            groups.setdefault(lab, []).extend(ts)
    all_classes = sorted(groups)
    n_total = len(all_classes)
    n_mon = int(round(cfg.monitored_fraction * n_total))
    if n_mon == 0:
        raise ValueError(f"monitored_fraction {cfg.monitored_fraction} of {n_total} classes "
                         "yields zero monitored classes")
    if n_mon > len(d.classes):
        raise ValueError("more monitored classes requested than the dataset holds")
    n_seen = int(round(cfg.training_class_fraction * n_total)) - n_mon
    if n_seen < 1:
        raise ValueError("training_class_fraction leaves no unmonitored training classes")
    if n_total - n_mon - n_seen < 1:
        raise ValueError("no classes left for the unseen unmonitored set")

    per_fold = []
    for fold in range(cfg.folds):
        rng = np.random.default_rng([cfg.seed, fold])
        monitored = sorted(rng.choice(list(d.classes), size=n_mon, replace=False).tolist())
        rest = [c for c in all_classes if c not in set(monitored)]
        seen = sorted(rng.choice(rest, size=n_seen, replace=False).tolist())
        unseen = [c for c in rest if c not in set(seen)]

        share = 1.0 / max(cfg.folds, 2)
        mon_train, mon_test, unm_train, unm_seen_test = [], [], [], []
        for c in monitored:
            tr, te = _split_class(groups[c], share, rng)
            mon_train += tr
            mon_test += te
        for c in seen:
            tr, te = _split_class(groups[c], share, rng)
            unm_train += tr
            unm_seen_test += te
        unseen_pool = [t for c in unseen for t in groups[c]]

        n_bal = min(len(mon_train), len(unm_train))
        mon_train = _downsample(mon_train, n_bal, rng)
        unm_train = _downsample(unm_train, n_bal, rng)
        half = min(len(mon_test) // 2, len(unm_seen_test), len(unseen_pool))
        if half == 0:
            raise ValueError("not enough samples to build a balanced open-world test set")
        mon_test = _downsample(mon_test, 2 * half, rng)
        unm_test = (_downsample(unm_seen_test, half, rng)
                    + _downsample(unseen_pool, half, rng))

        X_train = mon_train + unm_train
        y_train = [t.label for t in mon_train] + [UNMONITORED] * len(unm_train)
        m = clone(model).fit(X_train, np.asarray(y_train))
        X_test = mon_test + unm_test
        is_mon = np.array([True] * len(mon_test) + [False] * len(unm_test))
        proba = m.predict_proba(X_test)
        mon_cols = [i for i, c in enumerate(m.classes_) if c != UNMONITORED]
        score = proba[:, mon_cols].max(axis=1)

        rows = []
        for t in cfg.thresholds:
            flagged = score > t
            tp = int(np.sum(flagged & is_mon))
            fp = int(np.sum(flagged & ~is_mon))
            fn = int(np.sum(~flagged & is_mon))
            p, r, f = _prf(tp, fp, fn)
            rows.append({"threshold": float(t), "precision": p, "recall": r, "f1": f,
                         "flagged": int(flagged.sum())})
        per_fold.append(rows)
        _LOGGER.info("open-world fold %d done (%d test traces)", fold, len(X_test))

    points = []
    for i, t in enumerate(cfg.thresholds):
        pt = {"threshold": float(t)}
        for k in ("precision", "recall", "f1"):
            s = _summary([rows[i][k] for rows in per_fold])
            pt[f"{k}_mean"], pt[f"{k}_std"] = s["mean"], s["std"]
        points.append(pt)
    config = dict(asdict(cfg), thresholds=[float(t) for t in cfg.thresholds],
                  n_classes=n_total, n_monitored=n_mon, n_seen_unmonitored=n_seen)
    return ROCCurve(list(cfg.thresholds), per_fold, points, config)
