"""Random forest of entropy-split decision trees.

Trees are grown on bootstrap samples; at every node a random subset of
``floor(sqrt(n_features))`` features is searched for the threshold with the
largest information gain. Closed-world prediction is a hard majority vote of
the trees; :meth:`RandomForest.predict_proba` averages the leaf class
frequencies (soft voting) and is what open-world thresholds are applied to.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed
from scipy import sparse
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

FORMAT_NAME = "dnsfp-forest"
FORMAT_VERSION = 1
_MIN_GAIN = 1e-12


def entropy(counts) -> float:
    """Shannon entropy in bits of a vector of (weighted) class counts."""
    counts = np.asarray(counts, dtype=np.float64)
    counts = counts[counts > 0]
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(-(p * np.log2(p)).sum())


def _xlogx(a):
    a = np.asarray(a, dtype=np.float64)
    logs = np.log2(a, out=np.zeros_like(a), where=a > 0)
    return a * logs


@dataclass
class Tree:
    """Array-backed binary tree.

    ``feature[i] == -1`` marks a leaf; leaves carry integer ``class_counts``
    over the global class indices. Samples with ``x[feature] <= threshold``
    go left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    class_counts: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, i) -> bool:
        return self.feature[i] < 0

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.intp)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            cur = node[active]
            go_left = X[active, self.feature[cur]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = active[self.feature[node[active]] >= 0]
        return node

    def leaf_proba(self) -> np.ndarray:
        totals = self.class_counts.sum(axis=1, keepdims=True)
        return np.divide(self.class_counts, totals,
                         out=np.zeros(self.class_counts.shape), where=totals > 0)

    def to_dict(self) -> dict:
        leaves = {}
        for i in np.flatnonzero(self.feature < 0):
            nz = np.flatnonzero(self.class_counts[i])
            leaves[str(int(i))] = {str(int(c)): int(self.class_counts[i, c]) for c in nz}
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(t) for t in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "leaves": leaves,
        }

    @classmethod
    def from_dict(cls, d: dict, n_classes: int) -> "Tree":
        feature = np.asarray(d["feature"], dtype=np.intp)
        counts = np.zeros((len(feature), n_classes), dtype=np.int64)
        for node, cc in d["leaves"].items():
            for c, v in cc.items():
                counts[int(node), int(c)] = v
        return cls(feature, np.asarray(d["threshold"], dtype=np.float64),
                   np.asarray(d["left"], dtype=np.intp),
                   np.asarray(d["right"], dtype=np.intp), counts)


def _live_features(X, csr, idx):
    """Features that are not constant over the rows ``idx``.

    A column is constant iff it is zero on every row or nonzero on every row
    with a single value; the CSR view makes this proportional to the number
    of nonzeros in the node instead of the number of features.
    """
    starts, ends = csr.indptr[idx], csr.indptr[idx + 1]
    lens = ends - starts
    total = int(lens.sum())
    if total == 0:
        return np.empty(0, dtype=np.intp)
    offsets = np.repeat(starts - np.concatenate(([0], np.cumsum(lens)[:-1])), lens)
    cols = csr.indices[offsets + np.arange(total)]
    touched, hits = np.unique(cols, return_counts=True)
    live = touched[hits < len(idx)]
    full = touched[hits == len(idx)]
    if full.size:
        V = X[np.ix_(idx, full)]
        live = np.union1d(live, full[V.max(axis=0) > V.min(axis=0)])
    return live


def _sample_features(X, csr, idx, n_wanted, rng):
    """Draw up to ``n_wanted`` features uniformly among the non-constant ones.

    Constant features cannot split the node and do not count towards the
    budget.
    """
    live = _live_features(X, csr, idx)
    if len(live) > n_wanted:
        live = rng.choice(live, size=n_wanted, replace=False)
    return np.sort(live)


def _best_split(X, idx, y_local, w, totals, feats):
    """Exhaustive search over ``feats`` for the max-gain threshold.

    Returns ``(feature, threshold, gain)`` or ``None``. Ties go to the lowest
    feature index, then the lowest threshold.
    """
    n_classes = len(totals)
    n_w = totals.sum()
    m = len(feats)
    V = X[np.ix_(idx, feats)]
    order = np.argsort(V, axis=0, kind="stable")
    Vs = np.take_along_axis(V, order, axis=0)
    rank = np.zeros(Vs.shape, dtype=np.intp)
    np.cumsum(Vs[1:] != Vs[:-1], axis=0, out=rank[1:])
    n_values = rank[-1] + 1
    u_max = int(n_values.max())
    if u_max < 2:
        return None

    # class-by-distinct-value contingency table per candidate feature
    flat = (np.arange(m)[None, :] * u_max + rank) * n_classes + y_local[order]
    table = np.bincount(flat.ravel(), weights=w[order].ravel(),
                        minlength=m * u_max * n_classes).reshape(m, u_max, n_classes)
    left = np.cumsum(table, axis=1)[:, :-1, :]
    right = totals[None, None, :] - left
    n_left = left.sum(axis=2)
    n_right = n_w - n_left
    child = (_xlogx(n_left) - _xlogx(left).sum(axis=2)
             + _xlogx(n_right) - _xlogx(right).sum(axis=2)) / n_w
    gain = entropy(totals) - child
    gain[np.arange(u_max - 1)[None, :] >= (n_values - 1)[:, None]] = -np.inf

    # gains equal up to round-off count as tied; row-major order puts the
    # lowest feature, then the lowest threshold, first
    top = gain.max()
    best = int(np.flatnonzero(gain.ravel() >= top - _MIN_GAIN)[0])
    j, u = divmod(best, u_max - 1)
    if not gain[j, u] > _MIN_GAIN:
        return None
    values = np.empty((m, u_max), dtype=np.float64)
    values[np.broadcast_to(np.arange(m), rank.shape), rank] = Vs
    threshold = (values[j, u] + values[j, u + 1]) / 2.0
    return int(feats[j]), float(threshold), float(gain[j, u])


def grow_tree(X, y, n_classes, sample_weight, max_features, min_samples_split=2,
              max_depth=None, rng=None, csr=None):
    """Grow one tree on the rows with positive ``sample_weight``.

    Returns the :class:`Tree` and the per-feature impurity decrease, each
    split weighted by the fraction of (weighted) samples reaching its node.
    """
    rng = np.random.default_rng(rng)
    if csr is None:
        csr = sparse.csr_matrix(X)
    w_all = np.asarray(sample_weight, dtype=np.int64)
    root = np.flatnonzero(w_all > 0)
    total_w = float(w_all.sum())
    decrease = np.zeros(X.shape[1])

    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(None)
        return len(feature) - 1

    stack = [(new_node(), root, 0)]
    while stack:
        node, idx, depth = stack.pop()
        cc = np.bincount(y[idx], weights=w_all[idx], minlength=n_classes).astype(np.int64)
        n_w = cc.sum()
        present = np.flatnonzero(cc)
        split = None
        if (len(present) > 1 and n_w >= min_samples_split
                and (max_depth is None or depth < max_depth)):
            feats = _sample_features(X, csr, idx, max_features, rng)
            if len(feats):
                lookup = np.full(n_classes, -1, dtype=np.intp)
                lookup[present] = np.arange(len(present))
                split = _best_split(X, idx, lookup[y[idx]], w_all[idx].astype(np.float64),
                                    cc[present].astype(np.float64), feats)
        if split is None:
            counts[node] = cc
            continue
        f, thr, gain = split
        decrease[f] += n_w / total_w * gain
        go_left = X[idx, f] <= thr
        l_node, r_node = new_node(), new_node()
        feature[node], threshold[node] = f, thr
        left[node], right[node] = l_node, r_node
        # push right first so the left subtree gets the lower node ids
        stack.append((r_node, idx[~go_left], depth + 1))
        stack.append((l_node, idx[go_left], depth + 1))

    class_counts = np.zeros((len(feature), n_classes), dtype=np.int64)
    for i, cc in enumerate(counts):
        if cc is not None:
            class_counts[i] = cc
    tree = Tree(np.asarray(feature, dtype=np.intp), np.asarray(threshold, dtype=np.float64),
                np.asarray(left, dtype=np.intp), np.asarray(right, dtype=np.intp),
                class_counts)
    return tree, decrease


def _resolve_max_features(max_features, n_features):
    if max_features == "sqrt":
        return max(1, math.isqrt(n_features))
    if max_features is None:
        return n_features
    if isinstance(max_features, float):
        return max(1, int(max_features * n_features))
    return max(1, min(int(max_features), n_features))


def _fit_one(X, csr, y, n_classes, seed, bootstrap, max_features, min_samples_split, max_depth):
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    if bootstrap:
        weight = np.bincount(rng.integers(0, n, size=n), minlength=n)
    else:
        weight = np.ones(n, dtype=np.int64)
    tree, decrease = grow_tree(X, y, n_classes, weight, max_features,
                               min_samples_split, max_depth, rng, csr)
    return tree, decrease, weight


class RandomForest(ClassifierMixin, BaseEstimator):
    """Random forest classifier grown from scratch.

    Parameters
    ----------
    n_trees : int, default 100
    max_features : "sqrt", int, float or None, default "sqrt"
        Number of non-constant features searched per split.
    min_samples_split : int, default 2
    max_depth : int or None, default None
    bootstrap : bool, default True
    oob_score : bool, default False
        Compute ``oob_error_`` from the out-of-bag samples of each tree.
    random_state : int, default 0
        Seeds the per-tree seeds; all randomness flows from it.
    n_jobs : int, default 1
        Trees are grown in threads; results do not depend on ``n_jobs``.
    """

    def __init__(self, n_trees=100, max_features="sqrt", min_samples_split=2,
                 max_depth=None, bootstrap=True, oob_score=False, random_state=0,
                 n_jobs=1):
        self.n_trees = n_trees
        self.max_features = max_features
        self.min_samples_split = min_samples_split
        self.max_depth = max_depth
        self.bootstrap = bootstrap
        self.oob_score = oob_score
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X = check_array(X, dtype=(np.float32, np.float64))
        y = np.asarray(y)
        if len(y) != X.shape[0]:
            raise ValueError(f"got {X.shape[0]} rows but {len(y)} labels")
        if X.shape[0] == 0:
            raise ValueError("cannot fit a forest on zero samples")
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("degenerate training set: need at least 2 classes")
        self.n_classes_ = len(self.classes_)
        self.n_features_in_ = X.shape[1]

        seed = 0 if self.random_state is None else int(self.random_state)
        self.per_tree_seeds_ = np.random.default_rng(seed).integers(
            0, 2**63 - 1, size=self.n_trees, dtype=np.int64).tolist()
        csr = sparse.csr_matrix(X)
        # column-major so per-node column gathers are contiguous
        X = np.asfortranarray(X)
        k = _resolve_max_features(self.max_features, self.n_features_in_)
        results = Parallel(n_jobs=self.n_jobs, prefer="threads")(
            delayed(_fit_one)(X, csr, y_idx, self.n_classes_, s, self.bootstrap, k,
                              self.min_samples_split, self.max_depth)
            for s in self.per_tree_seeds_)
        self.trees_ = [r[0] for r in results]
        self._set_importances(np.mean([r[1] for r in results], axis=0))
        self._cache()
        if self.oob_score:
            self._compute_oob(X, y_idx, [r[2] for r in results])
        return self

    def _set_importances(self, decrease):
        total = decrease.sum()
        self.feature_importances_ = decrease / total if total > 0 else np.zeros_like(decrease)

    def _cache(self):
        self._leaf_proba = [t.leaf_proba() for t in self.trees_]
        self._leaf_vote = [np.argmax(t.class_counts, axis=1) for t in self.trees_]

    def _compute_oob(self, X, y_idx, weights):
        acc = np.zeros((X.shape[0], self.n_classes_))
        for tree, proba, w in zip(self.trees_, self._leaf_proba, weights):
            out = np.flatnonzero(w == 0)
            if out.size:
                acc[out] += proba[tree.apply(X[out])]
        seen = acc.sum(axis=1) > 0
        self.oob_decision_function_ = acc
        self.oob_error_ = (float(np.mean(np.argmax(acc[seen], axis=1) != y_idx[seen]))
                           if seen.any() else float("nan"))

    def _check_X(self, X):
        check_is_fitted(self, "trees_")
        X = check_array(X, dtype=(np.float32, np.float64))
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, forest was trained on {self.n_features_in_}")
        return X

    def tree_votes(self, X) -> np.ndarray:
        """Class index voted by every tree, shape ``(n_trees, n_samples)``."""
        X = self._check_X(X)
        return np.stack([vote[t.apply(X)] for t, vote in zip(self.trees_, self._leaf_vote)])

    def predict_proba(self, X) -> np.ndarray:
        X = self._check_X(X)
        acc = np.zeros((X.shape[0], self.n_classes_))
        for t, proba in zip(self.trees_, self._leaf_proba):
            acc += proba[t.apply(X)]
        return acc / len(self.trees_)

    def predict(self, X) -> np.ndarray:
        """Majority vote of the trees; ties go to the lowest class index."""
        votes = self.tree_votes(X)
        tally = np.zeros((votes.shape[1], self.n_classes_), dtype=np.int64)
        for row in votes:
            tally[np.arange(votes.shape[1]), row] += 1
        return self.classes_[np.argmax(tally, axis=1)]

    # serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        check_is_fitted(self, "trees_")
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "params": self.get_params(),
            "classes": [c.item() if hasattr(c, "item") else c for c in self.classes_],
            "n_features": int(self.n_features_in_),
            "per_tree_seeds": [int(s) for s in self.per_tree_seeds_],
            "feature_importances": [float(v) for v in self.feature_importances_],
            "trees": [t.to_dict() for t in self.trees_],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RandomForest":
        if d.get("format") != FORMAT_NAME or d.get("version") != FORMAT_VERSION:
            raise ValueError("not a forest file of a supported version")
        f = cls(**d["params"])
        f.classes_ = np.asarray(d["classes"])
        f.n_classes_ = len(f.classes_)
        f.n_features_in_ = d["n_features"]
        f.per_tree_seeds_ = list(d["per_tree_seeds"])
        f.feature_importances_ = np.asarray(d["feature_importances"], dtype=np.float64)
        f.trees_ = [Tree.from_dict(t, f.n_classes_) for t in d["trees"]]
        f._cache()
        return f

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def save_forest(forest: RandomForest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(forest.dumps())


def load_forest(path) -> RandomForest:
    with open(path, encoding="utf-8") as fh:
        return RandomForest.from_dict(json.load(fh))


def top_k_features(importances, names, k: int):
    """The ``k`` most important features as ``(name, importance)``, descending.

    Ties keep the feature-space order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    importances = np.asarray(importances, dtype=np.float64)
    if len(names) != len(importances):
        raise ValueError("names and importances differ in length")
    order = np.argsort(-importances, kind="stable")[:k]
    return [(names[i], float(importances[i])) for i in order]


def top_k_overlap(a, b, k: int = 15) -> int:
    """Number of shared features among the top-``k`` lists of two forests."""
    return len({n for n, _ in a[:k]} & {n for n, _ in b[:k]})
