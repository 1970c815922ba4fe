"""N-gram features over TLS record sizes and bursts.

Each trace is described by counts of its size uni-grams and bi-grams and of
the uni-grams and bi-grams of its burst sequence. A :class:`FeatureSpace`
fixes the column order learned from training traces; n-grams unseen at
training time are dropped when vectorizing.
"""
from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .validation import check_records, check_traces

KINDS = ("size", "burst")
_KIND_RANK = {k: i for i, k in enumerate(KINDS)}


class NGramKey(NamedTuple):
    kind: str
    arity: int
    values: tuple[int, ...]

    def __str__(self):
        return f"{self.kind}:{self.arity}:{'|'.join(str(v) for v in self.values)}"

    @classmethod
    def parse(cls, text: str) -> "NGramKey":
        kind, arity, values = text.split(":")
        key = cls(kind, int(arity), tuple(int(v) for v in values.split("|")))
        if kind not in _KIND_RANK or len(key.values) != key.arity:
            raise ValueError(f"malformed n-gram key {text!r}")
        return key

    def sort_key(self):
        return (_KIND_RANK[self.kind], self.arity, self.values)


def bursts(records) -> list[int]:
    """Collapse maximal same-direction runs into signed burst lengths.

    >>> bursts((-64, 88, 33, -33))
    [-64, 121, -33]
    """
    records = check_records(records)
    out: list[int] = []
    for r in records:
        if out and (out[-1] > 0) == (r > 0):
            out[-1] += r
        else:
            out.append(r)
    return out


def _windows(seq: Sequence[int], n: int):
    return (tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def extract(records, arities: Iterable[int] = (1, 2)) -> Counter:
    """Count size and burst n-grams of a trace.

    Returns a ``Counter`` mapping :class:`NGramKey` to occurrence counts; only
    n-grams that occur are stored.
    """
    records = check_records(records)
    fv: Counter = Counter()
    for kind, seq in (("size", records), ("burst", bursts(records))):
        for n in arities:
            for w in _windows(seq, n):
                fv[NGramKey(kind, n, w)] += 1
    return fv


@dataclass(frozen=True)
class FeatureSpace:
    keys: tuple[NGramKey, ...]
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {k: i for i, k in enumerate(self.keys)})

    def __len__(self):
        return len(self.keys)

    def names(self) -> list[str]:
        return [str(k) for k in self.keys]


def build_space(traces, arities: Iterable[int] = (1, 2)) -> FeatureSpace:
    """Collect every n-gram occurring in ``traces`` in canonical order
    (kind, arity, then values)."""
    arities = tuple(arities)
    keys: set = set()
    n = 0
    for rec in check_traces(traces):
        keys.update(extract(rec, arities))
        n += 1
    if n == 0:
        raise ValueError("cannot build a feature space from zero traces")
    return FeatureSpace(tuple(sorted(keys, key=NGramKey.sort_key)))


def vectorize(fv, space: FeatureSpace, dtype=np.float64) -> np.ndarray:
    row = np.zeros(len(space), dtype=dtype)
    for key, count in fv.items():
        j = space.index.get(key)
        if j is not None:
            row[j] = count
    return row


class NGramFeaturizer(TransformerMixin, BaseEstimator):
    """Turn traces into dense n-gram count matrices.

    Parameters
    ----------
    arities : tuple of int, default (1, 2)
        N-gram orders extracted for both sizes and bursts.
    dtype : numpy dtype, default float32
        Element type of the output matrix. Counts are stored unnormalized.
    """

    def __init__(self, arities=(1, 2), dtype=np.float32):
        self.arities = arities
        self.dtype = dtype

    def fit(self, X, y=None):
        self.space_ = build_space(X, self.arities)
        self.n_features_out_ = len(self.space_)
        return self

    def transform(self, X):
        check_is_fitted(self, "space_")
        rows = [extract(rec, self.arities) for rec in check_traces(X)]
        out = np.zeros((len(rows), len(self.space_)), dtype=self.dtype)
        index = self.space_.index
        for i, fv in enumerate(rows):
            for key, count in fv.items():
                j = index.get(key)
                if j is not None:
                    out[i, j] = count
        return out

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "space_")
        return np.asarray(self.space_.names(), dtype=object)


def write_feature_csv(path, X: np.ndarray, space: FeatureSpace, labels=None) -> None:
    """Write a feature matrix with serialized n-gram keys as the header."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((["label"] if labels is not None else []) + space.names())
        for i, row in enumerate(np.asarray(X)):
            cells = [format(v, "g") for v in row.tolist()]
            w.writerow(([labels[i]] if labels is not None else []) + cells)
