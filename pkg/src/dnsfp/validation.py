"""Input validation helpers shared by the estimators."""
from __future__ import annotations

import numpy as np

from .traces import Dataset, Trace, _check_records


def check_records(x) -> tuple[int, ...]:
    """Return the record tuple of a :class:`Trace` or validated int sequence."""
    if isinstance(x, Trace):
        return x.records
    if isinstance(x, (str, bytes)):
        raise TypeError("a trace must be a sequence of integers, not a string")
    return _check_records(tuple(x))


def check_traces(X) -> list[tuple[int, ...]]:
    """Validate a collection of traces (a Dataset, Traces, or int sequences)."""
    if isinstance(X, Dataset):
        X = X.traces
    if isinstance(X, np.ndarray) and X.dtype != object and X.ndim == 2:
        X = list(X)
    return [check_records(x) for x in X]


def check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"labels must be 1-dimensional, got shape {y.shape}")
    if len(y) != n:
        raise ValueError(f"got {n} samples but {len(y)} labels")
    return y


def split_dataset(d: Dataset):
    """Return ``(traces, labels)`` of a dataset in the estimator calling form."""
    return list(d.traces), np.asarray(d.labels)
