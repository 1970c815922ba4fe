"""How quickly partial traces single out a website.

Traces are grouped by their first ``l`` records. The group of traces sharing
an observed prefix is its anonymity set; with uniform priors and the same
number of samples per website, the posterior of website ``w`` given the
prefix is the share of the anonymity set contributed by ``w``. The
conditional entropy H(W | S_l) averages the posterior entropy over observed
prefixes, weighted by how often each prefix occurs.
"""
from __future__ import annotations

import csv
import io
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .defenses import HTTPS_HEADER_OVERHEAD
from .traces import Dataset, Trace

HTTP2_CONTROL_SIZES = (33,)


def _check_balanced(d: Dataset) -> int:
    counts = d.class_counts()
    if not counts:
        raise ValueError("empty dataset")
    k = Counter(counts.values()).most_common(1)[0][0]
    odd = sorted(c for c, n in counts.items() if n != k)
    if odd:
        shown = ", ".join(f"{c} ({counts[c]})" for c in odd[:5])
        raise ValueError(f"classes must have equal sample counts ({k}); offenders: {shown}")
    return k


def build_index(d: Dataset, l: int) -> dict:
    """Anonymity sets of the length-``l`` prefixes of ``d``.

    Returns ``{prefix: Counter(label -> multiplicity)}``. Traces shorter than
    ``l`` contribute their whole record sequence.
    """
    if l < 1:
        raise ValueError("prefix length must be >= 1")
    _check_balanced(d)
    index: dict = defaultdict(Counter)
    for t in d:
        index[t.records[:l]][t.label] += 1
    return dict(index)


def _entropy_bits(counts: Iterable[int]) -> float:
    counts = sorted(c for c in counts if c > 0)
    n = sum(counts)
    return 0.0 - sum(c / n * math.log2(c / n) for c in counts)


def conditional_entropy(d: Dataset, l: int) -> float:
    """H(W | S_l) in bits under uniform priors."""
    index = build_index(d, l)
    total = len(d)
    h = 0.0
    # fixed summation order keeps the value invariant to trace order
    for _, members in sorted(index.items()):
        size = sum(members.values())
        h += size / total * _entropy_bits(members.values())
    return h


def posterior(d: Dataset, observation: Sequence[int]) -> dict:
    """Pr[W = w | S_l = observation] for every website in the anonymity set."""
    obs = tuple(observation)
    members = build_index(d, len(obs)).get(obs)
    if not members:
        return {}
    size = sum(members.values())
    return {w: m / size for w, m in sorted(members.items())}


@dataclass
class EntropyReport:
    world_size: int
    per_l: list = field(default_factory=list)   # {l, entropy_mean_bits, entropy_std_bits, samples}
    horizon_1bit: Optional[int] = None
    horizon_fraction: Optional[float] = None
    mean_trace_length: float = 0.0
    prior: str = "uniform"

    def to_dict(self) -> dict:
        return {"world_size": self.world_size, "per_l": self.per_l,
                "horizon_1bit": self.horizon_1bit, "horizon_fraction": self.horizon_fraction,
                "mean_trace_length": self.mean_trace_length, "prior": self.prior}


def entropy_curve(d: Dataset, world_sizes: Sequence[int], l_max: int, resamples: int = 3,
                  seed: int = 0) -> list[EntropyReport]:
    """Conditional entropy against prefix length for several world sizes.

    For each world size, ``resamples`` sets of websites are drawn uniformly
    without replacement; entropy is averaged over them.
    """
    _check_balanced(d)
    groups = d.by_class()
    classes = list(d.classes)
    if l_max < 1:
        raise ValueError("l_max must be >= 1")
    reports = []
    for wi, size in enumerate(world_sizes):
        if not 1 <= size <= len(classes):
            raise ValueError(f"world size {size} exceeds the {len(classes)} classes available")
        rng = np.random.default_rng([seed, wi])
        curves, lengths = [], []
        for _ in range(resamples):
            chosen = sorted(rng.choice(len(classes), size=size, replace=False).tolist())
            sub = Dataset(tuple(t for i in chosen for t in groups[classes[i]]), d.name)
            curves.append([conditional_entropy(sub, l) for l in range(1, l_max + 1)])
            lengths.extend(len(t) for t in sub)
        curves = np.asarray(curves)
        means, stds = curves.mean(axis=0), curves.std(axis=0)
        rep = EntropyReport(world_size=size, mean_trace_length=float(np.mean(lengths)))
        for l in range(1, l_max + 1):
            rep.per_l.append({"l": l, "entropy_mean_bits": float(means[l - 1]),
                              "entropy_std_bits": float(stds[l - 1]),
                              "samples": curves[:, l - 1].tolist()})
        below = np.flatnonzero(means < 1.0)
        if below.size:
            rep.horizon_1bit = int(below[0]) + 1
            rep.horizon_fraction = rep.horizon_1bit / rep.mean_trace_length
        reports.append(rep)
    return reports


def entropy_csv(reports: Sequence[EntropyReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["world_size", "l", "entropy_mean_bits", "entropy_std_bits"])
    for rep in reports:
        for row in rep.per_l:
            w.writerow([rep.world_size, row["l"], repr(row["entropy_mean_bits"]),
                        repr(row["entropy_std_bits"])])
    return buf.getvalue()


def write_entropy_csv(reports: Sequence[EntropyReport], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(entropy_csv(reports))


def fourth_record_domain_length(t: Trace, header_overhead: int = HTTPS_HEADER_OVERHEAD,
                                control_sizes: Sequence[int] = HTTP2_CONTROL_SIZES,
                                start: int = 4) -> Optional[int]:
    """Estimate the first-party domain length from the first DoH query.

    Looks for the first outgoing record at 1-based position ``start`` or
    later whose size is not an HTTP/2 control-message size, and subtracts the
    HTTPS header overhead. Returns ``None`` when there is no such record or
    the remainder is not positive.
    """
    records = t.records if isinstance(t, Trace) else tuple(t)
    skip = set(control_sizes)
    for r in records[start - 1:]:
        if r > 0 and r not in skip:
            length = r - header_overhead
            return length if length > 0 else None
    return None
