"""Encrypted-DNS traces, datasets, file I/O and a synthetic trace generator.

A trace is the ordered sequence of TLS record sizes seen on one DoH/DoT
connection during a page load. Sizes are signed: positive for records sent by
the client to the resolver, negative for records coming back.
"""
from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

MAX_RECORD_SIZE = 65536


class DatasetError(ValueError):
    """Raised for malformed traces or trace files."""


def _check_records(records: Sequence[int]) -> tuple[int, ...]:
    out = []
    for i, r in enumerate(records):
        if isinstance(r, bool) or not isinstance(r, (int, np.integer)):
            raise DatasetError(f"non-integer record size at index {i}: {r!r}")
        r = int(r)
        if r == 0:
            raise DatasetError(f"zero record size at index {i}")
        if abs(r) > MAX_RECORD_SIZE:
            raise DatasetError(
                f"record size {r} at index {i} exceeds {MAX_RECORD_SIZE}")
        out.append(r)
    if not out:
        raise DatasetError("trace has no records")
    return tuple(out)


@dataclass(frozen=True)
class Trace:
    records: tuple[int, ...]
    label: str
    sample_id: str
    collected_at: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "records", _check_records(self.records))

    def __len__(self):
        return len(self.records)

    def total_bytes(self) -> int:
        return sum(abs(r) for r in self.records)

    def with_records(self, records: Sequence[int]) -> "Trace":
        return Trace(tuple(records), self.label, self.sample_id, self.collected_at)


def prefix(t: Trace, l: int) -> Trace:
    """Return the trace truncated to its first ``l`` records (saturating)."""
    if l < 1:
        raise ValueError("prefix length must be >= 1")
    if l >= len(t.records):
        return t
    return t.with_records(t.records[:l])


@dataclass(frozen=True)
class Dataset:
    """An immutable collection of traces.

    ``classes`` is the lexicographically sorted set of labels, so class
    indices are stable across runs and across files with the same labels.
    """

    traces: tuple[Trace, ...]
    name: str = "dataset"
    classes: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        traces = tuple(self.traces)
        seen = set()
        for t in traces:
            if t.sample_id in seen:
                raise DatasetError(f"duplicate sample_id {t.sample_id!r}")
            seen.add(t.sample_id)
        object.__setattr__(self, "traces", traces)
        object.__setattr__(self, "classes", tuple(sorted({t.label for t in traces})))

    def __len__(self):
        return len(self.traces)

    def __iter__(self) -> Iterator[Trace]:
        return iter(self.traces)

    @property
    def labels(self) -> list[str]:
        return [t.label for t in self.traces]

    def by_class(self) -> dict[str, list[Trace]]:
        groups: dict[str, list[Trace]] = {c: [] for c in self.classes}
        for t in self.traces:
            groups[t.label].append(t)
        return groups

    def class_counts(self) -> dict[str, int]:
        return {c: len(ts) for c, ts in self.by_class().items()}

    def select_classes(self, classes: Iterable[str], name: Optional[str] = None) -> "Dataset":
        keep = set(classes)
        return Dataset(tuple(t for t in self.traces if t.label in keep),
                       name or self.name)

    def take_per_class(self, n: int, name: Optional[str] = None) -> "Dataset":
        """Keep the first ``n`` traces (in file order) of every class."""
        kept = []
        for ts in self.by_class().values():
            kept.extend(ts[:n])
        order = {t.sample_id: i for i, t in enumerate(self.traces)}
        kept.sort(key=lambda t: order[t.sample_id])
        return Dataset(tuple(kept), name or self.name)

    def map(self, fn, name: Optional[str] = None) -> "Dataset":
        return Dataset(tuple(fn(t) for t in self.traces), name or self.name)


# --------------------------------------------------------------------------
# File formats

def _infer_format(path, fmt):
    if fmt is not None:
        if fmt not in ("jsonl", "csv"):
            raise ValueError(f"unknown trace format {fmt!r}")
        return fmt
    ext = os.path.splitext(str(path))[1].lower()
    return "csv" if ext == ".csv" else "jsonl"


def _parse_jsonl(fh) -> list[Trace]:
    traces = []
    for lineno, line in enumerate(fh, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise DatasetError(f"line {lineno}: expected a JSON object")
        try:
            label, sample_id, records = obj["label"], obj["sample_id"], obj["records"]
        except KeyError as exc:
            raise DatasetError(f"line {lineno}: missing field {exc.args[0]!r}") from None
        if not isinstance(records, list):
            raise DatasetError(f"line {lineno}: 'records' must be a list")
        collected_at = obj.get("collected_at")
        if collected_at is not None and not isinstance(collected_at, (int, float)):
            raise DatasetError(f"line {lineno}: 'collected_at' must be a number")
        try:
            traces.append(Trace(tuple(records), str(label), str(sample_id), collected_at))
        except DatasetError as exc:
            raise DatasetError(f"line {lineno}: {exc}") from None
    return traces


def _parse_csv(fh) -> list[Trace]:
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None:
        return []
    header = [h.strip() for h in header]
    if header[:3] != ["label", "sample_id", "records"]:
        raise DatasetError("line 1: expected header 'label,sample_id,records'")
    has_time = len(header) > 3 and header[3] == "collected_at"
    traces = []
    for lineno, row in enumerate(reader, 2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < 3:
            raise DatasetError(f"line {lineno}: expected at least 3 columns")
        try:
            records = tuple(int(tok) for tok in row[2].split())
        except ValueError:
            raise DatasetError(f"line {lineno}: records must be space-separated integers") from None
        collected_at = None
        if has_time and len(row) > 3 and row[3].strip():
            try:
                collected_at = float(row[3])
            except ValueError:
                raise DatasetError(f"line {lineno}: invalid collected_at") from None
        try:
            traces.append(Trace(records, row[0], row[1], collected_at))
        except DatasetError as exc:
            raise DatasetError(f"line {lineno}: {exc}") from None
    return traces


def load_dataset(path, format: Optional[str] = None, name: Optional[str] = None) -> Dataset:
    """Read a trace file in ``jsonl`` or ``csv`` format.

    The format is inferred from the file extension when not given.
    """
    fmt = _infer_format(path, format)
    with open(path, encoding="utf-8", newline="") as fh:
        traces = _parse_jsonl(fh) if fmt == "jsonl" else _parse_csv(fh)
    if not traces:
        raise DatasetError("empty dataset")
    name = name or os.path.splitext(os.path.basename(str(path)))[0]
    return Dataset(tuple(traces), name)


def dumps_dataset(d: Dataset, format: str = "jsonl") -> str:
    if len(d) == 0:
        raise DatasetError("refusing to write empty dataset")
    buf = io.StringIO()
    if format == "jsonl":
        for t in d:
            obj = {"label": t.label, "sample_id": t.sample_id, "records": list(t.records)}
            if t.collected_at is not None:
                obj["collected_at"] = t.collected_at
            buf.write(json.dumps(obj, separators=(",", ":")) + "\n")
    elif format == "csv":
        with_time = any(t.collected_at is not None for t in d)
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["label", "sample_id", "records"] + (["collected_at"] if with_time else []))
        for t in d:
            row = [t.label, t.sample_id, " ".join(str(r) for r in t.records)]
            if with_time:
                row.append("" if t.collected_at is None else repr(t.collected_at))
            writer.writerow(row)
    else:
        raise ValueError(f"unknown trace format {format!r}")
    return buf.getvalue()


def save_dataset(d: Dataset, path, format: Optional[str] = None) -> None:
    text = dumps_dataset(d, _infer_format(path, format))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


# --------------------------------------------------------------------------
# Synthetic traces

DEFAULT_ALPHABET = tuple(range(60, 300))


@dataclass(frozen=True)
class SynthProfile:
    """Parameters of the synthetic trace generator.

    Every class gets a fixed resource signature: an ordered list of
    (query size, response size) pairs drawn from ``size_alphabet``. A sample
    replays the signature as alternating outgoing/incoming records, with each
    record jittered by 1..8 bytes with probability ``noise_rate``.
    """

    n_classes: int = 50
    samples_per_class: int = 20
    resources_per_class_range: tuple[int, int] = (2, 8)
    size_alphabet: tuple[int, ...] = DEFAULT_ALPHABET
    noise_rate: float = 0.1
    seed: int = 0
    label_prefix: str = "site"

    def __post_init__(self):
        object.__setattr__(self, "resources_per_class_range",
                           tuple(self.resources_per_class_range))
        object.__setattr__(self, "size_alphabet", tuple(int(s) for s in self.size_alphabet))
        if self.n_classes < 1 or self.samples_per_class < 1:
            raise ValueError("n_classes and samples_per_class must be positive")
        lo, hi = self.resources_per_class_range
        if not 1 <= lo <= hi:
            raise ValueError("resources_per_class_range must satisfy 1 <= min <= max")
        if not self.size_alphabet or min(self.size_alphabet) < 1:
            raise ValueError("size_alphabet must be a non-empty list of positive sizes")
        if max(self.size_alphabet) > MAX_RECORD_SIZE:
            raise ValueError(f"size_alphabet entries must not exceed {MAX_RECORD_SIZE}")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ValueError("noise_rate must lie in [0, 1]")


def _signatures(p: SynthProfile, rng: np.random.Generator) -> list[tuple[int, ...]]:
    alphabet = np.asarray(p.size_alphabet)
    lo, hi = p.resources_per_class_range
    # first-party queries get distinct sizes while the alphabet allows it
    firsts = rng.permutation(alphabet) if p.n_classes <= len(alphabet) else None
    seen: set[tuple[int, ...]] = set()
    out = []
    for c in range(p.n_classes):
        for _ in range(1000):
            k = int(rng.integers(lo, hi, endpoint=True))
            sizes = rng.choice(alphabet, size=2 * k)
            if firsts is not None:
                sizes[0] = firsts[c]
            sig = tuple(int(s) if i % 2 == 0 else -int(s) for i, s in enumerate(sizes))
            if sig not in seen:
                break
        else:
            raise ValueError("cannot draw distinct class signatures; enlarge the alphabet")
        seen.add(sig)
        out.append(sig)
    return out


def generate_synthetic(p: SynthProfile) -> Dataset:
    """Generate a deterministic synthetic dataset from ``p``.

    Class signatures and per-record noise come from independent streams of the
    seed, so re-generating with another ``noise_rate`` keeps the signatures and
    jitters a superset (or subset) of the same records by the same amounts.
    """
    sig_seq, noise_seq = np.random.SeedSequence(p.seed).spawn(2)
    signatures = _signatures(p, np.random.default_rng(sig_seq))
    noise_rng = np.random.default_rng(noise_seq)
    width = len(str(p.n_classes - 1))
    traces = []
    for c, sig in enumerate(signatures):
        label = f"{p.label_prefix}{c:0{width}d}.example"
        base = np.asarray(sig)
        mags = np.abs(base)
        for j in range(p.samples_per_class):
            u = noise_rng.random(len(base))
            step = noise_rng.integers(1, 9, size=len(base))
            sign = noise_rng.choice((-1, 1), size=len(base))
            delta = np.where(u < p.noise_rate, sign * step, 0)
            # jitter never crosses zero; downward steps that would are flipped
            new = np.where(mags + delta >= 1, mags + delta, mags + np.abs(delta))
            new = np.minimum(new, MAX_RECORD_SIZE)
            records = tuple(int(v) for v in np.sign(base) * new)
            traces.append(Trace(records, label, f"{label}#{j}"))
    return Dataset(tuple(traces), f"synthetic-{p.seed}")
