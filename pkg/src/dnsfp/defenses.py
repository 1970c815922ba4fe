"""Padding defenses applied to traces, with bandwidth overhead accounting.

Three transforms are supported:

* ``block``: EDNS(0)-style padding. The DNS payload of a record is taken to be
  its size minus a fixed HTTPS header overhead (51 bytes by default); the
  payload is rounded up to a multiple of the query block (outgoing records) or
  response block (incoming records).
* ``constant``: every record is set to the same size (perfect padding).
* ``cell``: every record is split into fixed-size cells. This only mimics the
  constant-size cells of DNS over Tor; routing and latency are not modeled.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .traces import Dataset, Trace
from .validation import check_records

HTTPS_HEADER_OVERHEAD = 51
MODES = ("block", "constant", "cell")


class PaddingError(ValueError):
    pass


@dataclass(frozen=True)
class PaddingPolicy:
    mode: str = "block"
    query_block: Optional[int] = None
    response_block: Optional[int] = None
    header_overhead: int = HTTPS_HEADER_OVERHEAD
    constant_size: Optional[int] = None
    cell_size: int = 512

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown padding mode {self.mode!r}")
        for name in ("query_block", "response_block", "constant_size"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.header_overhead < 0:
            raise ValueError("header_overhead must be non-negative")
        if self.cell_size < 1:
            raise ValueError("cell_size must be >= 1")
        if self.mode == "constant" and self.constant_size is None:
            raise ValueError("mode 'constant' requires constant_size")

    @classmethod
    def edns0(cls, query_block=128, response_block=468, header_overhead=HTTPS_HEADER_OVERHEAD):
        return cls("block", query_block, response_block, header_overhead)

    @classmethod
    def perfect(cls, constant_size: int):
        return cls("constant", constant_size=constant_size)

    @classmethod
    def tor_cells(cls, cell_size: int = 512):
        return cls("cell", cell_size=cell_size)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "PaddingPolicy":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown policy fields: {sorted(unknown)}")
        return cls(**d)


# edns0-468 is the recommended client/resolver policy; edns0-128 matches
# Cloudflare's observed 128-byte response blocks.
PRESETS = {
    "none": PaddingPolicy("block"),
    "edns0-128": PaddingPolicy.edns0(128, 128),
    "edns0-468": PaddingPolicy.edns0(128, 468),
    "tor": PaddingPolicy.tor_cells(512),
}


def load_policy(path) -> PaddingPolicy:
    with open(path, encoding="utf-8") as fh:
        return PaddingPolicy.from_dict(json.load(fh))


def _pad_block(size: int, block: int) -> int:
    return math.ceil(size / block) * block


def pad_records(records, p: PaddingPolicy) -> tuple[int, ...]:
    records = check_records(records)
    if p.mode == "constant":
        return tuple(p.constant_size if r > 0 else -p.constant_size for r in records)
    if p.mode == "cell":
        out = []
        for r in records:
            cell = p.cell_size if r > 0 else -p.cell_size
            out.extend([cell] * math.ceil(abs(r) / p.cell_size))
        return tuple(out)
    out = []
    for i, r in enumerate(records):
        block = p.query_block if r > 0 else p.response_block
        if block is None:
            out.append(r)
            continue
        payload = abs(r) - p.header_overhead
        if payload <= 0:
            raise PaddingError(
                f"record {i} ({r}) is not larger than the {p.header_overhead}-byte header")
        size = _pad_block(payload, block) + p.header_overhead
        out.append(size if r > 0 else -size)
    return tuple(out)


def apply_padding(t: Trace, p: PaddingPolicy) -> Trace:
    try:
        return t.with_records(pad_records(t.records, p))
    except PaddingError as exc:
        raise PaddingError(f"trace {t.sample_id!r}: {exc}") from None


@dataclass(frozen=True)
class OverheadReport:
    baseline_bytes: int
    defended_bytes: int

    @property
    def ratio(self) -> float:
        if self.baseline_bytes == 0:
            return float("nan")
        return self.defended_bytes / self.baseline_bytes

    def to_dict(self) -> dict:
        return {"baseline_bytes": self.baseline_bytes,
                "defended_bytes": self.defended_bytes, "ratio": self.ratio}


def apply_to_dataset(d: Dataset, p: PaddingPolicy):
    """Pad every trace of ``d``; returns ``(defended dataset, OverheadReport)``."""
    defended = d.map(lambda t: apply_padding(t, p), name=f"{d.name}+{p.mode}")
    report = OverheadReport(sum(t.total_bytes() for t in d),
                            sum(t.total_bytes() for t in defended))
    return defended, report


def derive_constant(d: Dataset) -> int:
    """Largest record size in the dataset, the natural perfect-padding size."""
    if len(d) == 0:
        raise ValueError("empty dataset")
    return max(abs(r) for t in d for r in t.records)


class PaddingTransformer(TransformerMixin, BaseEstimator):
    """Pipeline step applying a padding policy to every trace.

    ``constant_size="auto"`` in constant mode learns the largest record size
    seen during ``fit``.
    """

    def __init__(self, mode="block", query_block=None, response_block=None,
                 header_overhead=HTTPS_HEADER_OVERHEAD, constant_size=None, cell_size=512):
        self.mode = mode
        self.query_block = query_block
        self.response_block = response_block
        self.header_overhead = header_overhead
        self.constant_size = constant_size
        self.cell_size = cell_size

    def fit(self, X, y=None):
        constant = self.constant_size
        if self.mode == "constant" and constant == "auto":
            constant = max(abs(r) for rec in X for r in check_records(rec))
        self.policy_ = PaddingPolicy(self.mode, self.query_block, self.response_block,
                                     self.header_overhead, constant, self.cell_size)
        return self

    def transform(self, X):
        check_is_fitted(self, "policy_")
        out = []
        for x in X:
            if isinstance(x, Trace):
                out.append(apply_padding(x, self.policy_))
            else:
                out.append(pad_records(x, self.policy_))
        return out
