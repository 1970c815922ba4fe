"""Collateral damage of blocking DoH lookups by domain-name length.

A censor that only sees the size of the first DoH query can infer the
length of the queried domain and nothing more, so blocking one blacklisted
domain blocks every domain of the same length. For each length present in
the blacklist we count the popular (ranked) domains that would be hit
without being blacklisted (collateral) and the blacklisted domains caught
(gain).
"""
from __future__ import annotations

import csv
import json
import statistics
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional


def domain_length(domain: str) -> int:
    """Number of characters in the domain, dots included."""
    if not domain:
        raise ValueError("empty domain")
    return len(domain)


def _norm(domain: str) -> str:
    return domain.strip().lower()


@dataclass(frozen=True)
class RankingList:
    entries: tuple  # of (rank, domain)

    def __post_init__(self):
        entries = tuple((int(r), _norm(d)) for r, d in self.entries)
        if not entries:
            raise ValueError("ranking is empty")
        ranks = [r for r, _ in entries]
        if min(ranks) < 1 or len(set(ranks)) != len(ranks):
            raise ValueError("ranks must be unique positive integers")
        domains = [d for _, d in entries]
        if len(set(domains)) != len(domains):
            dup = next(d for d, n in Counter(domains).items() if n > 1)
            raise ValueError(f"duplicate domain {dup!r} in ranking")
        object.__setattr__(self, "entries", tuple(sorted(entries)))

    @classmethod
    def from_domains(cls, domains: Iterable[str]) -> "RankingList":
        return cls(tuple(enumerate(domains, 1)))

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class Blacklist:
    domains: frozenset
    name: str = "blacklist"

    def __post_init__(self):
        domains = frozenset(_norm(d) for d in self.domains if _norm(d))
        if not domains:
            raise ValueError("blacklist is empty")
        object.__setattr__(self, "domains", domains)


def load_ranking(path) -> RankingList:
    """Read an Alexa-style ``rank,domain`` CSV (header optional)."""
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or not row[0].strip():
                continue
            if lineno == 1 and not row[0].strip().isdigit():
                continue
            if len(row) < 2:
                raise ValueError(f"line {lineno}: expected 'rank,domain'")
            try:
                entries.append((int(row[0]), row[1]))
            except ValueError:
                raise ValueError(f"line {lineno}: invalid rank {row[0]!r}") from None
    return RankingList(tuple(entries))


def load_blacklist(path, name: Optional[str] = None) -> Blacklist:
    """One domain per line; ``#`` starts a comment."""
    domains = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                domains.append(line)
    return Blacklist(frozenset(domains), name or str(path))


def length_histogram(r: RankingList) -> dict[int, int]:
    return dict(sorted(Counter(domain_length(d) for _, d in r.entries).items()))


@dataclass
class BlockingReport:
    per_length: dict = field(default_factory=dict)
    strategies: dict = field(default_factory=dict)
    coverage: float = 0.0
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"per_length": {str(k): v for k, v in self.per_length.items()},
                "strategies": self.strategies, "coverage": self.coverage,
                "flags": self.flags}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_csv(self, path) -> None:
        cols = ["length", "collateral", "gain", "gain_in_ranking",
                "rank_min", "rank_median", "rank_max"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for length, row in self.per_length.items():
                stats = row["rank_stats"] or {"min": "", "median": "", "max": ""}
                w.writerow([length, row["collateral"], row["gain"], row["gain_in_ranking"],
                            stats["min"], stats["median"], stats["max"]])


def analyze(r: RankingList, b: Blacklist) -> BlockingReport:
    """Collateral damage and censor gain for every blacklisted domain length.

    Strategies: ``min_collateral`` (ties to the shorter length),
    ``max_gain`` (ties to less collateral, then shorter length) and
    ``most_popular`` (length of the best-ranked blacklisted domain).
    """
    lengths = sorted({domain_length(d) for d in b.domains})
    gain = Counter(domain_length(d) for d in b.domains)
    collateral_ranks: dict[int, list[int]] = {n: [] for n in lengths}
    in_ranking: Counter = Counter()
    best_blocked = None
    for rank, dom in r.entries:
        n = domain_length(dom)
        if dom in b.domains:
            in_ranking[n] += 1
            if best_blocked is None or rank < best_blocked[0]:
                best_blocked = (rank, dom)
        elif n in collateral_ranks:
            collateral_ranks[n].append(rank)

    report = BlockingReport()
    for n in lengths:
        ranks = sorted(collateral_ranks[n])
        stats = ({"min": ranks[0], "median": statistics.median(ranks), "max": ranks[-1]}
                 if ranks else None)
        report.per_length[n] = {"collateral": len(ranks), "gain": gain[n],
                                "gain_in_ranking": in_ranking[n], "rank_stats": stats}

    coll = {n: report.per_length[n]["collateral"] for n in lengths}
    report.strategies["min_collateral"] = min(lengths, key=lambda n: (coll[n], n))
    report.strategies["max_gain"] = min(lengths, key=lambda n: (-gain[n], coll[n], n))
    if best_blocked is None:
        report.strategies["most_popular"] = None
        report.flags.append("no blacklisted domain appears in the ranking")
    else:
        report.strategies["most_popular"] = domain_length(best_blocked[1])
        report.strategies["most_popular_domain"] = best_blocked[1]
    report.coverage = sum(in_ranking.values()) / len(b.domains)
    return report


def blocking_decision(estimated_length: Optional[int], b: Blacklist) -> str:
    """``"block"`` iff some blacklisted domain has the estimated length."""
    if estimated_length is None:
        return "allow"
    lengths = {domain_length(d) for d in b.domains}
    return "block" if estimated_length in lengths else "allow"
