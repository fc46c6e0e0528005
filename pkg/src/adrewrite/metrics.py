"""Visibility metrics: reciprocal rank, delta-MRR@K and delta-DIR@K.

Ranks are full-corpus ranks; the ``K`` cut-off is applied here so one
retrieval pass serves every K of an ablation grid. delta-DIR is in
percentage points and is ``None`` (absent) when an ad has no query ranked
within K in both versions.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import EmptyQuerySet, MissingInclusion, MissingLedgerEntry

BEFORE = "before"
AFTER = "after"
VERSIONS = (BEFORE, AFTER)
DEFAULT_K_GRID = (1, 3, 5, 10, 20, 30)


class RankLedger:
    """Ranks keyed by ``(ad_id, query_id, version)``."""

    def __init__(self, entries: Mapping[tuple[str, str, str], int] | None = None):
        self._ranks: dict[tuple[str, str, str], int] = {}
        for key, rank in (entries or {}).items():
            self.record(*key, rank)

    def record(self, ad_id: str, query_id: str, version: str, rank: int) -> None:
        if version not in VERSIONS:
            raise ValueError(f"unknown version {version!r}")
        if int(rank) < 1:
            raise ValueError(f"rank must be >= 1, got {rank}")
        self._ranks[(ad_id, query_id, version)] = int(rank)

    def rank(self, ad_id: str, query_id: str, version: str) -> int:
        try:
            return self._ranks[(ad_id, query_id, version)]
        except KeyError:
            raise MissingLedgerEntry(f"no {version} rank for ad {ad_id!r}, query {query_id!r}") from None

    def swapped(self) -> "RankLedger":
        out = RankLedger()
        for (a, q, v), r in self._ranks.items():
            out.record(a, q, AFTER if v == BEFORE else BEFORE, r)
        return out

    def items(self):
        return self._ranks.items()

    def __len__(self) -> int:
        return len(self._ranks)


@dataclass(frozen=True)
class InclusionRecord:
    ad_id: str
    query_id: str
    version: str
    included: int

    def __post_init__(self):
        if self.included not in (0, 1):
            raise ValueError("included must be 0 or 1")
        if self.version not in VERSIONS:
            raise ValueError(f"unknown version {self.version!r}")


@dataclass(frozen=True)
class MetricReport:
    ad_id: str
    k: int
    delta_mrr: float
    delta_dir_pp: float | None
    eligible_query_count: int


def rr_at_k(rank: int, k: int) -> float:
    if rank < 1 or k < 1:
        raise ValueError("rank and k must be >= 1")
    return 1.0 / rank if rank <= k else 0.0


def delta_mrr_at_k(ledger: RankLedger, ad_id: str, query_ids: Sequence[str], k: int) -> float:
    """Mean over ``query_ids`` of RR@K(after) - RR@K(before)."""
    if not query_ids:
        raise EmptyQuerySet(f"ad {ad_id!r} has no relevant queries")
    diffs = [
        rr_at_k(ledger.rank(ad_id, q, AFTER), k) - rr_at_k(ledger.rank(ad_id, q, BEFORE), k)
        for q in query_ids
    ]
    return math.fsum(diffs) / len(diffs)


def eligible_queries(ledger: RankLedger, ad_id: str, query_ids: Iterable[str], k: int) -> set[str]:
    """Queries where the ad ranks within ``k`` both before and after."""
    return {
        q for q in query_ids
        if ledger.rank(ad_id, q, BEFORE) <= k and ledger.rank(ad_id, q, AFTER) <= k
    }


def _inclusion_lookup(inclusions: Iterable[InclusionRecord]) -> dict[tuple[str, str, str], int]:
    if isinstance(inclusions, Mapping):
        return dict(inclusions)
    return {(r.ad_id, r.query_id, r.version): r.included for r in inclusions}


def delta_dir_at_k(inclusions: Iterable[InclusionRecord], eligible: Iterable[str], ad_id: str) -> float | None:
    """Percentage-point change in inclusion rate over ``eligible``; None if empty."""
    eligible = sorted(eligible)
    if not eligible:
        return None
    flags = _inclusion_lookup(inclusions)
    diff = 0
    for q in eligible:
        try:
            diff += flags[(ad_id, q, AFTER)] - flags[(ad_id, q, BEFORE)]
        except KeyError as exc:
            raise MissingInclusion(f"no inclusion flag for {exc.args[0]}") from None
    return 100.0 * diff / len(eligible)


def ad_reports(
    ledger: RankLedger,
    inclusions: Iterable[InclusionRecord],
    ad_id: str,
    query_ids: Sequence[str],
    k_grid: Sequence[int] = DEFAULT_K_GRID,
) -> list[MetricReport]:
    flags = _inclusion_lookup(inclusions)
    out = []
    for k in k_grid:
        elig = eligible_queries(ledger, ad_id, query_ids, k)
        out.append(MetricReport(
            ad_id=ad_id,
            k=k,
            delta_mrr=delta_mrr_at_k(ledger, ad_id, query_ids, k),
            delta_dir_pp=delta_dir_at_k(flags, elig, ad_id),
            eligible_query_count=len(elig),
        ))
    return out


@dataclass(frozen=True)
class AggregateReport:
    k: int
    ad_count: int
    mean_delta_mrr: float | None
    mean_delta_dir_pp: float | None
    absent_dir_count: int
    extra: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "ad_count": self.ad_count,
            "mean_delta_mrr": self.mean_delta_mrr,
            "mean_delta_dir_pp": self.mean_delta_dir_pp,
            "absent_dir_count": self.absent_dir_count,
            **self.extra,
        }


def aggregate(per_ad: Sequence[MetricReport]) -> AggregateReport:
    """Unweighted per-ad means for a single ``k``; absent delta-DIR values are skipped."""
    ks = {r.k for r in per_ad}
    if len(ks) > 1:
        raise ValueError(f"reports mix several k values: {sorted(ks)}")
    k = ks.pop() if ks else 0
    mrr = [r.delta_mrr for r in per_ad]
    dirs = [r.delta_dir_pp for r in per_ad if r.delta_dir_pp is not None]
    return AggregateReport(
        k=k,
        ad_count=len(per_ad),
        mean_delta_mrr=math.fsum(mrr) / len(mrr) if mrr else None,
        mean_delta_dir_pp=math.fsum(dirs) / len(dirs) if dirs else None,
        absent_dir_count=len(per_ad) - len(dirs),
    )


def aggregate_by_k(reports: Iterable[MetricReport]) -> list[AggregateReport]:
    groups: dict[int, list[MetricReport]] = {}
    for r in reports:
        groups.setdefault(r.k, []).append(r)
    return [aggregate(groups[k]) for k in sorted(groups)]


# ---------------------------------------------------------------------------
# serialization

CSV_COLUMNS = ("ad_id", "k", "delta_mrr", "delta_dir_pp", "eligible_count")


def _num(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def reports_to_csv(reports: Iterable[MetricReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        w.writerow([r.ad_id, r.k, _num(r.delta_mrr), _num(r.delta_dir_pp), r.eligible_query_count])
    return buf.getvalue()


def reports_from_csv(text: str) -> list[MetricReport]:
    rows = csv.DictReader(io.StringIO(text))
    return [
        MetricReport(
            ad_id=row["ad_id"],
            k=int(row["k"]),
            delta_mrr=float(row["delta_mrr"]),
            delta_dir_pp=float(row["delta_dir_pp"]) if row["delta_dir_pp"] else None,
            eligible_query_count=int(row["eligible_count"]),
        )
        for row in rows
    ]


def summary_json(aggregates: Sequence[AggregateReport], **meta) -> str:
    doc = {**meta, "per_k": [a.to_dict() for a in aggregates]}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
