"""Ad / query corpora, JSONL I/O and the domain-subdomain relevance join."""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .errors import DataError, DuplicateId, MissingField, ParseError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdDocument:
    id: str
    title: str
    description: str
    domain: str
    subdomain: str

    def with_text(self, title: str, description: str) -> "AdDocument":
        return replace(self, title=title, description=description)


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    domain: str
    subdomain: str


@dataclass(frozen=True)
class RewritePair:
    ad_id: str
    before: AdDocument
    after: AdDocument
    strategy: str

    def __post_init__(self):
        if not (self.before.id == self.after.id == self.ad_id):
            raise DataError(f"rewrite pair ids disagree for {self.ad_id!r}")
        if _label(self.before) != _label(self.after):
            raise DataError(f"rewrite of {self.ad_id!r} changed its domain labels")

    @property
    def is_identity(self) -> bool:
        return self.before == self.after


RelevanceMap = dict[str, list[str]]


def ad_text(d: AdDocument) -> str:
    """Canonical text handed to the embedder."""
    return f"Title: {d.title}\nDescription: {d.description}"


def label_key(domain: str, subdomain: str) -> tuple[str, str]:
    return domain.strip().casefold(), subdomain.strip().casefold()


def _label(x) -> tuple[str, str]:
    return label_key(x.domain, x.subdomain)


# ---------------------------------------------------------------------------
# JSONL reading


def _iter_records(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from None
            if not isinstance(rec, dict):
                raise ParseError("expected a JSON object", line=lineno)
            yield lineno, rec


def _field(rec: Mapping, name: str, lineno: int | None, nonempty: bool = False) -> str:
    value = rec.get(name)
    if isinstance(value, (int, float)) and not isinstance(value, bool) and name == "id":
        value = str(value)
    if not isinstance(value, str):
        raise MissingField(name, lineno)
    if nonempty and not value.strip():
        raise MissingField(name, lineno)
    return value


def ad_from_record(rec: Mapping, lineno: int | None = None) -> AdDocument:
    return AdDocument(
        id=_field(rec, "id", lineno, nonempty=True),
        title=_field(rec, "title", lineno, nonempty=True),
        description=_field(rec, "description", lineno, nonempty=True),
        domain=_field(rec, "domain", lineno),
        subdomain=_field(rec, "subdomain", lineno),
    )


def load_ads(path: str | Path) -> dict[str, AdDocument]:
    """Read ``ads.jsonl``. Iteration order of the result is file order."""
    ads: dict[str, AdDocument] = {}
    for lineno, rec in _iter_records(path):
        ad = ad_from_record(rec, lineno)
        if ad.id in ads:
            raise DuplicateId(ad.id, lineno)
        ads[ad.id] = ad
    if not ads:
        logger.warning("%s contains no ads", path)
    return ads


def load_queries(path: str | Path) -> dict[str, Query]:
    queries: dict[str, Query] = {}
    for lineno, rec in _iter_records(path):
        q = Query(
            id=_field(rec, "id", lineno, nonempty=True),
            text=_field(rec, "text", lineno, nonempty=True),
            domain=_field(rec, "domain", lineno),
            subdomain=_field(rec, "subdomain", lineno),
        )
        if q.id in queries:
            raise DuplicateId(q.id, lineno)
        queries[q.id] = q
    if not queries:
        logger.warning("%s contains no queries", path)
    return queries


def load_rewrites(path: str | Path) -> dict[str, RewritePair]:
    pairs: dict[str, RewritePair] = {}
    for lineno, rec in _iter_records(path):
        for key in ("before", "after"):
            if not isinstance(rec.get(key), dict):
                raise MissingField(key, lineno)
        try:
            pair = RewritePair(
                ad_id=_field(rec, "ad_id", lineno, nonempty=True),
                before=ad_from_record(rec["before"], lineno),
                after=ad_from_record(rec["after"], lineno),
                strategy=_field(rec, "strategy", lineno),
            )
        except DataError as exc:
            if isinstance(exc, (MissingField, ParseError)):
                raise
            raise ParseError(str(exc), line=lineno) from None
        if pair.ad_id in pairs:
            raise DuplicateId(pair.ad_id, lineno)
        pairs[pair.ad_id] = pair
    return pairs


# ---------------------------------------------------------------------------
# JSONL writing


def _dump(records: Iterable[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def rewrite_record(pair: RewritePair) -> dict:
    return {
        "ad_id": pair.ad_id,
        "strategy": pair.strategy,
        "before": asdict(pair.before),
        "after": asdict(pair.after),
    }


def write_ads(ads: Iterable[AdDocument], path: str | Path) -> None:
    _dump((asdict(a) for a in ads), path)


def write_queries(queries: Iterable[Query], path: str | Path) -> None:
    _dump((asdict(q) for q in queries), path)


def write_rewrites(pairs: Iterable[RewritePair], path: str | Path) -> None:
    _dump((rewrite_record(p) for p in pairs), path)


# ---------------------------------------------------------------------------


def build_relevance(
    ads: Iterable[AdDocument] | Mapping[str, AdDocument],
    queries: Iterable[Query] | Mapping[str, Query],
) -> RelevanceMap:
    """Map each ad id to the sorted ids of queries with the same labels.

    Accepts either sequences of records or the id-keyed dicts returned by
    the loaders.
    """
    if isinstance(ads, Mapping):
        ads = ads.values()
    if isinstance(queries, Mapping):
        queries = queries.values()
    by_label: dict[tuple[str, str], list[str]] = defaultdict(list)
    for q in queries:
        by_label[_label(q)].append(q.id)
    for ids in by_label.values():
        ids.sort()
    return {d.id: list(by_label.get(_label(d), ())) for d in ads}
