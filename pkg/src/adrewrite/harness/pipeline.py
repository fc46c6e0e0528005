"""Pipeline stages behind the CLI: ingest, index, rewrite, evaluate, ablate, report.

Each ``cmd_*`` takes an :class:`ExperimentConfig`, writes its artifacts and
returns an in-memory result. Backends may be injected (tests, notebooks);
otherwise they are built from the config descriptors.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from ..corpus import (
    AdDocument,
    Query,
    RewritePair,
    ad_text,
    build_relevance,
    load_ads,
    load_queries,
    load_rewrites,
    rewrite_record,
    write_queries,
    write_rewrites,
)
from ..embedding import CachingEmbedder, Embedder, embed_batch, make_embedder
from ..errors import BackendError, DataError, DuplicateId, InsufficientCandidates, NoRelevantQueries, ParseError
from ..llm_gateway import LlmBackend, answer_with_ads, generate_queries, make_llm, rewrite
from ..loss_reward import ABLATION_WEIGHTINGS, LossWeights, RewardResult, score_rewrite
from ..metrics import AFTER, BEFORE, MetricReport, RankLedger, ad_reports, aggregate_by_k, reports_to_csv, summary_json
from ..vector_index import FlatIndex, build
from .config import ExperimentConfig
from .manifest import build_manifest, write_manifest

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# shared helpers


def load_corpus(paths: Iterable[str | Path]) -> dict[str, AdDocument]:
    """Concatenate ads files; ids must be unique across all of them."""
    ads: dict[str, AdDocument] = {}
    for path in paths:
        for ad_id, ad in load_ads(path).items():
            if ad_id in ads:
                raise DuplicateId(ad_id)
            ads[ad_id] = ad
    return ads


def build_corpus_index(ads: Mapping[str, AdDocument], embedder: Embedder) -> FlatIndex:
    vectors = embed_batch([ad_text(a) for a in ads.values()], embedder)
    return build(zip(ads.keys(), vectors), dim=embedder.dim)


def _embedder(cfg: ExperimentConfig, embedder: Embedder | None) -> Embedder:
    return CachingEmbedder(embedder or make_embedder(cfg.embedder))


def _index_for(cfg: ExperimentConfig, ads: Mapping[str, AdDocument], embedder: Embedder) -> FlatIndex:
    snap = cfg.snapshot_path
    if snap.exists():
        index = FlatIndex.load(snap)
        if set(index.ids) == set(ads) and index.dim == embedder.dim:
            return index
        logger.warning("snapshot %s does not match the corpus; rebuilding in memory", snap)
    return build_corpus_index(ads, embedder)


def _test_ads(cfg: ExperimentConfig, ads: Mapping[str, AdDocument]) -> dict[str, AdDocument]:
    if cfg.test_ads:
        return load_ads(cfg.test_ads)
    return dict(ads)


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8", newline="\n")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# ingest


def cmd_ingest(cfg: ExperimentConfig, generate: int = 0, llm: LlmBackend | None = None) -> dict:
    """Validate corpora and report the relevance join.

    With ``generate > 0``, label pairs that have no queries get ``generate``
    LLM-written queries, stored in ``reports_out/generated_queries.jsonl``.
    """
    ads = load_corpus(cfg.corpus_paths)
    queries = load_queries(cfg.queries) if cfg.queries and Path(cfg.queries).exists() else {}
    generated: list[Query] = []
    if generate > 0:
        llm = llm or make_llm(cfg.rewrite_llm)
        covered = {(q.domain.strip().casefold(), q.subdomain.strip().casefold()) for q in queries.values()}
        pairs = {}
        for ad in ads.values():
            key = (ad.domain.strip().casefold(), ad.subdomain.strip().casefold())
            if key not in covered:
                pairs.setdefault(key, (ad.domain, ad.subdomain))
        for n, (domain, subdomain) in enumerate(pairs.values()):
            for i, text in enumerate(generate_queries(domain, subdomain, generate, llm)):
                generated.append(Query(f"gen{n:04d}_{i:02d}", text, domain, subdomain))
        out = Path(cfg.reports_out) / "generated_queries.jsonl"
        out.parent.mkdir(parents=True, exist_ok=True)
        write_queries(generated, out)
        queries.update({q.id: q for q in generated})
    relevance = build_relevance(ads, queries)
    label_pairs = {(a.domain.strip().casefold(), a.subdomain.strip().casefold()) for a in ads.values()}
    summary = {
        "ads": len(ads),
        "queries": len(queries),
        "generated_queries": len(generated),
        "label_pairs": len(label_pairs),
        "ads_without_queries": sum(1 for v in relevance.values() if not v),
    }
    _write_text(Path(cfg.reports_out) / "ingest_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


# ---------------------------------------------------------------------------
# index


def cmd_index(cfg: ExperimentConfig, embedder: Embedder | None = None) -> FlatIndex:
    ads = load_corpus(cfg.corpus_paths)
    index = build_corpus_index(ads, embedder or make_embedder(cfg.embedder))
    snap = cfg.snapshot_path
    snap.parent.mkdir(parents=True, exist_ok=True)
    index.save(snap)
    write_manifest(build_manifest(cfg, "index", cfg.corpus_paths), snap.with_suffix(".manifest.json"))
    logger.info("indexed %d ads (dim %d) into %s", len(index), index.dim, snap)
    return index


# ---------------------------------------------------------------------------
# rewrite


@dataclass
class RewriteRun:
    pairs: dict[str, RewritePair]
    failures: list[dict] = field(default_factory=list)
    reused: int = 0


def _read_partial_rewrites(path: Path) -> dict[str, RewritePair]:
    """Load an output file that may end in a truncated line (interrupted run)."""
    if not path.exists():
        return {}
    lines = path.read_text(encoding="utf-8").splitlines(keepends=True)
    if lines and not lines[-1].endswith("\n"):
        lines = lines[:-1]
    tmp = path.with_name(path.name + ".resume")
    tmp.write_text("".join(lines), encoding="utf-8")
    try:
        return load_rewrites(tmp)
    finally:
        tmp.unlink()


def cmd_rewrite(cfg: ExperimentConfig, resume: bool = False, llm: LlmBackend | None = None) -> RewriteRun:
    """Rewrite every test ad; with ``resume`` only ads missing from the output are redone."""
    ads = _test_ads(cfg, load_corpus(cfg.ads) if cfg.ads else {})
    llm = llm or make_llm(cfg.rewrite_llm)
    out = Path(cfg.rewrites_out)
    out.parent.mkdir(parents=True, exist_ok=True)
    done = _read_partial_rewrites(out) if resume else {}
    done = {k: v for k, v in done.items() if k in ads and v.strategy == cfg.strategy}
    todo = [ad for ad_id, ad in ads.items() if ad_id not in done]

    def work(ad: AdDocument):
        try:
            return rewrite(ad, cfg.strategy, llm), None
        except ParseError as exc:
            return None, {"ad_id": ad.id, "error": str(exc), "raw": exc.raw}
        except BackendError as exc:
            return None, {"ad_id": ad.id, "error": str(exc), "raw": None}

    failures: list[dict] = []
    new: dict[str, RewritePair] = {}
    # progress is appended as it arrives so an interrupted run can resume
    mode = "a" if resume and out.exists() else "w"
    with open(out, mode, encoding="utf-8", newline="\n") as fh, ThreadPoolExecutor(cfg.workers) as pool:
        if mode == "a" and out.stat().st_size and not out.read_text(encoding="utf-8").endswith("\n"):
            fh.write("\n")
        for pair, failure in pool.map(work, todo):
            if pair is not None:
                new[pair.ad_id] = pair
                fh.write(json.dumps(rewrite_record(pair), ensure_ascii=False) + "\n")
                fh.flush()
            else:
                failures.append(failure)
    merged = {ad_id: done.get(ad_id) or new[ad_id] for ad_id in ads if ad_id in done or ad_id in new}
    tmp = out.with_name(out.name + ".tmp")
    write_rewrites(merged.values(), tmp)
    os.replace(tmp, out)
    fail_path = out.with_name(out.stem + ".failures.jsonl")
    if failures:
        _write_text(fail_path, "".join(json.dumps(f, ensure_ascii=False) + "\n" for f in failures))
    elif fail_path.exists():
        fail_path.unlink()
    if failures:
        logger.warning("%d of %d rewrites failed; see %s", len(failures), len(todo), fail_path)
    return RewriteRun(merged, failures, reused=len(done))


# ---------------------------------------------------------------------------
# evaluate


@dataclass
class EvaluationResult:
    reports: list[MetricReport]
    ledger: RankLedger
    inclusions: dict[tuple[str, str, str], int]
    relevance: dict[str, list[str]]
    skipped: dict[str, str]
    k_grid: tuple[int, ...]

    @property
    def evaluated_ads(self) -> list[str]:
        return list(dict.fromkeys(r.ad_id for r in self.reports))


def evaluate_rewrites(
    pairs: Mapping[str, RewritePair],
    ads: Mapping[str, AdDocument],
    queries: Mapping[str, Query],
    index: FlatIndex,
    embedder: Embedder,
    answer_llm: LlmBackend,
    k_grid: Sequence[int],
    workers: int = 1,
) -> EvaluationResult:
    """Rank every rewrite against the original corpus and score visibility.

    Each ad is evaluated in isolation: its vector alone is swapped for the
    rewrite's, competitors keep their original vectors. The answering LLM sees
    the top ``max(k_grid)`` ads for each version; smaller cut-offs reuse those
    inclusion flags.
    """
    k_grid = tuple(k_grid)
    kmax = max(k_grid)
    if kmax > len(index):
        raise DataError(f"max(k_grid)={kmax} exceeds corpus size {len(index)}")
    relevance = build_relevance([p.before for p in pairs.values()], queries)
    skipped: dict[str, str] = {}
    active: list[str] = []
    for ad_id in pairs:
        if ad_id not in index or ad_id not in ads:
            skipped[ad_id] = "ad not in index"
        elif not relevance[ad_id]:
            skipped[ad_id] = "no relevant queries"
        else:
            active.append(ad_id)

    qids = sorted({q for a in active for q in relevance[a]})
    qvecs = dict(zip(qids, embed_batch([queries[q].text for q in qids], embedder)))
    after_vecs = {}
    changed = []
    for a in active:
        if ad_text(pairs[a].after) == ad_text(ads[a]):
            after_vecs[a] = index.vector(a)
        else:
            changed.append(a)
    after_vecs.update(zip(changed, embed_batch([ad_text(pairs[a].after) for a in changed], embedder)))

    by_query: dict[str, list[str]] = defaultdict(list)
    for a in active:
        for q in relevance[a]:
            by_query[q].append(a)

    def work(qid: str):
        query, qv = queries[qid], qvecs[qid]
        scores = index.scores(qv)
        before_cited = None
        rows = []
        for a in by_query[qid]:
            rb = index.rank_in(scores, a)
            after_scores = index.with_substitution(scores, qv, a, after_vecs[a])
            ra = index.rank_in(after_scores, a)
            flags = error = None
            if rb <= kmax and ra <= kmax:
                try:
                    if before_cited is None:
                        ctx = [ads[h.doc_id] for h in index.top_from_scores(scores, kmax)]
                        _, before_cited = answer_with_ads(query, ctx, answer_llm)
                    ctx = [
                        pairs[a].after if h.doc_id == a else ads[h.doc_id]
                        for h in index.top_from_scores(after_scores, kmax)
                    ]
                    _, after_cited = answer_with_ads(query, ctx, answer_llm)
                    flags = (int(a in before_cited), int(a in after_cited))
                except BackendError as exc:
                    error = f"llm failure: {exc}"
            rows.append((a, qid, rb, ra, flags, error))
        return rows

    ledger = RankLedger()
    inclusions: dict[tuple[str, str, str], int] = {}
    with ThreadPoolExecutor(workers) as pool:
        for rows in pool.map(work, sorted(by_query)):
            for a, qid, rb, ra, flags, error in rows:
                ledger.record(a, qid, BEFORE, rb)
                ledger.record(a, qid, AFTER, ra)
                if flags is not None:
                    inclusions[(a, qid, BEFORE)], inclusions[(a, qid, AFTER)] = flags
                if error and a not in skipped:
                    skipped[a] = error

    reports: list[MetricReport] = []
    for a in active:
        if a in skipped:
            continue
        reports.extend(ad_reports(ledger, inclusions, a, relevance[a], k_grid))
    return EvaluationResult(reports, ledger, inclusions, relevance, skipped, k_grid)


def ranks_csv(result: EvaluationResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("ad_id", "query_id", "rank_before", "rank_after", "included_before", "included_after"))
    for a in result.evaluated_ads:
        for q in result.relevance[a]:
            w.writerow((
                a, q,
                result.ledger.rank(a, q, BEFORE),
                result.ledger.rank(a, q, AFTER),
                result.inclusions.get((a, q, BEFORE), ""),
                result.inclusions.get((a, q, AFTER), ""),
            ))
    return buf.getvalue()


def _load_eval_inputs(cfg: ExperimentConfig, embedder: Embedder | None):
    embedder = _embedder(cfg, embedder)
    ads = load_corpus(cfg.corpus_paths)
    if not cfg.queries:
        raise DataError("config has no queries file")
    queries = load_queries(cfg.queries)
    index = _index_for(cfg, ads, embedder)
    return embedder, ads, queries, index


def cmd_evaluate(
    cfg: ExperimentConfig,
    embedder: Embedder | None = None,
    answer_llm: LlmBackend | None = None,
    rewrites_path: str | Path | None = None,
    reports_out: str | Path | None = None,
) -> EvaluationResult:
    """Evaluate ``rewrites_out`` and write metrics.csv, ranks.csv, summary.json, manifest.json."""
    embedder, ads, queries, index = _load_eval_inputs(cfg, embedder)
    rewrites_path = Path(rewrites_path or cfg.rewrites_out)
    pairs = load_rewrites(rewrites_path)
    result = evaluate_rewrites(
        pairs, ads, queries, index, embedder,
        answer_llm or make_llm(cfg.answer_llm), cfg.k_grid, cfg.workers,
    )
    _write_evaluation(cfg, result, Path(reports_out or cfg.reports_out), [*cfg.corpus_paths, cfg.queries, rewrites_path])
    return result


def _write_evaluation(cfg, result: EvaluationResult, out: Path, inputs) -> dict:
    manifest = build_manifest(cfg, "evaluate", inputs)
    write_manifest(manifest, out / "manifest.json")
    _write_text(out / "metrics.csv", reports_to_csv(result.reports))
    _write_text(out / "ranks.csv", ranks_csv(result))
    _write_text(out / "summary.json", summary_json(
        aggregate_by_k(result.reports),
        run_id=manifest["run_id"],
        manifest="manifest.json",
        label=cfg.run_label,
        strategy=cfg.strategy,
        k_grid=list(result.k_grid),
        evaluated_ads=len(result.evaluated_ads),
        skipped=dict(sorted(result.skipped.items())),
    ))
    return manifest


# ---------------------------------------------------------------------------
# rewards and the weight ablation


def compute_rewards(
    pairs: Mapping[str, RewritePair],
    queries: Mapping[str, Query],
    index: FlatIndex,
    embedder: Embedder,
    k: int,
    seed: int,
    weights: LossWeights = LossWeights(),
) -> tuple[dict[str, RewardResult], dict[str, str]]:
    relevance = build_relevance([p.before for p in pairs.values()], queries)
    results: dict[str, RewardResult] = {}
    skipped: dict[str, str] = {}
    for ad_id, pair in pairs.items():
        try:
            results[ad_id] = score_rewrite(pair, relevance, queries, index, embedder, weights, k, seed)
        except (NoRelevantQueries, InsufficientCandidates) as exc:
            skipped[ad_id] = str(exc)
    return results, skipped


def _mean(xs: Sequence[float]) -> float | None:
    return math.fsum(xs) / len(xs) if xs else None


def ablation_row(label: str, weights: LossWeights, rewards: Mapping[str, RewardResult], result: EvaluationResult) -> dict:
    rw = [r.reweighted(weights) for r in rewards.values()]
    row = {
        "weighting": label,
        "alpha": weights.alpha,
        "beta": weights.beta,
        "gamma": weights.gamma,
        "rewarded_ads": len(rw),
        "mean_reward": _mean([r.reward for r in rw]),
        "loss_rel_gain": _mean([_mean([weights.alpha * b.rel_gain for b in r.breakdowns]) for r in rw]),
        "loss_triplet": _mean([_mean([weights.beta * b.triplet for b in r.breakdowns]) for r in rw]),
        "loss_fidelity": _mean([_mean([weights.gamma * b.fidelity for b in r.breakdowns]) for r in rw]),
    }
    aggs = {a.k: a for a in aggregate_by_k(result.reports)}
    for k in result.k_grid:
        row[f"delta_mrr@{k}"] = aggs[k].mean_delta_mrr if k in aggs else None
    for k in result.k_grid:
        row[f"delta_dir_pp@{k}"] = aggs[k].mean_delta_dir_pp if k in aggs else None
    return row


def ablation_csv(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def weightings_for(cfg: ExperimentConfig) -> dict[str, LossWeights]:
    out = dict(ABLATION_WEIGHTINGS)
    for spec in cfg.extra_weightings:
        w = LossWeights.parse(spec)
        out.setdefault(w.label, w)
    return out


def cmd_ablate(
    cfg: ExperimentConfig,
    embedder: Embedder | None = None,
    answer_llm: LlmBackend | None = None,
) -> list[dict]:
    """One row per weighting: mean reward, weighted loss terms, delta-MRR/DIR per k.

    A weighting listed in ``ablation_rewrites`` is evaluated on its own
    rewrites file; the rest share the main rewrites.
    """
    embedder, ads, queries, index = _load_eval_inputs(cfg, embedder)
    answer_llm = answer_llm or make_llm(cfg.answer_llm)
    cache: dict[str, tuple[dict, EvaluationResult]] = {}

    def run(path: str):
        if path not in cache:
            pairs = load_rewrites(path)
            result = evaluate_rewrites(pairs, ads, queries, index, embedder, answer_llm, cfg.k_grid, cfg.workers)
            rewards, _ = compute_rewards(pairs, queries, index, embedder, cfg.reward_k, cfg.seed)
            cache[path] = (rewards, result)
        return cache[path]

    rows = []
    for label, weights in weightings_for(cfg).items():
        rewards, result = run(cfg.ablation_rewrites.get(label, cfg.rewrites_out))
        rows.append(ablation_row(label, weights, rewards, result))
    out = Path(cfg.reports_out)
    manifest = build_manifest(cfg, "ablate", [*cfg.corpus_paths, cfg.queries, cfg.rewrites_out, *cfg.ablation_rewrites.values()])
    write_manifest(manifest, out / "ablation.manifest.json")
    _write_text(out / "ablation.csv", ablation_csv(rows))
    return rows


# ---------------------------------------------------------------------------
# report


def _load_summary(path: str | Path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "summary.json"
    doc = json.loads(p.read_text(encoding="utf-8"))
    doc.setdefault("label", doc.get("strategy") or p.parent.name)
    return doc


def _fmt(x: float | None) -> str:
    return "-" if x is None else f"{x:.4f}"


def _table(title: str, labels: Sequence[str], ks: Sequence[int], cells: Mapping[tuple[str, int], float | None]) -> str:
    header = ["k", *labels]
    body = [[str(k), *(_fmt(cells.get((lab, k))) for lab in labels)] for k in ks]
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    line = lambda r: "  ".join(c.rjust(w) for c, w in zip(r, widths))  # noqa: E731
    rule = "-" * len(line(header))
    return "\n".join([title, rule, line(header), rule, *map(line, body), rule])


def cmd_report(paths: Sequence[str | Path]) -> tuple[str, str]:
    """Render summaries as aligned text tables and a long-format CSV series."""
    summaries = [_load_summary(p) for p in paths]
    if not summaries:
        return "no data\n", "label,k,metric,value\n"
    labels = list(dict.fromkeys(s["label"] for s in summaries))
    mrr: dict[tuple[str, int], float | None] = {}
    dirs: dict[tuple[str, int], float | None] = {}
    ks: set[int] = set()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("label", "k", "metric", "value"))
    for s in summaries:
        for agg in s.get("per_k", []):
            k = agg["k"]
            ks.add(k)
            mrr[(s["label"], k)] = agg["mean_delta_mrr"]
            dirs[(s["label"], k)] = agg["mean_delta_dir_pp"]
            for metric, value in (("delta_mrr", agg["mean_delta_mrr"]), ("delta_dir_pp", agg["mean_delta_dir_pp"])):
                w.writerow((s["label"], k, metric, "" if value is None else repr(value)))
    if not ks:
        return "no data\n", buf.getvalue()
    ks_sorted = sorted(ks)
    text = "\n\n".join([
        _table("delta-MRR@k", labels, ks_sorted, mrr),
        _table("delta-DIR@k (percentage points)", labels, ks_sorted, dirs),
    ]) + "\n"
    return text, buf.getvalue()
