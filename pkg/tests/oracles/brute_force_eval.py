"""Straight-line recomputation of an evaluation run from raw embeddings.

Reads the JSONL inputs directly, normalizes raw vectors, ranks every ad for
every relevant query with a full sort, applies the top-1 citing answerer
contract and computes the per-ad metrics with exact fractions. The only
thing taken from outside is ``embed_raw``: texts in, unnormalized vectors out.

    python brute_force_eval.py ads.jsonl queries.jsonl rewrites.jsonl > metrics.csv
"""

from __future__ import annotations

import csv
import io
import json
import math
import sys
from fractions import Fraction

import numpy as np

K_GRID = (1, 3, 5, 10, 20, 30)


def read_jsonl(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    return rows


def text_of(ad):
    return "Title: " + ad["title"] + "\nDescription: " + ad["description"]


def unit(raw):
    xs = [float(x) for x in raw]
    norm = math.sqrt(sum(x * x for x in xs))
    if abs(norm - 1.0) <= 1e-7:
        return np.array(xs, dtype=np.float32)
    return np.array([x / norm for x in xs], dtype=np.float32)


def dot(a, b):
    total = 0.0
    for x, y in zip(a.tolist(), b.tolist()):
        total += x * y
    return total


def label(rec):
    return (rec["domain"].strip().casefold(), rec["subdomain"].strip().casefold())


def evaluate(ads_path, queries_path, rewrites_path, embed_raw, k_grid=K_GRID):
    """Return (metric rows, rank rows) in the harness CSV layouts."""
    ads = read_jsonl(ads_path)
    queries = read_jsonl(queries_path)
    rewrites = read_jsonl(rewrites_path)
    kmax = max(k_grid)

    ad_ids = [str(a["id"]) for a in ads]
    ad_vec = dict(zip(ad_ids, [unit(r) for r in embed_raw([text_of(a) for a in ads])]))
    q_by_id = {str(q["id"]): q for q in queries}
    q_vec = dict(zip(q_by_id, [unit(r) for r in embed_raw([q["text"] for q in queries])]))

    metric_rows = []
    rank_rows = []
    for rw in rewrites:
        ad_id = rw["ad_id"]
        if ad_id not in ad_vec:
            continue
        relevant = sorted(qid for qid, q in q_by_id.items() if label(q) == label(rw["before"]))
        if not relevant:
            continue
        after_text = text_of(rw["after"])
        if after_text == text_of(rw["before"]):
            new_vec = ad_vec[ad_id]
        else:
            new_vec = unit(embed_raw([after_text])[0])

        ranks = {}
        flags = {}
        for qid in relevant:
            qv = q_vec[qid]
            before_scores = {d: dot(ad_vec[d], qv) for d in ad_ids}
            after_scores = dict(before_scores)
            after_scores[ad_id] = dot(new_vec, qv)
            order_before = sorted(ad_ids, key=lambda d: (-before_scores[d], d))
            order_after = sorted(ad_ids, key=lambda d: (-after_scores[d], d))
            rb = order_before.index(ad_id) + 1
            ra = order_after.index(ad_id) + 1
            ranks[qid] = (rb, ra)
            if rb <= kmax and ra <= kmax:
                # the answering mock cites the first ad it is shown
                flags[qid] = (int(order_before[0] == ad_id), int(order_after[0] == ad_id))
            rank_rows.append((ad_id, qid, rb, ra, *flags.get(qid, ("", ""))))

        for k in k_grid:
            def rr(r):
                return Fraction(1, r) if r <= k else Fraction(0)
            mrr = sum((rr(a) - rr(b) for b, a in ranks.values()), Fraction(0)) / len(ranks)
            elig = [q for q, (b, a) in ranks.items() if b <= k and a <= k]
            if elig:
                ddir = Fraction(100 * sum(flags[q][1] - flags[q][0] for q in elig), len(elig))
                ddir = float(ddir)
            else:
                ddir = None
            metric_rows.append((ad_id, k, float(mrr), ddir, len(elig)))
    return metric_rows, rank_rows


def main(argv):
    sys.path.insert(0, "src")
    from adrewrite.embedding import HashingEmbedder

    emb = HashingEmbedder()
    rows, _ = evaluate(argv[1], argv[2], argv[3], emb.embed_raw)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("ad_id", "k", "delta_mrr", "delta_dir_pp", "eligible_count"))
    for ad_id, k, mrr, ddir, n in rows:
        w.writerow((ad_id, k, repr(mrr), "" if ddir is None else repr(ddir), n))
    sys.stdout.write(buf.getvalue())


if __name__ == "__main__":
    main(sys.argv)
