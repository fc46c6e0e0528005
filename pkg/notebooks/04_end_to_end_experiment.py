"""
An end-to-end experiment
========================

Synthetic corpus, two rewriters (identity and keyword stuffing), evaluation
and a side-by-side report. Everything runs on the deterministic mocks.
"""

# %%
import tempfile
from pathlib import Path

from adrewrite.corpus import build_relevance, write_ads, write_queries
from adrewrite.embedding import tokenize
from adrewrite.harness import pipeline
from adrewrite.harness.config import ExperimentConfig
from adrewrite.llm_gateway import ScriptedLlm
from adrewrite.synthetic import make_corpus

work = Path(tempfile.mkdtemp(prefix="adrewrite-demo-"))
corpus = make_corpus(n_ads=100, n_queries=40, seed=0)
write_ads(corpus.ads, work / "ads.jsonl")
write_queries(corpus.queries, work / "queries.jsonl")
queries = {q.id: q for q in corpus.queries}

# %%
def stuff(req):
    rel = build_relevance([req.ad], queries)[req.ad.id]
    words = dict.fromkeys(t for q in rel for t in tokenize(queries[q].text))
    return f"Title: {req.ad.title}\nDescription: {req.ad.description} {' '.join(words)}"


runs = []
for label, llm in (("echo", None), ("stuffing", ScriptedLlm(stuff))):
    cfg = ExperimentConfig(
        ads=(str(work / "ads.jsonl"),),
        queries=str(work / "queries.jsonl"),
        rewrites_out=str(work / label / "rewrites.jsonl"),
        reports_out=str(work / label),
        label=label,
    )
    pipeline.cmd_rewrite(cfg, llm=llm)
    result = pipeline.cmd_evaluate(cfg)
    print(label, "evaluated", len(result.evaluated_ads), "ads")
    runs.append(cfg.reports_out)

# %%
text, series = pipeline.cmd_report(runs)
print(text)
