"""
Serving rewards over HTTP
=========================

The reward endpoint an RL trainer would call, exercised in-process.
"""

# %%
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from adrewrite.corpus import write_ads, write_queries
from adrewrite.harness.config import ExperimentConfig
from adrewrite.harness.server import RewardService, create_app
from adrewrite.synthetic import make_corpus

work = Path(tempfile.mkdtemp(prefix="adrewrite-reward-"))
corpus = make_corpus(n_ads=60, n_queries=20, n_pairs=5, seed=2)
write_ads(corpus.ads, work / "ads.jsonl")
write_queries(corpus.queries, work / "queries.jsonl")
cfg = ExperimentConfig(ads=(str(work / "ads.jsonl"),), queries=str(work / "queries.jsonl"), reports_out=str(work))
client = TestClient(create_app(RewardService.from_config(cfg)))
print(client.get("/healthz").json())

# %%
ad = corpus.ads[0]
body = {
    "ad_id": ad.id,
    "before": {"title": ad.title, "description": ad.description},
    "after": {"title": ad.title + " official store", "description": ad.description},
}
reply = client.post("/reward", json=body).json()
print("reward", reply["reward"])
for part in reply["breakdown"]:
    print(part["query_id"], {k: round(part[k], 4) for k in ("rel_gain", "triplet", "fidelity", "total")})

# %%
print(client.post("/reward", json=body | {"ad_id": "missing"}).status_code)  # 404
