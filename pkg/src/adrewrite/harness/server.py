"""HTTP reward endpoint for external RL trainers.

``POST /reward`` with ``{"ad_id", "before": {"title", "description"},
"after": {...}}`` returns the reward and its per-query loss breakdown.
``GET /healthz`` reports readiness. The index and corpora are loaded once
and never mutated, so requests are served concurrently.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from ..corpus import AdDocument, Query, RelevanceMap, RewritePair, build_relevance, load_queries
from ..embedding import CachingEmbedder, Embedder, make_embedder
from ..errors import InsufficientCandidates, NoRelevantQueries, ServiceUnavailable
from ..loss_reward import LossWeights, RewardResult, score_rewrite
from ..vector_index import FlatIndex
from .config import ExperimentConfig
from .pipeline import _index_for, load_corpus

logger = logging.getLogger(__name__)


class AdText(BaseModel):
    title: str = Field(min_length=1)
    description: str = Field(min_length=1)


class RewardRequest(BaseModel):
    ad_id: str = Field(min_length=1)
    before: AdText
    after: AdText
    seed: int | None = None


@dataclass
class RewardService:
    ads: Mapping[str, AdDocument]
    queries: Mapping[str, Query]
    relevance: RelevanceMap
    index: FlatIndex
    embedder: Embedder
    weights: LossWeights = LossWeights()
    k: int = 10
    seed: int = 0

    @classmethod
    def from_config(cls, cfg: ExperimentConfig, embedder: Embedder | None = None) -> "RewardService":
        embedder = CachingEmbedder(embedder or make_embedder(cfg.embedder))
        ads = load_corpus(cfg.corpus_paths)
        queries = load_queries(cfg.queries)
        index = _index_for(cfg, ads, embedder)
        return cls(ads, queries, build_relevance(ads, queries), index, embedder, cfg.weights, cfg.reward_k, cfg.seed)

    def score(self, ad_id: str, before: AdText, after: AdText, seed: int | None = None) -> RewardResult:
        ad = self.ads[ad_id]
        pair = RewritePair(
            ad_id,
            ad.with_text(before.title, before.description),
            ad.with_text(after.title, after.description),
            "served",
        )
        return score_rewrite(
            pair, self.relevance, self.queries, self.index, self.embedder,
            self.weights, self.k, self.seed if seed is None else seed,
        )


def result_payload(ad_id: str, result: RewardResult) -> dict:
    w = result.breakdowns[0].weights
    return {
        "ad_id": ad_id,
        "reward": result.reward,
        "weights": {"alpha": w.alpha, "beta": w.beta, "gamma": w.gamma},
        "breakdown": [
            {
                "query_id": b.query_id,
                "rel_gain": b.rel_gain,
                "triplet": b.triplet,
                "fidelity": b.fidelity,
                "total": b.total,
                "distractors": list(b.distractors),
            }
            for b in result.breakdowns
        ],
    }


def create_app(service: RewardService) -> FastAPI:
    app = FastAPI(title="adrewrite reward service")

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "ads": len(service.ads), "queries": len(service.queries)}

    @app.post("/reward")
    def reward(req: RewardRequest):
        if req.ad_id not in service.ads or req.ad_id not in service.index:
            raise HTTPException(status_code=404, detail=f"unknown ad_id {req.ad_id!r}")
        try:
            result = service.score(req.ad_id, req.before, req.after, req.seed)
        except ServiceUnavailable as exc:
            raise HTTPException(status_code=503, detail=str(exc)) from exc
        except (NoRelevantQueries, InsufficientCandidates) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return result_payload(req.ad_id, result)

    return app


def serve_reward(cfg: ExperimentConfig, embedder: Embedder | None = None) -> None:
    import uvicorn

    app = create_app(RewardService.from_config(cfg, embedder))
    uvicorn.run(app, host=cfg.host, port=cfg.port, log_level="info")
