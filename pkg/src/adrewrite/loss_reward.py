"""Composite rewrite loss and the scalar reward served to RL trainers.

For a query ``q``, original ad ``before`` and rewrite ``after``::

    rel_gain = sim(q, before) - sim(q, after)
    triplet  = mean_sim(q, 3 sampled top-k distractors) - sim(q, after)
    fidelity = 1 - sim(after, before)
    total    = alpha * rel_gain + beta * triplet + gamma * fidelity

The reward for a rewrite is ``-mean(total)`` over up to three relevant
queries. Lower loss is better; higher reward is better.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .corpus import Query, RelevanceMap, RewritePair, ad_text
from .embedding import Embedder, EmbeddingVector, cosine_sim, embed_batch
from .errors import InsufficientCandidates, NoRelevantQueries
from .vector_index import FlatIndex

DEFAULT_REWARD_K = 10
DISTRACTOR_COUNT = 3
MAX_REWARD_QUERIES = 3


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        ws = (self.alpha, self.beta, self.gamma)
        if any(not math.isfinite(w) or w < 0 for w in ws):
            raise ValueError(f"weights must be finite and non-negative, got {ws}")
        if not any(w > 0 for w in ws):
            raise ValueError("at least one weight must be positive")

    @classmethod
    def parse(cls, text: str) -> "LossWeights":
        """Parse ``"a,b,g"`` or ``"a:b:g"``."""
        parts = text.replace(":", ",").split(",")
        if len(parts) != 3:
            raise ValueError(f"expected three weights, got {text!r}")
        return cls(*(float(p) for p in parts))

    @property
    def label(self) -> str:
        return ":".join(f"{w:g}" for w in (self.alpha, self.beta, self.gamma))

    def combine(self, rel_gain: float, triplet: float, fidelity: float) -> float:
        return self.alpha * rel_gain + self.beta * triplet + self.gamma * fidelity


# The six weightings of the loss-weight ablation, keyed by their table label.
ABLATION_WEIGHTINGS: dict[str, LossWeights] = {
    "1:1:1": LossWeights(1.0, 1.0, 1.0),
    "35:45:20": LossWeights(0.35, 0.45, 0.20),
    "45:35:20": LossWeights(0.45, 0.35, 0.20),
    "45:20:35": LossWeights(0.45, 0.20, 0.35),
    "20:45:35": LossWeights(0.20, 0.45, 0.35),
    "30:60:10": LossWeights(0.30, 0.60, 0.10),
}


@dataclass(frozen=True)
class DistractorSample:
    query_id: str
    doc_ids: tuple[str, ...]
    similarities: tuple[float, ...]

    def __post_init__(self):
        if len(self.doc_ids) != DISTRACTOR_COUNT or len(self.similarities) != DISTRACTOR_COUNT:
            raise ValueError("a distractor sample holds exactly 3 documents")
        if len(set(self.doc_ids)) != DISTRACTOR_COUNT:
            raise ValueError("distractor ids must be distinct")
        if any(not -1.0 <= s <= 1.0 for s in self.similarities):
            raise ValueError("distractor similarities must lie in [-1, 1]")

    @property
    def mean_similarity(self) -> float:
        # anchored on the first value so equal similarities average exactly
        s0 = self.similarities[0]
        return s0 + math.fsum(s - s0 for s in self.similarities) / DISTRACTOR_COUNT


@dataclass(frozen=True)
class LossBreakdown:
    rel_gain: float
    triplet: float
    fidelity: float
    total: float
    weights: LossWeights
    query_id: str | None = None
    distractors: tuple[str, ...] = ()

    @classmethod
    def from_terms(cls, rel_gain, triplet, fidelity, weights, **extra) -> "LossBreakdown":
        return cls(rel_gain, triplet, fidelity, weights.combine(rel_gain, triplet, fidelity), weights, **extra)

    def reweighted(self, weights: LossWeights) -> "LossBreakdown":
        return LossBreakdown.from_terms(
            self.rel_gain, self.triplet, self.fidelity, weights,
            query_id=self.query_id, distractors=self.distractors,
        )


def rel_gain_loss(sim_after: float, sim_before: float) -> float:
    return -(sim_after - sim_before)


def triplet_loss(sim_after: float, sample: DistractorSample) -> float:
    return -(sim_after - sample.mean_similarity)


def fidelity_loss(sim_after_before: float) -> float:
    return 1.0 - sim_after_before


def sample_distractors(
    index: FlatIndex,
    query_emb: EmbeddingVector,
    query_id: str,
    tracked_doc_id: str,
    k: int = DEFAULT_REWARD_K,
    seed: int = 0,
) -> DistractorSample:
    """Draw 3 distinct documents uniformly from the top-k, never the tracked ad."""
    if k < DISTRACTOR_COUNT:
        raise ValueError(f"k must be >= {DISTRACTOR_COUNT}, got {k}")
    eligible = [h.doc_id for h in index.search(query_emb, k) if h.doc_id != tracked_doc_id]
    if len(eligible) < DISTRACTOR_COUNT:
        raise InsufficientCandidates(
            f"query {query_id!r}: {len(eligible)} eligible distractors in top-{k}"
        )
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(eligible), size=DISTRACTOR_COUNT, replace=False)
    ids = tuple(eligible[i] for i in picks)
    sims = tuple(cosine_sim(query_emb, index.vector(d)) for d in ids)
    return DistractorSample(query_id, ids, sims)


def _embed_pair(pair: RewritePair, query: Query, embedder: Embedder):
    before_text, after_text = ad_text(pair.before), ad_text(pair.after)
    if before_text == after_text:
        q, before = embed_batch([query.text, before_text], embedder)
        return q, before, before
    return tuple(embed_batch([query.text, before_text, after_text], embedder))


def total_loss(
    pair: RewritePair,
    query: Query,
    index: FlatIndex,
    embedder: Embedder,
    weights: LossWeights = LossWeights(),
    k: int = DEFAULT_REWARD_K,
    seed: int = 0,
) -> LossBreakdown:
    """Loss of ``pair`` for one relevant ``query`` (relevance is the caller's job)."""
    q, before, after = _embed_pair(pair, query, embedder)
    sim_after = cosine_sim(q, after)
    sim_before = cosine_sim(q, before)
    sample = sample_distractors(index, q, query.id, pair.ad_id, k, seed)
    return LossBreakdown.from_terms(
        rel_gain_loss(sim_after, sim_before),
        triplet_loss(sim_after, sample),
        fidelity_loss(cosine_sim(after, before)),
        weights,
        query_id=query.id,
        distractors=sample.doc_ids,
    )


def select_reward_queries(ad_id: str, relevance: RelevanceMap) -> list[str]:
    """First (up to) three relevant query ids in ascending order."""
    ids = sorted(relevance.get(ad_id, ()))
    if not ids:
        raise NoRelevantQueries(f"ad {ad_id!r} has no relevant queries")
    return ids[:MAX_REWARD_QUERIES]


def reward_from_totals(totals: Sequence[float]) -> float:
    if not totals:
        raise NoRelevantQueries("no loss values to average")
    return -(math.fsum(totals) / len(totals))


@dataclass(frozen=True)
class RewardResult:
    reward: float
    breakdowns: tuple[LossBreakdown, ...]

    def reweighted(self, weights: LossWeights) -> "RewardResult":
        parts = tuple(b.reweighted(weights) for b in self.breakdowns)
        return RewardResult(reward_from_totals([b.total for b in parts]), parts)


def score_rewrite(
    pair: RewritePair,
    relevance: RelevanceMap,
    queries: Mapping[str, Query],
    index: FlatIndex,
    embedder: Embedder,
    weights: LossWeights = LossWeights(),
    k: int = DEFAULT_REWARD_K,
    seed: int = 0,
) -> RewardResult:
    """Reward plus the per-query loss breakdowns it was averaged from."""
    parts = tuple(
        total_loss(pair, queries[qid], index, embedder, weights, k, seed)
        for qid in select_reward_queries(pair.ad_id, relevance)
    )
    return RewardResult(reward_from_totals([b.total for b in parts]), parts)


def reward(
    pair: RewritePair,
    relevance: RelevanceMap,
    queries: Mapping[str, Query],
    index: FlatIndex,
    embedder: Embedder,
    weights: LossWeights = LossWeights(),
    k: int = DEFAULT_REWARD_K,
    seed: int = 0,
) -> float:
    return score_rewrite(pair, relevance, queries, index, embedder, weights, k, seed).reward
