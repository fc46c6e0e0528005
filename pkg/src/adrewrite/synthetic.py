"""Seeded synthetic ad/query corpora for tests and demos.

Each (domain, subdomain) pair owns a small topical vocabulary; ads and
queries draw from their pair's vocabulary plus shared filler words, so the
hashing embedder ranks same-pair ads near their queries without making the
ranking trivial.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import AdDocument, Query

_SYLLABLES = [
    "ba", "ko", "ri", "tu", "me", "sa", "lo", "ne", "vi", "da", "gu", "pe",
    "zo", "fi", "ra", "mo", "ki", "te", "lu", "na", "so", "ve", "di", "ha",
]
_FILLER = [
    "best", "new", "great", "quality", "shop", "online", "buy", "free",
    "shipping", "deal", "sale", "top", "offer", "today", "premium", "price",
    "store", "official", "fast", "easy",
]
_QUERY_STEMS = ["where to buy", "best", "cheap", "how to choose", "recommend", "looking for"]


def _word(rng: np.random.Generator, n: int) -> str:
    return "".join(rng.choice(_SYLLABLES, size=n))


@dataclass(frozen=True)
class SyntheticCorpus:
    ads: list[AdDocument]
    queries: list[Query]


def make_corpus(
    n_ads: int = 100,
    n_queries: int = 40,
    n_pairs: int = 10,
    vocab_per_pair: int = 12,
    seed: int = 0,
) -> SyntheticCorpus:
    """Spread ``n_ads`` ads and ``n_queries`` queries round-robin over ``n_pairs`` label pairs."""
    rng = np.random.default_rng(seed)
    n_domains = max(1, int(np.ceil(np.sqrt(n_pairs))))
    pairs = [(f"domain{p % n_domains}", f"sub{p:03d}") for p in range(n_pairs)]
    vocab = {}
    seen: set[str] = set()
    for pair in pairs:
        words = []
        while len(words) < vocab_per_pair:
            w = _word(rng, int(rng.integers(2, 4)))
            if w not in seen:
                seen.add(w)
                words.append(w)
        vocab[pair] = words

    ads = []
    for i in range(n_ads):
        pair = pairs[i % n_pairs]
        topical = list(rng.choice(vocab[pair], size=5, replace=False))
        filler = list(rng.choice(_FILLER, size=4, replace=False))
        title = " ".join([topical[0], topical[1], filler[0]])
        desc_words = topical[2:] + filler[1:] + [_word(rng, 3)]
        rng.shuffle(desc_words)
        ads.append(AdDocument(
            id=f"ad{i:05d}",
            title=title,
            description=" ".join(desc_words).capitalize() + ".",
            domain=pair[0],
            subdomain=pair[1],
        ))

    queries = []
    for j in range(n_queries):
        pair = pairs[j % n_pairs]
        stem = _QUERY_STEMS[int(rng.integers(len(_QUERY_STEMS)))]
        topical = rng.choice(vocab[pair], size=int(rng.integers(2, 4)), replace=False)
        queries.append(Query(
            id=f"q{j:05d}",
            text=f"{stem} {' '.join(topical)}",
            domain=pair[0],
            subdomain=pair[1],
        ))
    return SyntheticCorpus(ads, queries)
