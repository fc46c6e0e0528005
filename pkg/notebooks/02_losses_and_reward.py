"""
Composite loss and reward
=========================

Score a rewrite against its relevant queries and see how the weights change it.
"""

# %%
from adrewrite.corpus import RewritePair, ad_text, build_relevance
from adrewrite.embedding import HashingEmbedder, embed_batch
from adrewrite.loss_reward import ABLATION_WEIGHTINGS, score_rewrite
from adrewrite.synthetic import make_corpus
from adrewrite.vector_index import build

corpus = make_corpus(n_ads=80, n_queries=30, n_pairs=6, seed=1)
ads = {a.id: a for a in corpus.ads}
queries = {q.id: q for q in corpus.queries}
emb = HashingEmbedder(dim=128)
index = build(zip(ads, embed_batch([ad_text(a) for a in ads.values()], emb)))
relevance = build_relevance(ads, queries)

ad = ads["ad00004"]
print(ad_text(ad))
print("relevant queries:", [queries[q].text for q in relevance[ad.id]])

# %%
# An unchanged ad: rel_gain and fidelity vanish, only the triplet term is left.
same = score_rewrite(RewritePair(ad.id, ad, ad, "identity"), relevance, queries, index, emb)
for b in same.breakdowns:
    print(f"{b.query_id}  rel_gain={b.rel_gain:+.4f} triplet={b.triplet:+.4f} fidelity={b.fidelity:.4f}")
print("reward", round(same.reward, 4))

# %%
# Append the first query's words: relevance rises, fidelity drops a little.
stuffed = ad.with_text(ad.title, ad.description + " " + queries[relevance[ad.id][0]].text)
res = score_rewrite(RewritePair(ad.id, ad, stuffed, "manual"), relevance, queries, index, emb)
print("reward", round(res.reward, 4))

# %%
# Same breakdowns under each ablation weighting.
for label, w in ABLATION_WEIGHTINGS.items():
    print(f"{label:>9}  reward={res.reweighted(w).reward:+.4f}")
