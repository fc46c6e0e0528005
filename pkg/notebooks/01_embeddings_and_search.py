"""
Embeddings and exact search
===========================

Unit vectors and cosine similarity, then the flat index with its tie-break.
"""

# %%
import numpy as np

from adrewrite.embedding import HashingEmbedder, cosine_sim, embed_batch, normalize
from adrewrite.vector_index import build

v = normalize([3, 4])
print(v, v.dtype)                     # [0.6 0.8] float32
print(cosine_sim(v, v))               # identical vectors score exactly 1.0

# %%
# The deterministic embedder hashes tokens into a fixed-width vector, so the
# same text always gives the same vector regardless of batch composition.
emb = HashingEmbedder(dim=64)
texts = ["custom name mugs", "personalized ceramic mugs", "trail running shoes"]
vecs = embed_batch(texts, emb)
sims = np.array([[cosine_sim(a, b) for b in vecs] for a in vecs])
print(np.round(sims, 3))

# %%
# Ties are broken by id, so the same query always gets the same ranking.
index = build([("A", normalize([1, 0, 0])), ("C", normalize([0, 0, 1])), ("B", normalize([0, 1, 0]))])
for hit in index.search(normalize([1, 0, 0]), k=3):
    print(hit)

# %%
# Swap one document's vector without touching the others.
q = normalize([1, 1, 0])
print("rank of C:", index.rank_of(q, "C"))
print("rank of C if it pointed at q:", index.rank_of(q, "C", substitute=q))
