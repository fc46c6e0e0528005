"""Retrieval-aware ad rewriting: rewrite losses and visibility metrics.

Submodules map one-to-one onto the pipeline: :mod:`embedding`,
:mod:`vector_index`, :mod:`corpus`, :mod:`loss_reward`, :mod:`metrics`,
:mod:`llm_gateway` (with :mod:`prompts`) and :mod:`harness`.
"""

__version__ = "0.1.0"

from .corpus import AdDocument, Query, RewritePair, ad_text, build_relevance, load_ads, load_queries, load_rewrites  # noqa: E402
from .embedding import EmbedderDescriptor, HashingEmbedder, cosine_sim, embed_batch, normalize  # noqa: E402
from .loss_reward import LossBreakdown, LossWeights, ABLATION_WEIGHTINGS, reward, total_loss  # noqa: E402
from .metrics import MetricReport, RankLedger, delta_dir_at_k, delta_mrr_at_k, eligible_queries, rr_at_k  # noqa: E402
from .vector_index import FlatIndex, SearchHit, build  # noqa: E402
