"""
Visibility metrics by hand
==========================

delta-MRR@K and delta-DIR@K on a tiny ledger.
"""

# %%
from adrewrite.metrics import AFTER, BEFORE, InclusionRecord, RankLedger, ad_reports, aggregate_by_k

ledger = RankLedger()
for q, (before, after) in {"q1": (2, 1), "q2": (3, 2), "q3": (12, 4)}.items():
    ledger.record("ad", q, BEFORE, before)
    ledger.record("ad", q, AFTER, after)

flags = [
    InclusionRecord("ad", "q1", BEFORE, 0), InclusionRecord("ad", "q1", AFTER, 1),
    InclusionRecord("ad", "q2", BEFORE, 1), InclusionRecord("ad", "q2", AFTER, 1),
]

# %%
# q3 enters the top 5 only after rewriting, so it counts for delta-MRR@5 but
# is not eligible for delta-DIR@5 (it must be within K in both versions).
for rep in ad_reports(ledger, flags, "ad", ["q1", "q2", "q3"], k_grid=(1, 3, 5)):
    print(rep)

# %%
for agg in aggregate_by_k(ad_reports(ledger, flags, "ad", ["q1", "q2", "q3"], k_grid=(1, 3, 5))):
    print(agg.to_dict())
