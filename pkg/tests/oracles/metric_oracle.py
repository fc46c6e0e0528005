"""Direct-from-definition metric computations and random ledger generation."""

from __future__ import annotations

from fractions import Fraction


def rr(rank: int, k: int) -> Fraction:
    return Fraction(1, rank) if rank <= k else Fraction(0)


def delta_mrr(ranks: dict, k: int) -> float:
    """``ranks`` maps query id -> (rank_before, rank_after); exact rational mean."""
    total = sum((rr(a, k) - rr(b, k) for b, a in ranks.values()), Fraction(0))
    return float(total / len(ranks))


def eligible(ranks: dict, k: int) -> set:
    out = set()
    for q, (b, a) in ranks.items():
        if b <= k and a <= k:
            out.add(q)
    return out


def delta_dir(flags: dict, elig: set):
    """``flags`` maps query id -> (included_before, included_after)."""
    if not elig:
        return None
    return float(Fraction(100 * sum(flags[q][1] - flags[q][0] for q in elig), len(elig)))


def random_case(rng, n_queries: int | None = None, max_rank: int = 40):
    """Random per-ad ledger and inclusion flags, as plain dicts."""
    n = n_queries or int(rng.integers(1, 12))
    ranks = {f"q{i:03d}": (int(rng.integers(1, max_rank)), int(rng.integers(1, max_rank))) for i in range(n)}
    flags = {q: (int(rng.integers(0, 2)), int(rng.integers(0, 2))) for q in ranks}
    return ranks, flags
