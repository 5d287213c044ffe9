"""Interest fusion and exhaustive top-N retrieval.

Fusion weights the K interest vectors by their inner product with the user's
preference vector under a temperature softmax; low temperature snaps to the
single best-matching interest, high temperature averages them. Items are
scored by inner product against the shared item embedding table, so score
order equals full-softmax probability order.
"""

from __future__ import annotations

import numpy as np
import torch


def aggregate_interests(vectors: torch.Tensor, preference: torch.Tensor,
                        tau: float = 0.1) -> tuple[torch.Tensor, torch.Tensor]:
    """Fuse [B, K, d] interests into one vector per user.

    Returns (weights [B, K], fused [B, d]); weights are a softmax of
    preference/interest similarities sharpened by 1/tau.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    sims = torch.matmul(vectors, preference.unsqueeze(-1)).squeeze(-1)   # [B, K]
    weights = torch.softmax(sims / tau, dim=-1)
    fused = torch.matmul(weights.unsqueeze(1), vectors).squeeze(1)       # [B, d]
    return weights, fused


def score_items(user_vec: torch.Tensor, item_emb: torch.Tensor,
                candidates: torch.Tensor | None = None) -> torch.Tensor:
    """Inner-product matching scores against the catalog (or a candidate subset)."""
    table = item_emb if candidates is None else item_emb[candidates]
    return torch.matmul(user_vec, table.transpose(-1, -2))


def matching_distribution(user_vec: torch.Tensor,
                          item_emb: torch.Tensor) -> torch.Tensor:
    """Full-catalog softmax over the matching scores."""
    return torch.softmax(score_items(user_vec, item_emb), dim=-1)


def topn_from_scores(scores: np.ndarray, n: int,
                     exclude: set[int] | frozenset[int] = frozenset()) -> list[int]:
    """Highest-scoring item indices, descending, ties broken by ascending index.

    Excluded items never appear. A result shorter than ``n`` means the
    catalog ran out of eligible candidates.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    # stable argsort on -scores keeps ascending index order among equal scores
    order = np.argsort(-scores, kind="stable")
    out: list[int] = []
    for idx in order:
        if int(idx) in exclude:
            continue
        out.append(int(idx))
        if len(out) == n:
            break
    return out


def multi_interest_topn(scores: np.ndarray, n: int,
                        exclude: set[int] | frozenset[int] = frozenset()) -> list[int]:
    """Union the per-interest top-n lists, then rerank by best per-item score.

    ``scores`` is [K, V]. This is the retrieval path when no preference
    vector is available to fuse the interests.
    """
    pool: set[int] = set()
    for row in scores:
        pool.update(topn_from_scores(row, n, exclude))
    best = scores.max(axis=0)
    pooled_scores = np.full_like(best, -np.inf)
    member = np.fromiter(pool, dtype=np.int64) if pool else np.empty(0, np.int64)
    pooled_scores[member] = best[member]
    return topn_from_scores(pooled_scores, n, exclude)
