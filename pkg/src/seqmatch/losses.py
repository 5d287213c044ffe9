"""Training objective: sampled-softmax next-item loss, pairwise contrastive
loss on order-shuffled sequence views, and the prototype covariance penalty,
combined as main + alpha_reg * aux + beta_cl * contrastive.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .aggregation import aggregate_interests
from .interests import orthogonality_penalty
from .model import MatchingModel

VARIANTS = ("full", "no_cl", "no_gs")


@dataclass
class TrainConfig:
    dim: int = 128
    max_len: int = 20
    n_layers: int = 2
    n_interests: int = 4
    tau: float = 0.1
    alpha_reg: float = 0.1
    beta_cl: float = 0.4
    n_negatives: int = 10
    batch_size: int = 128
    learning_rate: float = 0.001
    patience_epochs: int = 20
    max_epochs: int = 200
    seed: int = 0
    variant: str = "full"
    # optional cap on per-user sample expansion (most recent targets kept);
    # None reproduces the exhaustive per-position expansion
    max_samples_per_user: int | None = None


def ablation_variant(config: TrainConfig, variant: str) -> TrainConfig:
    """Derive an ablated copy of a full configuration.

    ``no_cl`` drops the contrastive term; ``no_gs`` additionally disables the
    whole-sequence encoder, fixing the relevance gate at 1 and switching
    retrieval to per-interest candidate pooling.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    if variant == "full":
        return dataclasses.replace(config, variant="full")
    # without the preference encoder there is nothing to contrast
    return dataclasses.replace(config, variant=variant, beta_cl=0.0)


@dataclass
class LossBreakdown:
    main: torch.Tensor
    aux: torch.Tensor
    contrastive: torch.Tensor
    total: torch.Tensor


def sampled_softmax_loss(user_vecs: torch.Tensor, targets: torch.Tensor,
                         item_emb: torch.Tensor, n_negatives: int,
                         rng: np.random.Generator) -> torch.Tensor:
    """Cross-entropy of the target against uniformly drawn negatives.

    Negatives are sampled per example without replacement from the catalog
    minus the target, so with n_negatives = |V| - 1 this equals the exact
    full-softmax cross-entropy.
    """
    if n_negatives < 1:
        raise ValueError("n_negatives must be >= 1")
    catalog_size = item_emb.shape[0]
    if catalog_size < n_negatives + 1:
        raise ValueError(
            f"catalog of {catalog_size} items cannot supply {n_negatives} negatives")
    target_idx = targets.cpu().numpy()
    negatives = np.empty((len(target_idx), n_negatives), dtype=np.int64)
    for i, t in enumerate(target_idx):
        draw = rng.choice(catalog_size - 1, size=n_negatives, replace=False)
        draw += draw >= t            # skip over the target index
        negatives[i] = draw
    neg_emb = item_emb[torch.from_numpy(negatives)]                    # [B, n, d]
    pos_score = (user_vecs * item_emb[targets]).sum(-1, keepdim=True)  # [B, 1]
    neg_score = torch.matmul(neg_emb, user_vecs.unsqueeze(-1)).squeeze(-1)
    logits = torch.cat([pos_score, neg_score], dim=1)
    labels = torch.zeros(logits.shape[0], dtype=torch.long)
    return F.cross_entropy(logits, labels)


def bpr_contrastive_loss(anchor: torch.Tensor, positive: torch.Tensor,
                         negative: torch.Tensor) -> torch.Tensor:
    """Pairwise -log sigmoid(<anchor,pos> - <anchor,neg>), batch mean."""
    margin = (anchor * positive).sum(-1) - (anchor * negative).sum(-1)
    return F.softplus(-margin).mean()


def _shuffle_batch(prefix: torch.Tensor, mask: torch.Tensor,
                   rng: np.random.Generator) -> torch.Tensor:
    """Independently permute the real items of every row."""
    out = prefix.cpu().numpy().copy()
    mask_np = mask.cpu().numpy().astype(bool)
    for row, row_mask in zip(out, mask_np):
        real = np.flatnonzero(row_mask)
        row[real] = row[real][rng.permutation(real.size)]
    return torch.from_numpy(out)


def total_loss(model: MatchingModel, prefix: torch.Tensor, mask: torch.Tensor,
               targets: torch.Tensor, config: TrainConfig,
               rng: np.random.Generator) -> LossBreakdown:
    """Full forward pass and all three loss terms for one batch."""
    item_emb = model.item_embeddings()
    zero = torch.zeros((), dtype=model.dtype)

    if config.variant == "no_gs":
        interests = model.extract_interests(prefix, mask, preference=None)
        # train on the interest that best explains the target, as in
        # per-interest candidate-pooling retrievers
        sims = torch.matmul(interests.vectors,
                            item_emb[targets].unsqueeze(-1)).squeeze(-1)  # [B, K]
        picked = sims.argmax(dim=1)
        fused = interests.vectors[torch.arange(len(picked)), picked]
        contrastive = zero
    else:
        emb, fmask = model.embed(prefix, mask)
        preference = model.encoder(emb, fmask)
        interests = model.extractor(emb, fmask, preference)
        _, fused = aggregate_interests(interests.vectors, preference, config.tau)
        if config.beta_cl > 0 and prefix.shape[0] >= 2:
            shuffled = _shuffle_batch(prefix, mask, rng)
            positive = model.encode_preference(shuffled, mask)
            negative = torch.roll(preference, -1, dims=0)   # next row in batch
            contrastive = bpr_contrastive_loss(preference, positive, negative)
        else:
            contrastive = zero

    main = sampled_softmax_loss(fused, targets, item_emb, config.n_negatives, rng)
    aux = orthogonality_penalty(model.extractor.prototypes)
    total = main + config.alpha_reg * aux + config.beta_cl * contrastive
    return LossBreakdown(main=main, aux=aux, contrastive=contrastive, total=total)
