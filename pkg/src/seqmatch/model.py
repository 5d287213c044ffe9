"""The full matching-stage model: shared item table, both encoders, fusion."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .aggregation import aggregate_interests
from .encoder import PreferenceEncoder
from .interests import InterestExtractor, InterestSet


@dataclass
class ModelConfig:
    item_count: int
    dim: int = 128
    n_layers: int = 2
    n_interests: int = 4
    max_len: int = 20
    tau: float = 0.1


class MatchingModel(nn.Module):
    """Sequence-in, user-vector-out retrieval model.

    Prefixes hold catalog item indices with 0 at pad positions; the boolean
    mask tells the two apart. Internally indices shift by one so row 0 of the
    embedding table is a frozen all-zero pad row. Item and scoring embeddings
    are one shared table.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = config
        self.item_emb = nn.Embedding(config.item_count + 1, config.dim, padding_idx=0)
        self.encoder = PreferenceEncoder(config.dim, config.n_layers)
        self.extractor = InterestExtractor(config.dim, config.n_interests)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        """Zero-mean uniform init at scale 1/sqrt(dim), zero biases, zero pad row."""
        gen = torch.Generator().manual_seed(seed)
        bound = self.config.dim ** -0.5
        with torch.no_grad():
            for name, param in self.named_parameters():
                if ".norm" in name:      # layer norms keep the identity init
                    param.fill_(1.0) if name.endswith("weight") else param.zero_()
                elif param.dim() == 1 or name == "extractor.pool_bias":
                    param.zero_()
                else:
                    param.uniform_(-bound, bound, generator=gen)
            self.item_emb.weight[0].zero_()

    @property
    def dtype(self) -> torch.dtype:
        return self.item_emb.weight.dtype

    def embed(self, prefix: torch.Tensor,
              mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Embedded sequence [B, L, d] with exact zeros at pad rows, float mask."""
        if int(prefix.max()) >= self.config.item_count or int(prefix.min()) < 0:
            raise ValueError("item index out of range for this catalog")
        fmask = mask.to(self.dtype)
        tokens = (prefix + 1) * mask.long()      # pads hit the frozen zero row
        return self.item_emb(tokens), fmask

    def encode_preference(self, prefix: torch.Tensor,
                          mask: torch.Tensor) -> torch.Tensor:
        emb, fmask = self.embed(prefix, mask)
        return self.encoder(emb, fmask)

    def extract_interests(self, prefix: torch.Tensor, mask: torch.Tensor,
                          preference: torch.Tensor | None) -> InterestSet:
        emb, fmask = self.embed(prefix, mask)
        return self.extractor(emb, fmask, preference)

    def user_vector(self, prefix: torch.Tensor, mask: torch.Tensor
                    ) -> tuple[torch.Tensor, InterestSet, torch.Tensor, torch.Tensor]:
        """Full forward: preference, interests, fusion weights, fused vector."""
        emb, fmask = self.embed(prefix, mask)
        preference = self.encoder(emb, fmask)
        interests = self.extractor(emb, fmask, preference)
        weights, fused = aggregate_interests(interests.vectors, preference,
                                             self.config.tau)
        return preference, interests, weights, fused

    def forward(self, prefix: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return self.user_vector(prefix, mask)[3]

    def item_embeddings(self) -> torch.Tensor:
        """Catalog-indexed view of the shared table (pad row dropped)."""
        return self.item_emb.weight[1:]
