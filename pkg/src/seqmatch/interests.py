"""Prototype-clustered multi-interest extraction.

Each item position is soft-assigned to one of K learnable intention
prototypes; a per-prototype position-importance softmax and a
preference-guided gate then weight the item embeddings before pooling one
interest vector per prototype. A covariance penalty keeps the prototype bank
from collapsing onto a single direction.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .encoder import masked_softmax


@dataclass
class InterestSet:
    """Per-user interest vectors plus the attention maps that produced them."""

    vectors: torch.Tensor      # [B, K, d]
    assignment: torch.Tensor   # [B, K, L], columns at real positions sum to 1 over K
    position: torch.Tensor     # [B, K, L], rows sum to 1 over real positions
    gate: torch.Tensor         # [B, L], preference-relevance gate in (0, 1), 0 at pads


def orthogonality_penalty(prototypes: torch.Tensor) -> torch.Tensor:
    """Half the squared off-diagonal mass of the prototype covariance matrix.

    Zero exactly when the centered prototype rows are uncorrelated.
    """
    k = prototypes.shape[0]
    centered = prototypes - prototypes.mean(dim=0, keepdim=True)
    cov = centered @ centered.transpose(0, 1) / k                  # [K, K]
    return 0.5 * (cov.pow(2).sum() - torch.diagonal(cov).pow(2).sum())


class InterestExtractor(nn.Module):
    def __init__(self, dim: int, n_interests: int):
        super().__init__()
        if n_interests < 1:
            raise ValueError("need at least one interest prototype")
        self.dim = dim
        self.n_interests = n_interests
        self.prototypes = nn.Parameter(torch.empty(n_interests, dim))
        self.assign_proj = nn.Linear(dim, dim, bias=False)
        self.norm_items = nn.LayerNorm(dim)
        self.norm_prototypes = nn.LayerNorm(dim)
        # position-importance MLP, one logit column per prototype
        self.position_hidden = nn.Linear(dim, 4 * dim)
        self.position_score = nn.Linear(4 * dim, n_interests)
        # preference-guided gate over [item; preference] pairs
        self.gate_hidden = nn.Linear(2 * dim, dim, bias=False)
        self.gate_score = nn.Linear(dim, 1, bias=False)
        self.pool_bias = nn.Parameter(torch.empty(n_interests, dim))
        self.norm_out = nn.LayerNorm(dim)   # shared across the K interests

    def intention_assignment(self, emb: torch.Tensor,
                             mask: torch.Tensor) -> torch.Tensor:
        """Softmax over prototypes per position; pad columns zeroed."""
        projected = self.norm_items(self.assign_proj(emb))          # [B, L, d]
        anchors = self.norm_prototypes(self.prototypes)             # [K, d]
        logits = torch.matmul(projected, anchors.transpose(0, 1))   # [B, L, K]
        probs = torch.softmax(logits, dim=-1) * mask.unsqueeze(-1)
        return probs.transpose(1, 2)                                # [B, K, L]

    def position_weights(self, emb: torch.Tensor,
                         mask: torch.Tensor) -> torch.Tensor:
        """Per-prototype softmax over real positions."""
        hidden = torch.relu(self.position_hidden(emb))              # [B, L, 4d]
        logits = self.position_score(hidden).transpose(1, 2)        # [B, K, L]
        return masked_softmax(logits, mask.unsqueeze(1))

    def preference_guided_gate(self, emb: torch.Tensor, mask: torch.Tensor,
                               preference: torch.Tensor) -> torch.Tensor:
        """Sigmoid relevance of each item to the user's preference vector."""
        expanded = preference.unsqueeze(1).expand(-1, emb.shape[1], -1)
        paired = torch.cat([emb, expanded], dim=-1)                 # [B, L, 2d]
        gate = torch.sigmoid(self.gate_score(torch.tanh(self.gate_hidden(paired))))
        return gate.squeeze(-1) * mask                              # [B, L]

    def interest_embeddings(self, emb: torch.Tensor, assignment: torch.Tensor,
                            position: torch.Tensor,
                            gate: torch.Tensor) -> torch.Tensor:
        """Pool each prototype's weighted sub-sequence into one vector."""
        weights = assignment * position * gate.unsqueeze(1)         # [B, K, L]
        pooled = torch.matmul(weights, emb)                         # [B, K, d]
        return self.norm_out(pooled + self.pool_bias)

    def forward(self, emb: torch.Tensor, mask: torch.Tensor,
                preference: torch.Tensor | None = None) -> InterestSet:
        """Extract K interests; without a preference vector the gate is fixed at 1."""
        assignment = self.intention_assignment(emb, mask)
        position = self.position_weights(emb, mask)
        if preference is None:
            gate = mask.clone()
        else:
            gate = self.preference_guided_gate(emb, mask, preference)
        vectors = self.interest_embeddings(emb, assignment, position, gate)
        return InterestSet(vectors, assignment, position, gate)
