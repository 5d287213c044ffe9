"""Whole-sequence preference encoder.

A stack of single-head self-attention blocks with residual connections feeds
an attentive readout that pools the raw item embeddings into one preference
vector per user. Pad positions are kept exactly zero after every block so the
readout only ever sees real items.
"""

from __future__ import annotations

import torch
from torch import nn

# Finite stand-in for -inf attention logits: exp() underflows to exactly 0
# without producing NaN rows when every key is padded.
NEG_LOGIT = -1e30


def masked_softmax(logits: torch.Tensor, mask: torch.Tensor,
                   dim: int = -1) -> torch.Tensor:
    """Softmax over positions where mask is 1; exact zeros elsewhere.

    Rows with no real position come out all-zero rather than NaN.
    """
    filled = logits.masked_fill(mask == 0, NEG_LOGIT)
    return torch.softmax(filled, dim=dim) * mask


class SelfAttention(nn.Module):
    """Single-head scaled dot-product attention over one sequence."""

    def __init__(self, dim: int):
        super().__init__()
        self.query = nn.Linear(dim, dim, bias=False)
        self.key = nn.Linear(dim, dim, bias=False)
        self.value = nn.Linear(dim, dim, bias=False)
        self.scale = dim ** -0.5

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        # x: [B, L, d], mask: [B, L] with 1 at real positions
        q, k, v = self.query(x), self.key(x), self.value(x)
        logits = torch.matmul(q, k.transpose(1, 2)) * self.scale   # [B, L, L]
        attn = masked_softmax(logits, mask.unsqueeze(1))           # keys masked
        out = torch.matmul(attn, v)                                # [B, L, d]
        return out * mask.unsqueeze(-1)                            # pad rows -> 0


class PreferenceEncoder(nn.Module):
    """Residual self-attention stack plus attentive readout over positions."""

    def __init__(self, dim: int, n_layers: int):
        super().__init__()
        if n_layers < 1:
            raise ValueError("need at least one residual layer")
        self.dim = dim
        self.n_layers = n_layers
        self.attention = nn.ModuleList(SelfAttention(dim) for _ in range(n_layers))
        self.residual = nn.ModuleList(nn.Linear(dim, dim) for _ in range(n_layers))
        self.readout_hidden = nn.Linear(n_layers * dim, dim, bias=False)
        self.readout_score = nn.Linear(dim, 1, bias=False)

    def residual_stack(self, emb: torch.Tensor,
                       mask: torch.Tensor) -> list[torch.Tensor]:
        """Hidden states of every block; pad rows re-zeroed layer by layer."""
        states = []
        h = emb
        for attend, project in zip(self.attention, self.residual):
            h = torch.relu(project(attend(h, mask))) + h
            h = h * mask.unsqueeze(-1)
            states.append(h)
        return states

    def attentive_readout(self, states: list[torch.Tensor], emb: torch.Tensor,
                          mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Position weights over real items and the pooled preference vector."""
        if not bool((mask.sum(dim=1) > 0).all()):
            raise ValueError("empty sequence: readout needs at least one real item")
        concat = torch.cat(states, dim=-1)                          # [B, L, S*d]
        scores = self.readout_score(torch.tanh(self.readout_hidden(concat)))
        weights = masked_softmax(scores.squeeze(-1), mask)          # [B, L]
        pooled = torch.matmul(weights.unsqueeze(1), emb).squeeze(1)  # [B, d]
        return weights, pooled

    def forward(self, emb: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        states = self.residual_stack(emb, mask)
        _, pooled = self.attentive_readout(states, emb, mask)
        return pooled
