import dataclasses
import math

import numpy as np
import pytest
import torch

from seqmatch.aggregation import matching_distribution
from seqmatch.losses import (TrainConfig, ablation_variant, bpr_contrastive_loss,
                             sampled_softmax_loss, total_loss)
from seqmatch.model import MatchingModel, ModelConfig


def rand(shape, seed):
    return torch.tensor(np.random.default_rng(seed).normal(size=shape))


def toy_model(seed=0, **overrides):
    cfg = dict(item_count=20, dim=8, n_layers=2, n_interests=3, max_len=5)
    cfg.update(overrides)
    return MatchingModel(ModelConfig(**cfg), seed=seed).double()


def toy_batch(model, batch=6, seed=0):
    rng = np.random.default_rng(seed)
    length = model.config.max_len
    prefix = torch.zeros(batch, length, dtype=torch.int64)
    mask = torch.zeros(batch, length, dtype=torch.bool)
    for b in range(batch):
        n_real = int(rng.integers(1, length + 1))
        prefix[b, length - n_real:] = torch.tensor(
            rng.integers(0, model.config.item_count, size=n_real))
        mask[b, length - n_real:] = True
    targets = torch.tensor(rng.integers(0, model.config.item_count, size=batch))
    return prefix, mask, targets


class TestSampledSoftmaxLoss:
    def test_dominant_positive_drives_loss_to_zero(self):
        item_emb = torch.zeros(8, 4, dtype=torch.float64)
        item_emb[3] = torch.tensor([100.0, 0, 0, 0])
        user = torch.tensor([[1.0, 0, 0, 0]], dtype=torch.float64)
        loss = sampled_softmax_loss(user, torch.tensor([3]), item_emb, 5,
                                    np.random.default_rng(0))
        assert loss.item() < 1e-6

    def test_uniform_ten_way(self):
        item_emb = torch.ones(30, 4, dtype=torch.float64)   # every score equal
        user = rand((4, 4), seed=1)
        loss = sampled_softmax_loss(user, torch.tensor([0, 5, 9, 29]), item_emb,
                                    9, np.random.default_rng(1))
        assert loss.item() == pytest.approx(math.log(10), abs=1e-9)

    def test_all_negatives_equals_full_softmax(self):
        item_emb = rand((6, 5), seed=2)
        user = rand((3, 5), seed=3)
        targets = torch.tensor([0, 2, 5])
        loss = sampled_softmax_loss(user, targets, item_emb, 5,
                                    np.random.default_rng(2))
        probs = matching_distribution(user, item_emb)
        expected = -torch.log(probs[torch.arange(3), targets]).mean()
        assert loss.item() == pytest.approx(expected.item(), abs=1e-6)

    def test_catalog_too_small(self):
        with pytest.raises(ValueError, match="negatives"):
            sampled_softmax_loss(rand((1, 3), 4), torch.tensor([0]),
                                 rand((5, 3), 5), 5, np.random.default_rng(0))

    def test_negatives_never_hit_target(self):
        # degenerate catalog where only the target has nonzero score: if the
        # target ever leaked into the negatives, loss would be ln 2, not ~0
        item_emb = torch.zeros(12, 2, dtype=torch.float64)
        item_emb[7, 0] = 50.0
        user = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
        rng = np.random.default_rng(3)
        for _ in range(50):
            loss = sampled_softmax_loss(user, torch.tensor([7]), item_emb, 11, rng)
            assert loss.item() < 1e-6


class TestContrastiveLoss:
    def test_zero_margin(self):
        g = rand((4, 6), seed=6)
        other = rand((4, 6), seed=7)
        loss = bpr_contrastive_loss(g, other, other)
        assert loss.item() == pytest.approx(math.log(2), abs=1e-9)

    def test_unit_margin(self):
        anchor = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
        positive = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
        negative = torch.tensor([[0.0, 0.0]], dtype=torch.float64)
        loss = bpr_contrastive_loss(anchor, positive, negative)
        assert loss.item() == pytest.approx(math.log1p(math.exp(-1)), abs=1e-12)

    def test_saturated_margin_vanishes(self):
        anchor = torch.tensor([[40.0, 0.0]], dtype=torch.float64)
        loss = bpr_contrastive_loss(anchor, anchor, -anchor)
        assert loss.item() < 1e-9

    def test_rotation_invariance(self):
        rng = np.random.default_rng(8)
        q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
        rotation = torch.tensor(q)
        a, p, n = rand((3, 5), 9), rand((3, 5), 10), rand((3, 5), 11)
        base = bpr_contrastive_loss(a, p, n)
        rotated = bpr_contrastive_loss(a @ rotation, p @ rotation, n @ rotation)
        assert rotated.item() == pytest.approx(base.item(), rel=1e-10)


class TestTotalLoss:
    def test_degenerate_weights_reduce_to_main(self):
        model = toy_model(seed=1)
        prefix, mask, targets = toy_batch(model, seed=1)
        cfg = TrainConfig(dim=8, max_len=5, n_layers=2, n_interests=3,
                          alpha_reg=0.0, beta_cl=0.0)
        breakdown = total_loss(model, prefix, mask, targets, cfg,
                               np.random.default_rng(4))
        assert breakdown.total.item() == breakdown.main.item()

    def test_repeated_call_bit_identical(self):
        model = toy_model(seed=2)
        prefix, mask, targets = toy_batch(model, seed=2)
        cfg = TrainConfig(dim=8, max_len=5, n_layers=2, n_interests=3)
        first = total_loss(model, prefix, mask, targets, cfg,
                           np.random.default_rng(5))
        second = total_loss(model, prefix, mask, targets, cfg,
                            np.random.default_rng(5))
        for field in ("main", "aux", "contrastive", "total"):
            assert getattr(first, field).item() == getattr(second, field).item()

    def test_weighted_sum_linearity(self):
        model = toy_model(seed=3)
        prefix, mask, targets = toy_batch(model, seed=3)
        rng_weights = np.random.default_rng(6)
        for _ in range(5):
            cfg = TrainConfig(dim=8, max_len=5, n_layers=2, n_interests=3,
                              alpha_reg=float(rng_weights.uniform(0, 2)),
                              beta_cl=float(rng_weights.uniform(0, 2)))
            b = total_loss(model, prefix, mask, targets, cfg,
                           np.random.default_rng(7))
            expected = b.main + cfg.alpha_reg * b.aux + cfg.beta_cl * b.contrastive
            assert b.total.item() == expected.item()

    def test_all_terms_nonnegative(self):
        model = toy_model(seed=4)
        prefix, mask, targets = toy_batch(model, seed=4)
        cfg = TrainConfig(dim=8, max_len=5, n_layers=2, n_interests=3)
        b = total_loss(model, prefix, mask, targets, cfg, np.random.default_rng(8))
        assert b.main.item() >= 0
        assert b.aux.item() >= 0
        assert b.contrastive.item() >= 0

    def test_gradient_reaches_every_parameter(self):
        model = toy_model(seed=5)
        prefix, mask, targets = toy_batch(model, batch=8, seed=5)
        cfg = TrainConfig(dim=8, max_len=5, n_layers=2, n_interests=3,
                          learning_rate=0.01)
        before = {k: v.clone() for k, v in model.state_dict().items()}
        optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
        b = total_loss(model, prefix, mask, targets, cfg, np.random.default_rng(9))
        optimizer.zero_grad()
        b.total.backward()
        optimizer.step()
        for name, after in model.state_dict().items():
            if name == "item_emb.weight":
                assert torch.equal(after[0], before[name][0])   # pad row frozen
                assert not torch.equal(after[1:], before[name][1:])
            else:
                assert not torch.equal(after, before[name]), name

    def test_single_row_batch_skips_contrastive(self):
        model = toy_model(seed=6)
        prefix, mask, targets = toy_batch(model, batch=1, seed=6)
        cfg = TrainConfig(dim=8, max_len=5, n_layers=2, n_interests=3)
        b = total_loss(model, prefix, mask, targets, cfg, np.random.default_rng(10))
        assert b.contrastive.item() == 0.0


class TestAblationVariant:
    def test_full_is_identity(self):
        cfg = TrainConfig()
        assert ablation_variant(cfg, "full") == cfg

    def test_no_cl_only_drops_contrastive_weight(self):
        cfg = TrainConfig(beta_cl=0.4, alpha_reg=0.1)
        ablated = ablation_variant(cfg, "no_cl")
        assert ablated.beta_cl == 0.0
        assert dataclasses.replace(ablated, beta_cl=0.4, variant="full") == cfg

    def test_no_gs_drops_contrastive_too(self):
        ablated = ablation_variant(TrainConfig(), "no_gs")
        assert ablated.variant == "no_gs"
        assert ablated.beta_cl == 0.0

    def test_unknown_variant(self):
        with pytest.raises(ValueError, match="unknown variant"):
            ablation_variant(TrainConfig(), "no_everything")

    def test_no_gs_uses_target_selected_interest(self):
        model = toy_model(seed=7)
        prefix, mask, targets = toy_batch(model, batch=4, seed=7)
        cfg = ablation_variant(TrainConfig(dim=8, max_len=5, n_layers=2,
                                           n_interests=3, n_negatives=19), "no_gs")
        b = total_loss(model, prefix, mask, targets, cfg, np.random.default_rng(11))
        assert b.contrastive.item() == 0.0

        # reference: gate fixed at 1, per-sample argmax interest, full softmax
        with torch.no_grad():
            interests = model.extract_interests(prefix, mask, None)
            item_emb = model.item_embeddings()
            sims = torch.matmul(interests.vectors,
                                item_emb[targets].unsqueeze(-1)).squeeze(-1)
            picked = interests.vectors[torch.arange(4), sims.argmax(dim=1)]
            probs = matching_distribution(picked, item_emb)
            expected = -torch.log(probs[torch.arange(4), targets]).mean()
        assert b.main.item() == pytest.approx(expected.item(), abs=1e-9)
