import numpy as np
import pytest
import torch

from seqmatch.aggregation import (aggregate_interests, matching_distribution,
                                  multi_interest_topn, score_items,
                                  topn_from_scores)


def rand(shape, seed):
    return torch.tensor(np.random.default_rng(seed).normal(size=shape))


class TestAggregateInterests:
    def test_single_interest_identity(self):
        vectors = rand((1, 1, 5), seed=0)
        weights, fused = aggregate_interests(vectors, rand((1, 5), seed=1))
        assert torch.equal(weights, torch.ones(1, 1, dtype=torch.float64))
        assert torch.equal(fused, vectors[:, 0])

    def test_equal_similarities_average(self):
        pref = torch.zeros(1, 4, dtype=torch.float64)   # all inner products 0
        vectors = rand((1, 3, 4), seed=2)
        weights, fused = aggregate_interests(vectors, pref, tau=0.1)
        assert torch.allclose(weights, torch.full((1, 3), 1 / 3).double())
        assert torch.allclose(fused, vectors.mean(dim=1))

    def test_low_temperature_snaps_to_argmax(self):
        vectors = rand((1, 4, 6), seed=3)
        pref = rand((1, 6), seed=4)
        sims = torch.matmul(vectors, pref.unsqueeze(-1)).squeeze(-1)
        best = int(sims.argmax())
        weights, fused = aggregate_interests(vectors, pref, tau=1e-6)
        assert weights[0, best].item() == pytest.approx(1.0, abs=1e-9)
        assert torch.allclose(fused[0], vectors[0, best], atol=1e-6)

    def test_nonpositive_temperature_rejected(self):
        with pytest.raises(ValueError):
            aggregate_interests(rand((1, 2, 3), 5), rand((1, 3), 6), tau=0.0)

    def test_weights_normalized_and_positive(self):
        for seed in range(10):
            weights, _ = aggregate_interests(rand((2, 5, 4), seed),
                                             rand((2, 4), seed + 100), tau=0.1)
            assert torch.allclose(weights.sum(dim=1), torch.ones(2).double(),
                                  atol=1e-6)
            assert bool((weights > 0).all())

    def test_fused_vector_in_convex_hull(self):
        vectors = rand((1, 3, 3), seed=7)
        weights, fused = aggregate_interests(vectors, rand((1, 3), seed=8),
                                             tau=1.0)
        coeff, *_ = np.linalg.lstsq(vectors[0].numpy().T,
                                    fused[0].detach().numpy(), rcond=None)
        assert np.allclose(coeff, weights[0].detach().numpy(), atol=1e-8)
        assert np.all(coeff > 0) and coeff.sum() == pytest.approx(1.0, abs=1e-8)

    def test_sharpening_monotone_in_temperature(self):
        vectors = rand((1, 4, 5), seed=9)
        pref = rand((1, 5), seed=10)
        peaks = []
        for tau in (10.0, 1.0, 0.5, 0.1, 0.01):
            weights, _ = aggregate_interests(vectors, pref, tau=tau)
            peaks.append(weights.max().item())
        assert all(a <= b + 1e-12 for a, b in zip(peaks, peaks[1:]))


class TestScoreItems:
    def test_zero_user_vector(self):
        scores = score_items(torch.zeros(4, dtype=torch.float64), rand((7, 4), 11))
        assert not scores.abs().any()

    def test_hand_inner_products(self):
        item_emb = torch.tensor([[1.0, 0.0], [0.0, 2.0], [-1.0, 1.0]],
                                dtype=torch.float64)
        user = torch.tensor([3.0, 0.5], dtype=torch.float64)
        assert score_items(user, item_emb).tolist() == [3.0, 1.0, -2.5]

    def test_candidate_subset(self):
        item_emb = rand((9, 3), seed=12)
        user = rand((3,), seed=13)
        subset = torch.tensor([2, 5, 7])
        assert torch.equal(score_items(user, item_emb, subset),
                           score_items(user, item_emb)[subset])

    def test_top1_matches_full_softmax_argmax(self):
        for seed in range(5):
            item_emb = rand((20, 4), seed=seed)
            user = rand((4,), seed=seed + 50)
            scores = score_items(user, item_emb)
            probs = matching_distribution(user, item_emb)
            assert probs.sum().item() == pytest.approx(1.0, abs=1e-9)
            assert int(scores.argmax()) == int(probs.argmax())


def sort_oracle(scores, n, exclude):
    eligible = [i for i in range(len(scores)) if i not in exclude]
    eligible.sort(key=lambda i: (-scores[i], i))
    return eligible[:n]


class TestTopN:
    def test_full_catalog_is_permutation(self):
        scores = np.random.default_rng(14).normal(size=12)
        assert sorted(topn_from_scores(scores, 12)) == list(range(12))

    def test_forced_choice(self):
        scores = np.random.default_rng(15).normal(size=6)
        assert topn_from_scores(scores, 3, exclude=set(range(6)) - {4}) == [4]

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(16)
        for _ in range(100):
            scores = rng.normal(size=50)
            exclude = set(map(int, rng.choice(50, size=rng.integers(0, 20),
                                              replace=False)))
            assert topn_from_scores(scores, 5, exclude) == \
                sort_oracle(scores, 5, exclude)

    def test_exclusion_consistency(self):
        rng = np.random.default_rng(17)
        scores = rng.normal(size=30)
        exclude = {1, 2, 3}
        out = topn_from_scores(scores, 8, exclude)
        assert not exclude & set(out)
        # dropping a non-returned item cannot change the list
        unreturned = next(i for i in range(30) if i not in out and i not in exclude)
        assert topn_from_scores(scores, 8, exclude | {unreturned}) == out

    def test_ties_broken_by_index(self):
        scores = np.array([1.0, 2.0, 2.0, 1.0, 2.0])
        assert topn_from_scores(scores, 5) == [1, 2, 4, 0, 3]

    def test_short_catalog_returns_all(self):
        scores = np.array([0.5, -0.5, 1.5])
        assert topn_from_scores(scores, 10) == [2, 0, 1]


def union_rerank_oracle(scores, n, exclude):
    pool = set()
    for row in scores:
        pool.update(sort_oracle(row, n, exclude))
    best = {i: max(row[i] for row in scores) for i in pool}
    return sorted(pool, key=lambda i: (-best[i], i))[:n]


class TestMultiInterestTopN:
    def test_matches_union_rerank_oracle(self):
        rng = np.random.default_rng(18)
        for _ in range(50):
            scores = rng.normal(size=(3, 25))
            exclude = set(map(int, rng.choice(25, size=5, replace=False)))
            n = int(rng.integers(1, 10))
            assert multi_interest_topn(scores, n, exclude) == \
                union_rerank_oracle(scores, n, exclude)

    def test_never_returns_excluded(self):
        scores = np.random.default_rng(19).normal(size=(2, 10))
        out = multi_interest_topn(scores, 10, exclude={0, 5})
        assert set(out) == set(range(10)) - {0, 5}
