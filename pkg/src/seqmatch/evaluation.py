"""Holdout evaluation: Recall@N, NDCG@N and HR@N over ranked retrievals.

Every evaluation user contributes their first 80% of interactions for
inference and the trailing 20% as targets. Novelty mode drops recommended
items that share a category with the inference history, backfilling from the
filtered items so lists stay length N.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .aggregation import multi_interest_topn, topn_from_scores
from .checkpoint import Checkpoint, load_checkpoint, model_from_checkpoint
from .data import Catalog, Corpus, build_eval_sample, catalog_fingerprint
from .model import MatchingModel

MODES = ("standard", "novelty")


class CatalogMismatchError(ValueError):
    """Checkpoint was trained against a different catalog than the corpus."""


@dataclass
class EvalReport:
    mode: str
    split: str
    topn: int
    recall: float
    ndcg: float
    hr: float
    users_evaluated: int
    users_skipped: int


def metrics_for_user(ranked: list[int], targets: set[int],
                     n: int) -> tuple[float, float, float]:
    """(recall, ndcg, hr) of one ranked list against a target set."""
    if len(ranked) > n:
        raise ValueError("ranked list longer than N")
    if len(set(ranked)) != len(ranked):
        raise ValueError("ranked list contains duplicates")
    if not targets:
        raise ValueError("empty target set")
    hit_ranks = [r for r, item in enumerate(ranked, start=1) if item in targets]
    recall = len(hit_ranks) / len(targets)
    hr = 1.0 if hit_ranks else 0.0
    dcg = sum(1.0 / math.log2(r + 1) for r in hit_ranks)
    idcg = sum(1.0 / math.log2(r + 1) for r in range(1, min(n, len(targets)) + 1))
    return recall, dcg / idcg, hr


def novelty_filter(ranked_extended: list[int], history_categories: set[str],
                   catalog: Catalog, n: int) -> list[int]:
    """Keep items whose categories miss the history entirely, backfill to N.

    Both the novel block and the backfill block preserve the incoming rank
    order; uncategorized items count as novel.
    """
    novel, seen_before = [], []
    for item in ranked_extended:
        if catalog.item_categories[item].isdisjoint(history_categories):
            novel.append(item)
        else:
            seen_before.append(item)
    out = novel[:n]
    if len(out) < n:
        out = out + seen_before[:n - len(out)]
    return out


class ModelRetriever:
    """Ranks the catalog for one user history with a trained model."""

    def __init__(self, model: MatchingModel, variant: str = "full"):
        self.model = model
        self.variant = variant

    def _scores(self, history: list[int]) -> np.ndarray:
        """[V] matching scores, or [K, V] per-interest scores under no_gs."""
        max_len = self.model.config.max_len
        recent = history[-max_len:]
        prefix = torch.zeros(1, max_len, dtype=torch.int64)
        mask = torch.zeros(1, max_len, dtype=torch.bool)
        prefix[0, max_len - len(recent):] = torch.tensor(recent, dtype=torch.int64)
        mask[0, max_len - len(recent):] = True
        with torch.no_grad():
            item_emb = self.model.item_embeddings()
            if self.variant == "no_gs":
                interests = self.model.extract_interests(prefix, mask, None)
                return torch.matmul(interests.vectors[0], item_emb.T).numpy()
            fused = self.model(prefix, mask)
            return torch.matmul(fused[0], item_emb.T).numpy()

    def score_catalog(self, history: list[int]) -> np.ndarray:
        """Per-item score used for ranking (best interest wins under no_gs)."""
        scores = self._scores(history)
        return scores.max(axis=0) if scores.ndim == 2 else scores

    def __call__(self, history: list[int], exclude: set[int],
                 budget: int) -> list[int]:
        scores = self._scores(history)
        if scores.ndim == 2:
            return multi_interest_topn(scores, budget, exclude)
        return topn_from_scores(scores, budget, exclude)


class PopularityRetriever:
    """Static most-popular ranking from training interactions."""

    def __init__(self, ranking: list[int]):
        self.ranking = ranking

    def __call__(self, history: list[int], exclude: set[int],
                 budget: int) -> list[int]:
        out = []
        for item in self.ranking:
            if item in exclude:
                continue
            out.append(item)
            if len(out) == budget:
                break
        return out


def most_popular_baseline(corpus: Corpus) -> PopularityRetriever:
    """Rank items by training-split interaction count, ties by ascending index."""
    if corpus.split is None:
        raise ValueError("corpus has no split")
    counts: Counter[int] = Counter()
    for u in corpus.split.train_users:
        counts.update(corpus.sequences[u].items)
    ranking = sorted(range(corpus.catalog.item_count),
                     key=lambda item: (-counts[item], item))
    return PopularityRetriever(ranking)


def evaluate_split(retriever, corpus: Corpus, split: str, n: int = 50,
                   mode: str = "standard", max_len: int = 20,
                   holdout_fraction: float = 0.2) -> EvalReport:
    """Run the 80/20 holdout protocol for every user of one split."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
    if corpus.split is None:
        raise ValueError("corpus has no split")
    totals = np.zeros(3)
    evaluated = skipped = 0
    for u in corpus.split.users(split):
        sample = build_eval_sample(corpus.sequences[u], holdout_fraction, max_len)
        if sample is None:
            skipped += 1
            continue
        exclude = set(sample.history)
        if mode == "novelty":
            ranked = retriever(sample.history, exclude, 4 * n)
            history_cats = set().union(
                *(corpus.catalog.item_categories[i] for i in sample.history))
            ranked = novelty_filter(ranked, history_cats, corpus.catalog, n)
        else:
            ranked = retriever(sample.history, exclude, n)
        totals += metrics_for_user(ranked, sample.targets, n)
        evaluated += 1
    means = totals / evaluated if evaluated else totals
    return EvalReport(mode=mode, split=split, topn=n, recall=float(means[0]),
                      ndcg=float(means[1]), hr=float(means[2]),
                      users_evaluated=evaluated, users_skipped=skipped)


def evaluate_checkpoint(ckpt: Checkpoint | str | Path, corpus: Corpus,
                        split: str, n: int = 50,
                        mode: str = "standard") -> EvalReport:
    """Hash-checked evaluation of a stored model against a corpus."""
    if not isinstance(ckpt, Checkpoint):
        ckpt = load_checkpoint(ckpt)
    corpus_hash = catalog_fingerprint(corpus.catalog)
    if corpus_hash != ckpt.catalog_hash:
        raise CatalogMismatchError(
            f"checkpoint was trained on catalog {ckpt.catalog_hash[:12]}..., "
            f"corpus has {corpus_hash[:12]}...; refusing to evaluate")
    model = model_from_checkpoint(ckpt)
    retriever = ModelRetriever(model, ckpt.config.variant)
    return evaluate_split(retriever, corpus, split, n, mode,
                          max_len=ckpt.config.max_len)


REPORT_COLUMNS = ("mode", "split", "N", "recall", "ndcg", "hr",
                  "users_evaluated", "users_skipped")


def format_report(report: EvalReport) -> str:
    row = (report.mode, report.split, str(report.topn),
           f"{report.recall:.6f}", f"{report.ndcg:.6f}", f"{report.hr:.6f}",
           str(report.users_evaluated), str(report.users_skipped))
    return "\t".join(REPORT_COLUMNS) + "\n" + "\t".join(row) + "\n"


def write_report(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(format_report(report), encoding="utf-8")


def read_report(path: str | Path) -> EvalReport:
    header, row = Path(path).read_text(encoding="utf-8").splitlines()
    if tuple(header.split("\t")) != REPORT_COLUMNS:
        raise ValueError(f"{path}: unexpected report header")
    f = row.split("\t")
    return EvalReport(mode=f[0], split=f[1], topn=int(f[2]), recall=float(f[3]),
                      ndcg=float(f[4]), hr=float(f[5]),
                      users_evaluated=int(f[6]), users_skipped=int(f[7]))
