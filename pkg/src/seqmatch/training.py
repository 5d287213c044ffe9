"""Adam training loop with per-epoch validation recall and early stopping."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import torch

from .checkpoint import Checkpoint, snapshot
from .data import Corpus, catalog_fingerprint, expand_training_samples
from .evaluation import ModelRetriever, evaluate_split
from .losses import TrainConfig, total_loss
from .model import MatchingModel, ModelConfig

VALID_TOPN = 50   # early-stopping metric is Recall@50 on validation users


class TrainingDivergedError(RuntimeError):
    """A loss term went non-finite; names the offending term."""


@dataclass
class EpochStats:
    epoch: int
    main: float
    aux: float
    contrastive: float
    total: float
    valid_recall: float
    seconds: float


@dataclass
class TrainResult:
    best: Checkpoint
    final: Checkpoint
    log: list[EpochStats]
    best_epoch: int
    best_valid_recall: float


def format_training_log(log: list[EpochStats]) -> str:
    """One tab-separated line per epoch: epoch, the three loss terms, their
    weighted total, validation Recall@50, and wall-clock seconds."""
    lines = [f"{e.epoch}\t{e.main:.6f}\t{e.aux:.6f}\t{e.contrastive:.6f}"
             f"\t{e.total:.6f}\t{e.valid_recall:.6f}\t{e.seconds:.3f}"
             for e in log]
    return "\n".join(lines) + "\n"


def build_model(config: TrainConfig, item_count: int) -> MatchingModel:
    return MatchingModel(ModelConfig(
        item_count=item_count, dim=config.dim, n_layers=config.n_layers,
        n_interests=config.n_interests, max_len=config.max_len, tau=config.tau),
        seed=config.seed)


def _training_matrix(corpus: Corpus, config: TrainConfig
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    prefixes, masks, targets = [], [], []
    for u in corpus.split.train_users:
        samples = expand_training_samples(corpus.sequences[u], config.max_len)
        if config.max_samples_per_user is not None:
            samples = samples[-config.max_samples_per_user:]
        for s in samples:
            prefixes.append(s.prefix)
            masks.append(s.mask)
            targets.append(s.target)
    if not targets:
        raise ValueError("no training samples: every training user is too short")
    return (np.stack(prefixes), np.stack(masks),
            np.asarray(targets, dtype=np.int64))


def train(corpus: Corpus, config: TrainConfig) -> TrainResult:
    """Train until validation Recall@50 stalls for ``patience_epochs`` epochs.

    Deterministic for a fixed config: batch order, negative draws and shuffle
    augmentations all come from one seeded generator.
    """
    if corpus.split is None:
        raise ValueError("corpus has no train/valid/test split")
    prefixes, masks, targets = _training_matrix(corpus, config)
    model = build_model(config, corpus.catalog.item_count)
    cat_hash = catalog_fingerprint(corpus.catalog)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    retriever = ModelRetriever(model, config.variant)

    log: list[EpochStats] = []
    best_recall = -1.0
    best_epoch = 0
    best: Checkpoint | None = None
    n = len(targets)
    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(n)
        sums = np.zeros(4)
        used = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            if idx.size == 1 and start > 0:
                continue   # a lone trailing sample cannot form negative pairs
            batch = total_loss(model,
                               torch.from_numpy(prefixes[idx]),
                               torch.from_numpy(masks[idx]),
                               torch.from_numpy(targets[idx]),
                               config, rng)
            for name, value in (("main", batch.main), ("aux", batch.aux),
                                ("contrastive", batch.contrastive)):
                if not bool(torch.isfinite(value)):
                    raise TrainingDivergedError(
                        f"non-finite {name} loss at epoch {epoch}")
            optimizer.zero_grad()
            batch.total.backward()
            optimizer.step()
            sums += idx.size * np.array([batch.main.item(), batch.aux.item(),
                                         batch.contrastive.item(),
                                         batch.total.item()])
            used += idx.size
        means = sums / used
        valid = evaluate_split(retriever, corpus, "valid", VALID_TOPN,
                               "standard", max_len=config.max_len)
        log.append(EpochStats(epoch, means[0], means[1], means[2], means[3],
                              valid.recall, time.perf_counter() - started))
        if valid.recall > best_recall:
            best_recall = valid.recall
            best_epoch = epoch
            best = snapshot(model, config, cat_hash)
        if epoch - best_epoch >= config.patience_epochs:
            break
    return TrainResult(best=best, final=snapshot(model, config, cat_hash),
                       log=log, best_epoch=best_epoch,
                       best_valid_recall=best_recall)
