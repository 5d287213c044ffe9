"""Interaction-log ingestion, corpus building, splits, and sample construction.

The raw input format is one interaction per line, UTF-8:

    user_id<TAB>item_id<TAB>timestamp<TAB>category_id

where ``category_id`` may be empty. A prepared corpus directory holds three
tab-separated files: ``catalog.tsv`` (item_index, item_id, pipe-separated
categories), ``sequences.tsv`` (user_index, comma-separated item indices,
time-ordered) and ``split.tsv`` (user_index, train/valid/test).
"""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class CorpusError(ValueError):
    """Raised for malformed input files or degenerate corpora."""


@dataclass(frozen=True)
class Interaction:
    user_id: str
    item_id: str
    timestamp: int
    category_id: str = ""


@dataclass
class Catalog:
    """Dense item index space plus per-item category sets."""

    item_ids: list[str]                 # index -> raw id
    item_index: dict[str, int]          # raw id -> index
    item_categories: list[set[str]]     # index -> category set (may be empty)
    user_count: int

    @property
    def item_count(self) -> int:
        return len(self.item_ids)


@dataclass
class UserSequence:
    """One user's interacted item indices in ascending time order."""

    user_index: int
    items: list[int]

    @property
    def length(self) -> int:
        return len(self.items)


@dataclass
class DatasetSplit:
    train_users: list[int]
    valid_users: list[int]
    test_users: list[int]

    def users(self, name: str) -> list[int]:
        try:
            return {"train": self.train_users,
                    "valid": self.valid_users,
                    "test": self.test_users}[name]
        except KeyError:
            raise ValueError(f"unknown split {name!r}") from None


@dataclass
class TrainingSample:
    """Fixed-length left-padded prefix predicting the next item.

    Pad positions carry 0 and are marked False in ``mask``; only the trailing
    ``mask.sum()`` entries are real items, most recent last.
    """

    prefix: np.ndarray   # (max_len,) int64
    mask: np.ndarray     # (max_len,) bool
    target: int


@dataclass
class EvalSample:
    history: list[int]   # first 80%, truncated to the most recent max_len
    targets: set[int]    # last 20%


@dataclass
class Corpus:
    catalog: Catalog
    sequences: list[UserSequence]
    split: DatasetSplit | None = None

    @property
    def interaction_count(self) -> int:
        return sum(s.length for s in self.sequences)


def load_interactions(path: str | Path) -> list[Interaction]:
    """Parse a raw interaction file, preserving line order, no filtering."""
    out: list[Interaction] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\r\n").split("\t")
            if len(parts) != 4:
                raise CorpusError(
                    f"{path}: line {lineno}: expected 4 tab-separated fields, got {len(parts)}")
            user_id, item_id, ts_raw, category_id = parts
            if not user_id or not item_id:
                raise CorpusError(f"{path}: line {lineno}: empty user_id or item_id")
            try:
                timestamp = int(ts_raw)
            except ValueError:
                raise CorpusError(
                    f"{path}: line {lineno}: bad timestamp {ts_raw!r}") from None
            if timestamp < 0:
                raise CorpusError(f"{path}: line {lineno}: negative timestamp")
            out.append(Interaction(user_id, item_id, timestamp, category_id))
    return out


def build_corpus(interactions: list[Interaction],
                 min_feedback: int = 3) -> tuple[Catalog, list[UserSequence]]:
    """Filter sparse users/items to a fixed point and densify indices.

    Items with fewer than ``min_feedback`` surviving interactions are dropped,
    then users, alternating until neither pass removes anything. One pass in
    each direction can strand sub-threshold users, hence the loop. Indices are
    assigned by first appearance among surviving rows, in file order.
    """
    if min_feedback < 1:
        raise ValueError("min_feedback must be >= 1")
    rows = list(enumerate(interactions))   # keep file position for tie-breaks
    while True:
        item_counts = Counter(r.item_id for _, r in rows)
        kept = [(i, r) for i, r in rows if item_counts[r.item_id] >= min_feedback]
        user_counts = Counter(r.user_id for _, r in kept)
        kept = [(i, r) for i, r in kept if user_counts[r.user_id] >= min_feedback]
        if len(kept) == len(rows):
            break
        rows = kept
    if not rows:
        raise CorpusError("corpus empty after filtering")

    item_index: dict[str, int] = {}
    item_ids: list[str] = []
    user_index: dict[str, int] = {}
    per_user: list[list[tuple[int, int, int]]] = []   # (timestamp, file_pos, item)
    categories: list[set[str]] = []
    for pos, r in rows:
        if r.item_id not in item_index:
            item_index[r.item_id] = len(item_ids)
            item_ids.append(r.item_id)
            categories.append(set())
        if r.category_id:
            categories[item_index[r.item_id]].add(r.category_id)
        if r.user_id not in user_index:
            user_index[r.user_id] = len(per_user)
            per_user.append([])
        per_user[user_index[r.user_id]].append((r.timestamp, pos, item_index[r.item_id]))

    sequences = []
    for uidx, entries in enumerate(per_user):
        entries.sort(key=lambda e: (e[0], e[1]))
        sequences.append(UserSequence(uidx, [item for _, _, item in entries]))
    catalog = Catalog(item_ids, item_index, categories, user_count=len(sequences))
    return catalog, sequences


def split_users(catalog: Catalog, seed: int) -> DatasetSplit:
    """Deterministic 8:1:1 user split; sizes within one of exact proportions."""
    n = catalog.user_count
    if n < 10:
        raise ValueError(f"need at least 10 users to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(n * 0.8)
    n_valid = int(n * 0.1)
    return DatasetSplit(
        train_users=sorted(int(u) for u in perm[:n_train]),
        valid_users=sorted(int(u) for u in perm[n_train:n_train + n_valid]),
        test_users=sorted(int(u) for u in perm[n_train + n_valid:]),
    )


def expand_training_samples(sequence: UserSequence,
                            max_len: int = 20) -> list[TrainingSample]:
    """One sample per predictable position: prefix of the t-1 latest items -> item t."""
    items = sequence.items
    samples: list[TrainingSample] = []
    for t in range(2, len(items) + 1):
        real = items[max(0, t - 1 - max_len):t - 1]
        prefix = np.zeros(max_len, dtype=np.int64)
        mask = np.zeros(max_len, dtype=bool)
        prefix[max_len - len(real):] = real
        mask[max_len - len(real):] = True
        samples.append(TrainingSample(prefix, mask, items[t - 1]))
    return samples


def shuffle_augment(prefix: np.ndarray, mask: np.ndarray,
                    seed: int | np.random.Generator) -> np.ndarray:
    """Permute the real items uniformly at random; pad positions untouched."""
    rng = np.random.default_rng(seed)
    out = prefix.copy()
    real = np.flatnonzero(mask)
    out[real] = prefix[real][rng.permutation(real.size)]
    return out


def in_batch_negative(batch: np.ndarray) -> np.ndarray:
    """Pair each row with the next one (circularly) as its negative."""
    if len(batch) < 2:
        raise ValueError("in-batch negatives need a batch of at least 2")
    return np.roll(batch, -1, axis=0)


def build_eval_sample(sequence: UserSequence, holdout_fraction: float = 0.2,
                      max_len: int = 20) -> EvalSample | None:
    """Hold out the trailing ceil(fraction * len) items as targets.

    Returns None for sequences too short to evaluate (< 2 items); callers
    count those as skipped.
    """
    items = sequence.items
    if len(items) < 2:
        return None
    n_targets = math.ceil(holdout_fraction * len(items))
    history = items[:len(items) - n_targets]
    return EvalSample(history=history[-max_len:], targets=set(items[-n_targets:]))


@dataclass
class SynthConfig:
    """Cluster-structured corpus for desk-scale verification runs."""

    n_users: int = 500
    n_items: int = 200
    n_clusters: int = 4
    min_len: int = 10
    max_len: int = 30
    seed: int = 7
    # Dirichlet concentration for per-user cluster mixtures; < 1 skews users
    # toward a dominant cluster, giving retrieval a clear signal to learn.
    concentration: float = 0.8


def generate_synthetic(config: SynthConfig) -> tuple[Catalog, list[UserSequence]]:
    """Sample users who draw items cluster-first from a 2-3 cluster mixture.

    Items are partitioned into ``n_clusters`` contiguous blocks; the block id
    doubles as the item's category, so the catalog's category map records the
    generator's cluster assignments exactly.
    """
    if config.n_clusters < 2:
        raise ValueError("need >= 2 clusters")
    if config.min_len < 1 or config.max_len < config.min_len:
        raise ValueError("bad sequence length range")
    rng = np.random.default_rng(config.seed)
    k = config.n_clusters
    bounds = [(c * config.n_items // k, (c + 1) * config.n_items // k)
              for c in range(k)]

    item_ids = [f"i{idx:05d}" for idx in range(config.n_items)]
    categories: list[set[str]] = []
    for c, (lo, hi) in enumerate(bounds):
        categories.extend({f"c{c}"} for _ in range(lo, hi))
    catalog = Catalog(item_ids, {vid: i for i, vid in enumerate(item_ids)},
                      categories, user_count=config.n_users)

    sequences = []
    for uidx in range(config.n_users):
        m = int(rng.integers(2, min(3, k) + 1))   # 2 or 3 clusters per user
        clusters = rng.choice(k, size=m, replace=False)
        weights = rng.dirichlet([config.concentration] * m)
        length = int(rng.integers(config.min_len, config.max_len + 1))
        items = []
        for _ in range(length):
            lo, hi = bounds[int(clusters[rng.choice(m, p=weights)])]
            items.append(int(rng.integers(lo, hi)))
        sequences.append(UserSequence(uidx, items))
    return catalog, sequences


def catalog_tsv(catalog: Catalog) -> str:
    lines = []
    for idx, item_id in enumerate(catalog.item_ids):
        cats = "|".join(sorted(catalog.item_categories[idx]))
        lines.append(f"{idx}\t{item_id}\t{cats}")
    return "\n".join(lines) + "\n"


def sequences_tsv(sequences: list[UserSequence]) -> str:
    lines = [f"{s.user_index}\t{','.join(map(str, s.items))}" for s in sequences]
    return "\n".join(lines) + "\n"


def split_tsv(split: DatasetSplit) -> str:
    labels: dict[int, str] = {}
    for name in ("train", "valid", "test"):
        for u in split.users(name):
            labels[u] = name
    lines = [f"{u}\t{labels[u]}" for u in sorted(labels)]
    return "\n".join(lines) + "\n"


def catalog_fingerprint(catalog: Catalog) -> str:
    """Hash tying checkpoints to the exact item index space they were trained on."""
    return hashlib.sha256(catalog_tsv(catalog).encode("utf-8")).hexdigest()


def save_corpus(corpus: Corpus, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "catalog.tsv").write_text(catalog_tsv(corpus.catalog), encoding="utf-8")
    (out / "sequences.tsv").write_text(sequences_tsv(corpus.sequences), encoding="utf-8")
    if corpus.split is not None:
        (out / "split.tsv").write_text(split_tsv(corpus.split), encoding="utf-8")


def load_corpus(corpus_dir: str | Path) -> Corpus:
    root = Path(corpus_dir)

    item_ids: list[str] = []
    categories: list[set[str]] = []
    for lineno, line in enumerate(
            (root / "catalog.tsv").read_text(encoding="utf-8").splitlines(), 1):
        idx_raw, item_id, cats = line.split("\t")
        if int(idx_raw) != len(item_ids):
            raise CorpusError(f"catalog.tsv line {lineno}: non-dense item index")
        item_ids.append(item_id)
        categories.append(set(cats.split("|")) if cats else set())

    sequences: list[UserSequence] = []
    for lineno, line in enumerate(
            (root / "sequences.tsv").read_text(encoding="utf-8").splitlines(), 1):
        uidx_raw, items_raw = line.split("\t")
        if int(uidx_raw) != len(sequences):
            raise CorpusError(f"sequences.tsv line {lineno}: non-dense user index")
        sequences.append(UserSequence(int(uidx_raw),
                                      [int(x) for x in items_raw.split(",")]))

    catalog = Catalog(item_ids, {vid: i for i, vid in enumerate(item_ids)},
                      categories, user_count=len(sequences))

    split = None
    split_path = root / "split.tsv"
    if split_path.exists():
        buckets: dict[str, list[int]] = {"train": [], "valid": [], "test": []}
        for line in split_path.read_text(encoding="utf-8").splitlines():
            uidx_raw, name = line.split("\t")
            if name not in buckets:
                raise CorpusError(f"split.tsv: unknown split label {name!r}")
            buckets[name].append(int(uidx_raw))
        split = DatasetSplit(buckets["train"], buckets["valid"], buckets["test"])
    return Corpus(catalog, sequences, split)
