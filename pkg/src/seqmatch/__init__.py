"""Matching-stage sequential recommender with dual-granularity user modeling.

One encoder pools the whole interaction sequence into a stable preference
vector (trained with an order-shuffling contrastive task); a second extracts
several fine-grained interest vectors from prototype-clustered sub-sequences.
A temperature softmax fuses the interests under the preference signal, and
items are retrieved by inner product against a shared embedding table.
"""

from .aggregation import (aggregate_interests, matching_distribution,
                          multi_interest_topn, score_items, topn_from_scores)
from .checkpoint import (Checkpoint, load_checkpoint, model_from_checkpoint,
                         save_checkpoint, snapshot)
from .data import (Catalog, Corpus, CorpusError, DatasetSplit, EvalSample,
                   Interaction, SynthConfig, TrainingSample, UserSequence,
                   build_corpus, build_eval_sample, catalog_fingerprint,
                   expand_training_samples, generate_synthetic,
                   in_batch_negative, load_corpus, load_interactions,
                   save_corpus, shuffle_augment, split_users)
from .encoder import PreferenceEncoder, SelfAttention, masked_softmax
from .evaluation import (CatalogMismatchError, EvalReport, ModelRetriever,
                         PopularityRetriever, evaluate_checkpoint,
                         evaluate_split, metrics_for_user,
                         most_popular_baseline, novelty_filter, read_report,
                         write_report)
from .interests import InterestExtractor, InterestSet, orthogonality_penalty
from .losses import (LossBreakdown, TrainConfig, ablation_variant,
                     bpr_contrastive_loss, sampled_softmax_loss, total_loss)
from .model import MatchingModel, ModelConfig
from .training import (EpochStats, TrainingDivergedError, TrainResult,
                       format_training_log, train)

__version__ = "0.1.0"
