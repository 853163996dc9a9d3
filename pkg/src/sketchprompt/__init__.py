"""Sketch-photo retrieval with a frozen dual encoder and bidirectional
layer-wise prompt exchange, trained on procedural paired data."""

from .autodiff import Parameter, Tensor, grad_check
from .config import RunConfig, derive_seed, parse_config
from .data import (DEFAULT_CLASSES, Dataset, DatasetSplit, default_class_specs,
                   generate_pair, make_splits, sample_triplet_batch)
from .encoders import (ModelDims, TextEncoder, TokenizationError, Tokenizer,
                       VisionEncoder)
from .jigsaw import JigsawSolver, PermutationTable, build_table, fuse, shuffle
from .losses import (LossConfig, adaptive_margin, cjs_loss,
                     classification_loss, total_loss, triplet_loss)
from .model import PROMPTING_MODES, SketchPhotoModel, template_for
from .prompting import (PromptBundle, TextualToVisualMapper,
                        VisionTextConjunction, VisualToTextualMapper)
from .retrieval import (EmbeddingGallery, InferenceContractError,
                        MetricsReport, average_precision, embed_gallery,
                        embed_images, evaluate, expected_random_ap,
                        frechet_distance, precision_at_k, random_map_stats,
                        rank)
from .train import Adam, TrainConfig, Trainer, TrainingError

__version__ = "0.1.0"
