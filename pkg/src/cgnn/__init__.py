"""Noise-robust semi-supervised node classification on graphs.

Message-passing node encoding, a cross-view contrastive regularizer, and
neighborhood-based detection and correction of noisy training labels,
plus the synthetic-data and multi-seed experiment harness around them.
"""

from .augment import AugmentConfig, drop_edges, make_views, mask_attributes
from .correction import (CorrectionConfig, CorrectionRecord, correct_labels,
                         effective_labels, majority_label, similarity_consistency)
from .encoder import EncoderConfig, ModelParams, encode, init_params, predict
from .graph import (AttributeMatrix, Dataset, Graph, LabelStore, UNLABELED,
                    load_dataset, make_split, neighbors, write_dataset)
from .noise import NoiseSpec, SynthSpec, gen_synthetic, inject_pair, inject_uniform
from .objectives import LossConfig, contrastive_loss, ntxent_pair, supervised_loss, total_loss
from .tensor import Tape, Tensor, backward, grad_check, load_params, no_grad, save_params
from .trainer import RunMetrics, TrainConfig, evaluate, run_protocol, train

__version__ = "0.1.0"
