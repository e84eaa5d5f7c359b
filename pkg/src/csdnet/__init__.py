"""Desk-scale contrastive self-distillation pipeline with its own autodiff
core, adaptive crop augmentation, memory-queue contrastive loss and raw-only
inference path."""

from .backbone import CsdModel, Head, TinyBackbone
from .config import ConfigError, RunConfig, load_config, parse_config
from .data import Dataset, SyntheticSpec, generate_dataset, load_dataset, write_dataset
from .ddl import EmbeddingBatch, EmbeddingEntry, MemoryQueue, build_pair_mask, queue_contrastive_loss
from .ssdp import DiscrepancyMask, PatternMap, augment, binarize, largest_component_mask, pattern_map, refine
from .ssdt import LogitPair, predict, ssdt_loss
from .tensor import Tensor, grad_check, no_grad
from .trainer import (
    AdamW,
    LossReport,
    TrainConfig,
    TrainingDiverged,
    adamw_step,
    evaluate,
    label_smoothing_ce,
    total_loss,
    train,
    train_step,
)

__version__ = "0.1.0"
