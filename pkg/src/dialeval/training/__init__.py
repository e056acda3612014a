"""Objectives, batching, the training loop, and the synthetic adversarial benchmark."""

from .losses import (
    DegenerateBatch,
    LossBreakdown,
    classification_loss,
    contrastive_from_similarities,
    contrastive_loss,
    total_loss,
)
from .synthetic import SyntheticSplit, make_adversarial_benchmark
from .toy import TOY_VARIANTS, ToyResult, run_toy_ablation
from .trainer import (
    Batch,
    EpochMetrics,
    TrainingDiverged,
    TrainResult,
    evaluate_accuracy,
    sample_training_batch,
    stratified_batches,
    train,
)
