"""Batch construction, the training loop, and accuracy evaluation."""

from __future__ import annotations

import copy
import logging
import math
import random
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import torch

from ..config import AblationConfig, ModelConfig, TrainConfig
from ..data import DatasetRecord, GraphLookup, TrainingExample
from ..slm.features import EOT, SEP, Featurizer, SlmBatch, collate
from ..slm.model import SlmModel, load_pretrained_sequence_encoder
from ..slm.ops import save_checkpoint
from .losses import DegenerateBatch, LossBreakdown, classification_loss, contrastive_loss, total_loss

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Batch:
    examples: list[TrainingExample]

    def __post_init__(self):
        labels = {ex.label for ex in self.examples}
        if len(self.examples) < 2 or labels != {0, 1}:
            raise DegenerateBatch("a batch needs N >= 2 examples with both labels")

    @property
    def labels(self) -> torch.Tensor:
        return torch.tensor([ex.label for ex in self.examples])

    def __len__(self) -> int:
        return len(self.examples)


def sample_training_batch(records: Sequence[DatasetRecord], n: int, seed: int,
                          graphs: GraphLookup | None = None) -> Batch:
    """Draw ``n // 2`` positives and ``n - n // 2`` negatives.

    Each negative picks a record uniformly, then a response uniformly from that
    record's random + adversarial pool combined.
    """
    with_pos = [r for r in records if r.positive_responses]
    with_neg = [r for r in records if r.random_negative_responses or r.adversarial_negative_responses]
    if not with_pos or not with_neg:
        raise DegenerateBatch("dataset lacks positive or negative responses")
    rng = random.Random(seed)
    examples = []
    for _ in range(n // 2):
        rec = rng.choice(with_pos)
        examples.append(TrainingExample(rec.make_pair(rng.choice(rec.positive_responses), 1, graphs), 1, "none"))
    for _ in range(n - n // 2):
        rec = rng.choice(with_neg)
        pool = [(r, "random") for r in rec.random_negative_responses]
        pool += [(r, "adversarial") for r in rec.adversarial_negative_responses]
        text, kind = rng.choice(pool)
        examples.append(TrainingExample(rec.make_pair(text, 0, graphs), 0, kind))
    return Batch(examples)


def stratified_batches(labels: Sequence[int], batch_size: int, rng: random.Random) -> list[list[int]]:
    """Shuffle indices and spread positives and negatives evenly over the batches."""
    pos = [i for i, y in enumerate(labels) if y == 1]
    neg = [i for i, y in enumerate(labels) if y == 0]
    rng.shuffle(pos)
    rng.shuffle(neg)
    n_batches = max(1, math.ceil(len(labels) / batch_size))
    batches: list[list[int]] = [[] for _ in range(n_batches)]
    for group in (pos, neg):
        for k, idx in enumerate(group):
            batches[k % n_batches].append(idx)
    for b in batches:
        rng.shuffle(b)
    return [b for b in batches if b]


@dataclass
class EpochMetrics:
    epoch: int
    l_cls: float
    l_contrastive: float
    l_total: float
    train_accuracy: float
    val_accuracy: float


@dataclass
class TrainResult:
    model: SlmModel
    featurizer: Featurizer
    history: list[EpochMetrics] = field(default_factory=list)
    best_epoch: int = 0
    best_val_accuracy: float = 0.0
    checkpoint: Path | None = None


def drop_tokens(batch: SlmBatch, rate: float, unk: int, keep: set[int], gen: torch.Generator) -> SlmBatch:
    """Replace a ``rate`` fraction of word tokens with ``unk``; separators and padding are kept."""
    if rate <= 0:
        return batch
    hit = (torch.rand(batch.tokens.shape, generator=gen) < rate) & batch.token_mask
    for k in keep:
        hit &= batch.tokens != k
    return replace(batch, tokens=batch.tokens.masked_fill(hit, unk))


def _contrastive_applies(model: SlmModel) -> bool:
    return model.ablation.use_contrastive and model.ablation.encoder_mode == "both"


def batch_losses(model: SlmModel, batch, labels: torch.Tensor, temperature: float) -> tuple[LossBreakdown, torch.Tensor]:
    out = model(batch)
    l_cls = classification_loss(out.p_positive, labels)
    use_cl = _contrastive_applies(model) and bool((labels == 1).any()) and bool((labels == 0).any())
    l_c = contrastive_loss(out.pooled_seq, out.pooled_graph, labels, temperature) if use_cl else 0.0
    return total_loss(l_cls, l_c, use_cl), out.p_positive


@torch.no_grad()
def predict(model: SlmModel, encoded, batch_size: int = 128) -> torch.Tensor:
    was = model.training
    model.eval()
    probs = [model(collate(encoded[i:i + batch_size])).p_positive for i in range(0, len(encoded), batch_size)]
    model.train(was)
    return torch.cat(probs) if probs else torch.zeros(0)


def evaluate_accuracy(model: SlmModel, featurizer: Featurizer, examples: Sequence[TrainingExample]) -> float:
    """Fraction of examples whose argmax class equals the label."""
    if not examples:
        return 0.0
    p = predict(model, [featurizer.encode_pair(ex.pair) for ex in examples])
    pred = (p > 0.5).long()
    return float((pred == torch.tensor([ex.label for ex in examples])).float().mean())


def train(train_examples: Sequence[TrainingExample], val_examples: Sequence[TrainingExample],
          cfg: TrainConfig, model_cfg: ModelConfig | None = None, ablation: AblationConfig | None = None,
          out_dir: str | Path | None = None, featurizer: Featurizer | None = None,
          dtype: torch.dtype = torch.float32) -> TrainResult:
    """Train from scratch (or from a pretrained sequence encoder) and keep the best-validation weights.

    ``history[0]`` holds the losses of the untrained model; epochs are 1-based.
    """
    model_cfg = model_cfg or ModelConfig()
    ablation = ablation or AblationConfig()
    torch.manual_seed(cfg.seed)
    rng = random.Random(cfg.seed)
    featurizer = featurizer or Featurizer.build((ex.pair for ex in train_examples), cfg.min_freq, model_cfg.max_len)
    model = SlmModel(len(featurizer.tokens), len(featurizer.concepts), len(featurizer.relations),
                     model_cfg, ablation).to(dtype)
    if model_cfg.pretrained_sequence_encoder:
        loaded = load_pretrained_sequence_encoder(model, model_cfg.pretrained_sequence_encoder)
        logger.info("loaded %d pretrained sequence-encoder tensors", len(loaded))
    optim = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    gen = torch.Generator().manual_seed(cfg.seed)
    unk = featurizer.tokens.unk
    keep = {featurizer.tokens[SEP], featurizer.tokens[EOT]}

    enc_train = [featurizer.encode_pair(ex.pair) for ex in train_examples]
    labels = [ex.label for ex in train_examples]
    label_t = torch.tensor(labels)

    result = TrainResult(model, featurizer)
    best_state = copy.deepcopy(model.state_dict())
    best_acc = -1.0

    def record(epoch: int, sums: dict[str, float], n_batches: int) -> EpochMetrics:
        p = predict(model, enc_train)
        train_acc = float(((p > 0.5).long() == label_t).float().mean()) if len(labels) else 0.0
        val_acc = evaluate_accuracy(model, featurizer, val_examples)
        m = EpochMetrics(epoch, *(sums[k] / max(n_batches, 1) for k in ("l_cls", "l_contrastive", "l_total")),
                         train_acc, val_acc)
        result.history.append(m)
        logger.info("epoch %d: l_cls=%.4f l_c=%.4f train_acc=%.3f val_acc=%.3f",
                    epoch, m.l_cls, m.l_contrastive, train_acc, val_acc)
        return m

    # epoch 0: losses of the untrained model
    model.eval()
    sums = dict.fromkeys(("l_cls", "l_contrastive", "l_total"), 0.0)
    batches = stratified_batches(labels, cfg.batch_size, random.Random(cfg.seed))
    with torch.no_grad():
        for idx in batches:
            lb, _ = batch_losses(model, collate([enc_train[i] for i in idx]), label_t[idx], cfg.temperature)
            for k, v in lb.as_floats().items():
                sums[k] += v
    m0 = record(0, sums, len(batches))
    best_acc, best_state = m0.val_accuracy, copy.deepcopy(model.state_dict())

    for epoch in range(1, cfg.epochs + 1):
        model.train()
        sums = dict.fromkeys(("l_cls", "l_contrastive", "l_total"), 0.0)
        batches = stratified_batches(labels, cfg.batch_size, rng)
        for idx in batches:
            batch = drop_tokens(collate([enc_train[i] for i in idx]), cfg.token_dropout, unk, keep, gen)
            lb, _ = batch_losses(model, batch, label_t[idx], cfg.temperature)
            if not torch.isfinite(lb.l_total):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}: {lb.as_floats()}")
            optim.zero_grad()
            lb.l_total.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optim.step()
            for k, v in lb.as_floats().items():
                sums[k] += v
        m = record(epoch, sums, len(batches))
        if m.val_accuracy >= best_acc:
            best_acc, result.best_epoch = m.val_accuracy, epoch
            best_state = copy.deepcopy(model.state_dict())

    model.load_state_dict(best_state)
    model.eval()
    result.best_val_accuracy = best_acc
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        result.checkpoint = save_checkpoint(out_dir / "checkpoint.pt", model, featurizer,
                                            {"train": asdict(cfg), "best_epoch": result.best_epoch})
        write_history(result.history, out_dir / "metrics.tsv")
    return result


def write_history(history: Sequence[EpochMetrics], path: str | Path) -> None:
    cols = ["epoch", "l_cls", "l_contrastive", "l_total", "train_accuracy", "val_accuracy"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(cols) + "\n")
        for m in history:
            row = asdict(m)
            fh.write("\t".join(str(row[c]) if c == "epoch" else f"{row[c]:.6f}" for c in cols) + "\n")
