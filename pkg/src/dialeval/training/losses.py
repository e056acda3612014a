"""Classification and contrastive objectives."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

PROB_EPS = 1e-7


class DegenerateBatch(ValueError):
    pass


def classification_loss(p_positive: torch.Tensor, labels: torch.Tensor, eps: float = PROB_EPS) -> torch.Tensor:
    """Mean binary cross-entropy, -log p(true label), with probabilities clamped to [eps, 1 - eps]."""
    labels = labels.to(p_positive.dtype)
    p_correct = labels * p_positive + (1 - labels) * (1 - p_positive)
    return -torch.log(p_correct.clamp(eps, 1 - eps)).mean()


def contrastive_from_similarities(pos_sims: torch.Tensor, neg_sims: torch.Tensor, temperature: float) -> torch.Tensor:
    """InfoNCE over sequence/graph agreement.

    Each positive's own similarity competes against the similarities of all
    negatives in the batch; the loss is the mean over positives.
    """
    if pos_sims.numel() == 0 or neg_sims.numel() == 0:
        raise DegenerateBatch("contrastive loss needs at least one positive and one negative")
    pos = pos_sims / temperature
    neg = (neg_sims / temperature).expand(pos.shape[0], -1)
    logits = torch.cat([pos.unsqueeze(1), neg], dim=1)
    return (torch.logsumexp(logits, dim=1) - pos).mean()


def contrastive_loss(seq: torch.Tensor, graph: torch.Tensor, labels: torch.Tensor,
                     temperature: float = 0.1) -> torch.Tensor:
    """Cosine-similarity InfoNCE between pooled sequence and graph vectors of each example."""
    sims = F.cosine_similarity(seq, graph, dim=-1, eps=1e-12)
    pos_mask = labels == 1
    return contrastive_from_similarities(sims[pos_mask], sims[~pos_mask], temperature)


@dataclass
class LossBreakdown:
    l_cls: torch.Tensor
    l_contrastive: torch.Tensor
    l_total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {"l_cls": float(self.l_cls.detach()), "l_contrastive": float(self.l_contrastive.detach()),
                "l_total": float(self.l_total.detach())}


def total_loss(l_cls: torch.Tensor, l_contrastive: torch.Tensor | float, use_contrastive: bool = True) -> LossBreakdown:
    l_c = torch.as_tensor(l_contrastive, dtype=l_cls.dtype) if use_contrastive else torch.zeros((), dtype=l_cls.dtype)
    return LossBreakdown(l_cls, l_c, l_cls + l_c)
