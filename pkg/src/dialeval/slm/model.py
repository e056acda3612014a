"""Dual-encoder SLM: transformer sequence encoder, relation-aware graph encoder, scalar gate, classifier."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from ..config import AblationConfig, ModelConfig
from .features import ShapeError, SlmBatch


class SelfAttention(nn.Module):
    """Multi-head scaled dot-product attention; ``w_h`` is the value transform."""

    def __init__(self, d_model: int, n_heads: int, dropout: float = 0.0):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.w_q = nn.Linear(d_model, d_model)
        self.w_k = nn.Linear(d_model, d_model)
        self.w_h = nn.Linear(d_model, d_model)
        self.w_o = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, n, _ = x.shape
        return x.view(b, n, self.n_heads, self.d_head).transpose(1, 2)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        q, k, v = self._split(self.w_q(x)), self._split(self.w_k(x)), self._split(self.w_h(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        scores = scores.masked_fill(~mask[:, None, None, :], float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        out = self.dropout(attn) @ v
        b, _, n, _ = out.shape
        return self.w_o(out.transpose(1, 2).reshape(b, n, -1)), attn


class RelationAttention(nn.Module):
    """Graph-transformer attention: relation embeddings shift both keys and values.

    logit_ij = (W^Q h_i) . (W^K h_j + W^R r_ij) / sqrt(d_head)
    out_i    = sum_j a_ij (W^V h_j + W^R r_ij)
    """

    def __init__(self, d_model: int, n_heads: int, d_rel: int, dropout: float = 0.0):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.w_q = nn.Linear(d_model, d_model)
        self.w_k = nn.Linear(d_model, d_model)
        self.w_v = nn.Linear(d_model, d_model)
        self.w_r = nn.Linear(d_rel, d_model, bias=False)
        self.w_o = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, n, _ = x.shape
        return x.view(b, n, self.n_heads, self.d_head).transpose(1, 2)

    def forward(self, h: torch.Tensor, rel: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        b, m, _ = h.shape
        q, k, v = self._split(self.w_q(h)), self._split(self.w_k(h)), self._split(self.w_v(h))
        r = self.w_r(rel).view(b, m, m, self.n_heads, self.d_head).permute(0, 3, 1, 2, 4)
        scores = (q.unsqueeze(3) * (k.unsqueeze(2) + r)).sum(-1) / math.sqrt(self.d_head)
        scores = scores.masked_fill(~mask[:, None, None, :], float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        a = self.dropout(attn)
        out = a @ v + (a.unsqueeze(-1) * r).sum(dim=3)
        return self.w_o(out.transpose(1, 2).reshape(b, m, -1)), attn


class _Block(nn.Module):
    def __init__(self, attn: nn.Module, d_model: int, d_ff: int, dropout: float):
        super().__init__()
        self.attn = attn
        self.norm1 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(nn.Linear(d_model, d_ff), nn.GELU(), nn.Linear(d_ff, d_model))
        self.norm2 = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, *args):
        y, attn = self.attn(x, *args)
        x = self.norm1(x + self.dropout(y))
        x = self.norm2(x + self.dropout(self.ff(x)))
        return x, attn


class SequenceEncoder(nn.Module):
    def __init__(self, vocab_size: int, cfg: ModelConfig):
        super().__init__()
        d_ff = cfg.d_ff or 4 * cfg.d_model
        self.vocab_size = vocab_size
        self.embed = nn.Embedding(vocab_size, cfg.d_model, padding_idx=0)
        self.position = nn.Embedding(cfg.max_len, cfg.d_model)
        self.layers = nn.ModuleList(
            _Block(SelfAttention(cfg.d_model, cfg.n_heads, cfg.dropout), cfg.d_model, d_ff, cfg.dropout)
            for _ in range(cfg.n_layers)
        )

    def forward(self, tokens: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        if tokens.numel() and (int(tokens.max()) >= self.vocab_size or int(tokens.min()) < 0):
            raise ShapeError("token id outside the vocabulary")
        if tokens.shape[1] > self.position.num_embeddings:
            raise ShapeError(f"sequence length {tokens.shape[1]} exceeds max_len {self.position.num_embeddings}")
        pos = torch.arange(tokens.shape[1], device=tokens.device)
        x = self.embed(tokens) + self.position(pos)[None]
        maps = []
        for layer in self.layers:
            x, attn = layer(x, mask)
            maps.append(attn)
        return x, maps


class GraphEncoder(nn.Module):
    def __init__(self, n_concepts: int, n_relations: int, cfg: ModelConfig):
        super().__init__()
        d_ff = cfg.d_ff or 4 * cfg.d_model
        self.n_concepts = n_concepts
        self.concept_embed = nn.Embedding(n_concepts, cfg.d_model, padding_idx=0)
        self.relation_embed = nn.Embedding(n_relations, cfg.d_model)
        self.layers = nn.ModuleList(
            _Block(RelationAttention(cfg.d_model, cfg.n_heads, cfg.d_model, cfg.dropout), cfg.d_model, d_ff, cfg.dropout)
            for _ in range(cfg.n_layers)
        )

    def forward(self, concepts: torch.Tensor, relations: torch.Tensor, mask: torch.Tensor):
        if concepts.numel() and int(concepts.max()) >= self.n_concepts:
            raise ShapeError("concept id outside the vocabulary")
        x = self.concept_embed(concepts)
        rel = self.relation_embed(relations)
        maps = []
        for layer in self.layers:
            x, attn = layer(x, rel, mask)
            maps.append(attn)
        return x, maps


def masked_mean(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    w = mask.to(x.dtype).unsqueeze(-1)
    return (x * w).sum(1) / w.sum(1).clamp_min(1.0)


@dataclass
class SlmOutput:
    probs: torch.Tensor  # (B, 2); column 1 is the positive class
    logits: torch.Tensor
    pooled_seq: torch.Tensor | None
    pooled_graph: torch.Tensor | None
    gate: torch.Tensor  # (B,)
    fused: torch.Tensor
    seq_states: torch.Tensor | None = None
    graph_states: torch.Tensor | None = None
    seq_attention: list[torch.Tensor] | None = None
    graph_attention: list[torch.Tensor] | None = None

    @property
    def p_positive(self) -> torch.Tensor:
        return self.probs[:, 1]


class SlmModel(nn.Module):
    def __init__(self, n_tokens: int, n_concepts: int, n_relations: int,
                 cfg: ModelConfig | None = None, ablation: AblationConfig | None = None):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        self.ablation = ablation or AblationConfig()
        self.cfg.validate()
        self.ablation.validate()
        d = self.cfg.d_model
        self.seq_encoder = SequenceEncoder(n_tokens, self.cfg)
        self.graph_encoder = GraphEncoder(n_concepts, n_relations, self.cfg)
        self.gate = nn.Linear(d, 1)  # weight = W^G, bias = b_g
        self.classifier = nn.Linear(d, 2)  # W^F, b_f
        self.reset_parameters()

    def reset_parameters(self) -> None:
        for name, p in self.named_parameters():
            if p.dim() > 1:
                nn.init.xavier_uniform_(p)
            elif name.endswith("bias"):
                nn.init.zeros_(p)

    def fuse(self, pooled_seq: torch.Tensor | None, pooled_graph: torch.Tensor | None):
        mode = self.ablation.encoder_mode
        if mode == "sequence_only":
            return pooled_seq, torch.ones(pooled_seq.shape[0], dtype=pooled_seq.dtype)
        if mode == "graph_only":
            return pooled_graph, torch.zeros(pooled_graph.shape[0], dtype=pooled_graph.dtype)
        if self.ablation.use_gate:
            g = torch.sigmoid(self.gate(pooled_seq)).squeeze(-1)
        else:
            g = torch.full((pooled_seq.shape[0],), 0.5, dtype=pooled_seq.dtype)
        fused = g.unsqueeze(-1) * pooled_seq + (1 - g).unsqueeze(-1) * pooled_graph
        return fused, g

    def forward(self, batch: SlmBatch, need_graph: bool | None = None) -> SlmOutput:
        mode = self.ablation.encoder_mode
        h_s = h_a = ps = pa = None
        seq_maps = graph_maps = None
        if mode != "graph_only":
            h_s, seq_maps = self.seq_encoder(batch.tokens, batch.token_mask)
            ps = masked_mean(h_s, batch.token_mask)
        if mode != "sequence_only" or need_graph:
            h_a, graph_maps = self.graph_encoder(batch.concepts, batch.relations, batch.node_mask)
            pa = masked_mean(h_a, batch.node_mask)
        fused, g = self.fuse(ps, pa)
        logits = self.classifier(fused)
        return SlmOutput(torch.softmax(logits, dim=-1), logits, ps, pa, g, fused,
                         h_s, h_a, seq_maps, graph_maps)


def load_pretrained_sequence_encoder(model: SlmModel, path: str) -> list[str]:
    """Copy matching tensors from a saved state dict into the sequence encoder; returns loaded keys."""
    state = torch.load(path, map_location="cpu", weights_only=True)
    if "state_dict" in state:
        state = state["state_dict"]
    own = model.seq_encoder.state_dict()
    loaded = []
    for key, value in state.items():
        key = key.removeprefix("seq_encoder.")
        if key in own and own[key].shape == value.shape:
            own[key] = value
            loaded.append(key)
    model.seq_encoder.load_state_dict(own)
    return loaded
