"""Vocabularies and tensorisation of dialogue pairs and AMR graphs."""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import torch

from ..amr import AmrGraph
from ..data import DialoguePair, MissingAmrError

PAD, UNK, SEP, EOT = "<pad>", "<unk>", "<sep>", "<eot>"
SELF, NO_EDGE = "<self>", "<no-edge>"

_WORD = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and split punctuation off words."""
    return _WORD.findall(text.lower())


class ShapeError(ValueError):
    pass


class Vocab:
    def __init__(self, itos: Sequence[str], reserved: Sequence[str]):
        self.reserved = tuple(reserved)
        self.itos = list(itos)
        if self.itos[: len(self.reserved)] != list(self.reserved):
            raise ValueError("vocabulary must start with its reserved symbols")
        self.stoi = {s: i for i, s in enumerate(self.itos)}
        self.unk = self.stoi.get(UNK, 0)

    @classmethod
    def build(cls, items: Iterable[str], reserved: Sequence[str], min_freq: int = 1) -> "Vocab":
        counts = Counter(items)
        rest = sorted((s for s, c in counts.items() if c >= min_freq and s not in reserved),
                      key=lambda s: (-counts[s], s))
        return cls([*reserved, *rest], reserved)

    def __len__(self) -> int:
        return len(self.itos)

    def __getitem__(self, item: str) -> int:
        return self.stoi.get(item, self.unk)

    def __contains__(self, item: str) -> bool:
        return item in self.stoi

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[int, ...]
    context_len: int
    response_len: int
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.tokens) != self.context_len + self.response_len + 1:
            raise ShapeError("token layout must be context + separator + response")


@dataclass(frozen=True)
class GraphInput:
    concepts: tuple[int, ...]
    relations: tuple[tuple[int, ...], ...]  # M x M relation ids
    labels: tuple[str, ...] = ()

    @property
    def size(self) -> int:
        return len(self.concepts)


class Featurizer:
    """Maps pairs to token sequences and graphs to node/relation id tensors."""

    def __init__(self, tokens: Vocab, concepts: Vocab, relations: Vocab, max_len: int = 512):
        self.tokens = tokens
        self.concepts = concepts
        self.relations = relations
        self.max_len = max_len

    @classmethod
    def build(cls, pairs: Iterable[DialoguePair], min_freq: int = 1, max_len: int = 512) -> "Featurizer":
        toks: list[str] = []
        concepts: list[str] = []
        rels: list[str] = []
        for p in pairs:
            for u in p.context:
                toks.extend(tokenize(u))
            toks.extend(tokenize(p.response))
            for g in (p.context_graph, p.response_graph):
                if g is not None:
                    concepts.extend(n.concept for n in g.nodes)
                    rels.extend(e.relation for e in g.edges)
        rels.extend(f":snt{i}" for i in range(1, 9))
        concepts.append("multi-sentence")
        return cls(
            Vocab.build(toks, (PAD, UNK, SEP, EOT), min_freq),
            Vocab.build(concepts, (PAD, UNK), min_freq),
            Vocab.build(rels, (PAD, UNK, SELF, NO_EDGE), 1),
            max_len,
        )

    def state(self) -> dict:
        return {"tokens": self.tokens.itos, "concepts": self.concepts.itos,
                "relations": self.relations.itos, "max_len": self.max_len}

    @classmethod
    def from_state(cls, state: dict) -> "Featurizer":
        return cls(Vocab(state["tokens"], (PAD, UNK, SEP, EOT)),
                   Vocab(state["concepts"], (PAD, UNK)),
                   Vocab(state["relations"], (PAD, UNK, SELF, NO_EDGE)),
                   state.get("max_len", 512))

    def digests(self) -> dict:
        return {"tokens": self.tokens.digest(), "concepts": self.concepts.digest(),
                "relations": self.relations.digest()}

    def encode_text(self, context: Sequence[str], response: str) -> TokenSequence:
        ctx: list[str] = []
        for i, utt in enumerate(context):
            if i:
                ctx.append(EOT)
            ctx.extend(tokenize(utt))
        resp = tokenize(response)
        if not ctx or not resp:
            raise ShapeError("context and response must each contain at least one token")
        budget = self.max_len - 1
        if len(ctx) + len(resp) > budget:
            resp = resp[: max(1, budget // 2)]
            ctx = ctx[-(budget - len(resp)):]  # keep the most recent context
        labels = (*ctx, SEP, *resp)
        return TokenSequence(tuple(self.tokens[t] for t in labels), len(ctx), len(resp), labels)

    def encode_graph(self, g: AmrGraph) -> GraphInput:
        index = {n.id: i for i, n in enumerate(g.nodes)}
        m = len(g.nodes)
        no_edge, self_id = self.relations[NO_EDGE], self.relations[SELF]
        rel = [[no_edge] * m for _ in range(m)]
        for i in range(m):
            rel[i][i] = self_id
        for e in g.edges:
            i, j = index[e.source], index[e.target]
            if i != j and rel[i][j] == no_edge:
                rel[i][j] = self.relations[e.relation]
        return GraphInput(
            tuple(self.concepts[n.concept] for n in g.nodes),
            tuple(tuple(r) for r in rel),
            tuple(n.concept for n in g.nodes),
        )

    def encode_pair(self, pair: DialoguePair) -> tuple[TokenSequence, GraphInput]:
        if not pair.has_graphs:
            raise MissingAmrError(f"missing AMR for pair {pair.pair_id or pair.response!r}")
        return self.encode_text(pair.context, pair.response), self.encode_graph(pair.merged_graph())


@dataclass
class SlmBatch:
    tokens: torch.Tensor  # (B, L) long
    token_mask: torch.Tensor  # (B, L) bool, True = real token
    concepts: torch.Tensor  # (B, M) long
    node_mask: torch.Tensor  # (B, M) bool
    relations: torch.Tensor  # (B, M, M) long

    def __len__(self) -> int:
        return self.tokens.shape[0]


def collate(items: Sequence[tuple[TokenSequence, GraphInput]], pad_to: int | None = None) -> SlmBatch:
    b = len(items)
    seq_len = max(len(s.tokens) for s, _ in items)
    if pad_to is not None:
        seq_len = max(seq_len, pad_to)
    m = max(g.size for _, g in items)
    tokens = torch.zeros(b, seq_len, dtype=torch.long)
    token_mask = torch.zeros(b, seq_len, dtype=torch.bool)
    concepts = torch.zeros(b, m, dtype=torch.long)
    node_mask = torch.zeros(b, m, dtype=torch.bool)
    relations = torch.zeros(b, m, m, dtype=torch.long)
    for i, (s, g) in enumerate(items):
        tokens[i, : len(s.tokens)] = torch.tensor(s.tokens)
        token_mask[i, : len(s.tokens)] = True
        concepts[i, : g.size] = torch.tensor(g.concepts)
        node_mask[i, : g.size] = True
        relations[i, : g.size, : g.size] = torch.tensor(g.relations)
    return SlmBatch(tokens, token_mask, concepts, node_mask, relations)
