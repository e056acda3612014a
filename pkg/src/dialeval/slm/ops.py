"""Single-pair entry points over :class:`SlmModel`: encoders, gate, classifier, scoring, attention export."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import torch

from ..data import DialoguePair
from .features import Featurizer, GraphInput, SlmBatch, TokenSequence, collate
from .model import GraphEncoder, SequenceEncoder, SlmModel, masked_mean


@dataclass
class SequenceStates:
    hidden: torch.Tensor  # (L, d)
    attention: list[torch.Tensor]  # per layer, (heads, L, L)
    mask: torch.Tensor  # (L,)

    @property
    def pooled(self) -> torch.Tensor:
        return masked_mean(self.hidden[None], self.mask[None])[0]


@dataclass
class GraphStates:
    hidden: torch.Tensor  # (M, d)
    attention: list[torch.Tensor]  # per layer, (heads, M, M)

    @property
    def pooled(self) -> torch.Tensor:
        return self.hidden.mean(0)


@dataclass
class FusedRepresentation:
    pooled_seq: torch.Tensor
    pooled_graph: torch.Tensor
    gate: torch.Tensor  # scalar
    fused: torch.Tensor


@dataclass(frozen=True)
class SlmScore:
    p_positive: float
    p_negative: float

    def formatted(self) -> str:
        return f"{self.p_positive:.2f}"


def encode_sequence(seq: TokenSequence, encoder: SequenceEncoder, pad_to: int | None = None) -> SequenceStates:
    n = len(seq.tokens)
    width = max(n, pad_to or n)
    tokens = torch.zeros(1, width, dtype=torch.long)
    tokens[0, :n] = torch.tensor(seq.tokens)
    mask = torch.zeros(1, width, dtype=torch.bool)
    mask[0, :n] = True
    hidden, maps = encoder(tokens, mask)
    return SequenceStates(hidden[0], [a[0] for a in maps], mask[0])


def encode_graph(g: GraphInput, encoder: GraphEncoder) -> GraphStates:
    concepts = torch.tensor([g.concepts])
    relations = torch.tensor([g.relations])
    mask = torch.ones(1, g.size, dtype=torch.bool)
    hidden, maps = encoder(concepts, relations, mask)
    return GraphStates(hidden[0], [a[0] for a in maps])


def fuse_gate(h_s: SequenceStates, h_a: GraphStates, gate: torch.nn.Linear) -> FusedRepresentation:
    ps, pa = h_s.pooled, h_a.pooled
    if ps.shape != pa.shape:
        raise ValueError(f"state widths differ: {tuple(ps.shape)} vs {tuple(pa.shape)}")
    g = torch.sigmoid(gate(ps)).squeeze(-1)
    return FusedRepresentation(ps, pa, g, g * ps + (1 - g) * pa)


def classify(fused: FusedRepresentation | torch.Tensor, classifier: torch.nn.Linear) -> SlmScore:
    vec = fused.fused if isinstance(fused, FusedRepresentation) else fused
    probs = torch.softmax(classifier(vec), dim=-1)
    return SlmScore(float(probs[1].detach()), float(probs[0].detach()))


@torch.no_grad()
def score_pairs(pairs: list[DialoguePair], model: SlmModel, featurizer: Featurizer,
                batch_size: int = 64) -> list[SlmScore]:
    was_training = model.training
    model.eval()
    out: list[SlmScore] = []
    for start in range(0, len(pairs), batch_size):
        chunk = [featurizer.encode_pair(p) for p in pairs[start:start + batch_size]]
        probs = model(collate(chunk)).probs
        out.extend(SlmScore(float(p[1]), float(p[0])) for p in probs)
    model.train(was_training)
    return out


def score_pair(pair: DialoguePair, model: SlmModel, featurizer: Featurizer) -> SlmScore:
    return score_pairs([pair], model, featurizer)[0]


# ---------------------------------------------------------------------------
# attention export

@dataclass
class AttentionMap:
    encoder: str  # "sequence" | "graph"
    layer: int
    head: int
    labels: list[str]
    weights: list[list[float]]


@torch.no_grad()
def export_attention_maps(pair: DialoguePair, model: SlmModel, featurizer: Featurizer) -> list[AttentionMap]:
    """Per-encoder, per-layer, per-head attention matrices labelled with tokens / node concepts."""
    seq, graph = featurizer.encode_pair(pair)
    was_training = model.training
    model.eval()
    out = model(collate([(seq, graph)]), need_graph=True)
    model.train(was_training)
    maps: list[AttentionMap] = []
    for encoder, layers, labels in (("sequence", out.seq_attention, list(seq.labels)),
                                    ("graph", out.graph_attention, list(graph.labels))):
        for li, attn in enumerate(layers or []):
            for hi in range(attn.shape[1]):
                maps.append(AttentionMap(encoder, li, hi, labels, attn[0, hi].double().tolist()))
    return maps


def write_attention_bundle(maps: list[AttentionMap], out_dir: str | Path) -> list[Path]:
    """One TSV per map: header row of column labels, then ``label<TAB>weights...`` rows."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for m in maps:
        path = out_dir / f"{m.encoder}_layer{m.layer}_head{m.head}.tsv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["", *m.labels])
            for label, row in zip(m.labels, m.weights):
                w.writerow([label, *(f"{x:.8f}" for x in row)])
        paths.append(path)
    return paths


def read_attention_tsv(path: str | Path) -> tuple[list[str], list[list[float]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    labels = rows[0][1:]
    return labels, [[float(x) for x in r[1:]] for r in rows[1:]]


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path: str | Path, model: SlmModel, featurizer: Featurizer, extra: dict | None = None) -> Path:
    from dataclasses import asdict

    path = Path(path)
    manifest = {
        "model": asdict(model.cfg),
        "ablation": asdict(model.ablation),
        "vocab_digests": featurizer.digests(),
        "vocab_sizes": {"tokens": len(featurizer.tokens), "concepts": len(featurizer.concepts),
                        "relations": len(featurizer.relations)},
        **(extra or {}),
    }
    torch.save({"state_dict": model.state_dict(), "vocabs": featurizer.state(), "manifest": manifest}, path)
    return path


def load_checkpoint(path: str | Path) -> tuple[SlmModel, Featurizer, dict]:
    from ..config import AblationConfig, ModelConfig

    blob = torch.load(path, map_location="cpu", weights_only=False)
    manifest = blob["manifest"]
    featurizer = Featurizer.from_state(blob["vocabs"])
    if featurizer.digests() != manifest["vocab_digests"]:
        raise ValueError("checkpoint vocabulary does not match its manifest")
    cfg = ModelConfig(**manifest["model"])
    cfg.pretrained_sequence_encoder = ""
    model = SlmModel(len(featurizer.tokens), len(featurizer.concepts), len(featurizer.relations),
                     cfg, AblationConfig(**manifest["ablation"]))
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, featurizer, manifest


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
