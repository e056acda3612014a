"""Dataset records, dialogue pairs, and ingestion of the on-disk dataset formats."""

from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .amr import AmrGraph, merge_context_response_graphs, merge_sentence_graphs, parse_penman

logger = logging.getLogger(__name__)

NEGATIVE_KINDS = ("none", "random", "adversarial")
FORMATS = ("dailydialogpp", "augmented_pairs")

# DailyDialog++ split sizes (dialogue contexts), used only for audit output
DAILYDIALOGPP_SPLITS = {"train": 9259, "validation": 1028, "test": 1142}


class FormatError(ValueError):
    def __init__(self, message: str, index: int | None = None, field_name: str | None = None):
        where = []
        if index is not None:
            where.append(f"record {index}")
        if field_name is not None:
            where.append(f"field {field_name!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.index = index
        self.field_name = field_name


def text_hash(text: str) -> str:
    """Key used by the AMR cache/graph store for a sentence."""
    return hashlib.sha256(text.strip().encode("utf-8")).hexdigest()[:16]


def content_id(payload: object) -> str:
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True)
class DialoguePair:
    context: tuple[str, ...]
    response: str
    label: int | None = None
    context_graph: AmrGraph | None = None
    response_graph: AmrGraph | None = None
    pair_id: str = ""

    @property
    def has_graphs(self) -> bool:
        return self.context_graph is not None and self.response_graph is not None

    def merged_graph(self) -> AmrGraph:
        if not self.has_graphs:
            raise MissingAmrError(f"pair {self.pair_id or '?'} has no AMR graphs")
        return merge_context_response_graphs(self.context_graph, self.response_graph)

    def context_text(self) -> str:
        return " ".join(u.strip() for u in self.context)


class MissingAmrError(LookupError):
    pass


@dataclass(frozen=True)
class TrainingExample:
    pair: DialoguePair
    label: int
    negative_kind: str = "none"

    def __post_init__(self):
        if self.negative_kind not in NEGATIVE_KINDS:
            raise ValueError(f"unknown negative kind {self.negative_kind!r}")
        if (self.label == 1) != (self.negative_kind == "none"):
            raise ValueError("label 1 iff negative_kind == 'none'")


@dataclass
class DatasetRecord:
    context: list[str]
    positive_responses: list[str]
    random_negative_responses: list[str] = field(default_factory=list)
    adversarial_negative_responses: list[str] = field(default_factory=list)
    graphs: dict[str, str] = field(default_factory=dict)  # text -> PENMAN
    record_id: str = ""
    split: str = ""

    def __post_init__(self):
        if not self.record_id:
            self.record_id = content_id(
                [self.context, self.positive_responses, self.random_negative_responses,
                 self.adversarial_negative_responses]
            )

    def texts(self) -> list[str]:
        return [*self.context, *self.positive_responses, *self.random_negative_responses,
                *self.adversarial_negative_responses]

    def responses(self) -> Iterable[tuple[str, int, str]]:
        for r in self.positive_responses:
            yield r, 1, "none"
        for r in self.random_negative_responses:
            yield r, 0, "random"
        for r in self.adversarial_negative_responses:
            yield r, 0, "adversarial"

    def make_pair(self, response: str, label: int | None, graphs: "GraphLookup | None" = None,
                  pair_id: str = "") -> DialoguePair:
        lookup = graphs or GraphLookup(self.graphs)
        g_c = lookup.context_graph(self.context)
        g_r = lookup.get(response)
        return DialoguePair(tuple(self.context), response, label, g_c, g_r,
                            pair_id or content_id([self.record_id, response]))

    def to_examples(self, graphs: "GraphLookup | None" = None) -> list[TrainingExample]:
        return [TrainingExample(self.make_pair(r, y, graphs), y, kind) for r, y, kind in self.responses()]


class GraphLookup:
    """Resolves sentence text to a parsed graph from ``{text or text_hash: penman}`` mappings."""

    def __init__(self, *sources: dict[str, str]):
        self._penman: dict[str, str] = {}
        for src in sources:
            for key, value in src.items():
                self._penman[key if is_text_hash(key) else text_hash(key)] = value
        self._parsed: dict[str, AmrGraph] = {}

    def __contains__(self, text: str) -> bool:
        return text_hash(text) in self._penman

    def __len__(self) -> int:
        return len(self._penman)

    def get(self, text: str) -> AmrGraph | None:
        key = text_hash(text)
        if key not in self._penman:
            return None
        if key not in self._parsed:
            self._parsed[key] = parse_penman(self._penman[key])
        return self._parsed[key]

    def context_graph(self, context: Sequence[str]) -> AmrGraph | None:
        graphs = [self.get(u) for u in context]
        if not graphs or any(g is None for g in graphs):
            return None
        return graphs[0] if len(graphs) == 1 else merge_sentence_graphs(graphs)

    def missing(self, texts: Iterable[str]) -> list[str]:
        return [t for t in texts if t not in self]


def is_text_hash(s: str) -> bool:
    return len(s) == 16 and all(c in "0123456789abcdef" for c in s)


# ---------------------------------------------------------------------------
# ingestion

def _read_raw(path: Path) -> list[dict]:
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        return []
    stripped = text.lstrip()
    if stripped.startswith("["):
        data = json.loads(text)
        if not isinstance(data, list):
            raise FormatError("top-level JSON must be a list of records")
        return data
    rows = []
    for i, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON: {exc.msg}", index=len(rows)) from exc
    return rows


def _string_list(raw: dict, name: str, index: int, required: bool) -> list[str]:
    if name not in raw:
        if required:
            raise FormatError("missing field", index=index, field_name=name)
        return []
    value = raw[name]
    if isinstance(value, str):
        value = [value]
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise FormatError("expected a list of strings", index=index, field_name=name)
    return [v.strip() for v in value if v.strip()]


def ingest_dataset(path: str | Path, format: str, split: str = "") -> list[DatasetRecord]:
    """Load records from a JSON array or JSON-lines file.

    ``dailydialogpp`` requires all three response lists (five each is expected;
    other counts are logged). ``augmented_pairs`` requires positives and
    adversarial negatives; random negatives are optional and can be filled in
    later with :func:`fill_random_negatives`.
    """
    if format not in FORMATS:
        raise FormatError(f"unknown dataset format {format!r}; expected one of {FORMATS}")
    path = Path(path)
    rows = _read_raw(path)
    if not rows:
        logger.warning("dataset %s is empty", path)
        return []
    need_random = format == "dailydialogpp"
    records = []
    odd_counts = 0
    for i, raw in enumerate(rows):
        if not isinstance(raw, dict):
            raise FormatError("record must be an object", index=i)
        context = _string_list(raw, "context", i, required=True)
        if not context:
            raise FormatError("context is empty", index=i, field_name="context")
        pos = _string_list(raw, "positive_responses", i, required=True)
        if not pos:
            raise FormatError("at least one positive response required", index=i, field_name="positive_responses")
        rnd = _string_list(raw, "random_negative_responses", i, required=need_random)
        adv = _string_list(raw, "adversarial_negative_responses", i, required=True)
        graphs = raw.get("graphs") or {}
        if not isinstance(graphs, dict):
            raise FormatError("expected a text -> PENMAN mapping", index=i, field_name="graphs")
        if format == "dailydialogpp" and not (len(pos) == len(rnd) == len(adv) == 5):
            odd_counts += 1
        records.append(DatasetRecord(context, pos, rnd, adv, dict(graphs),
                                     record_id=str(raw.get("id", "")) or "", split=split or str(raw.get("split", ""))))
    if odd_counts:
        logger.info("%d/%d records deviate from the 5/5/5 response layout", odd_counts, len(records))
    logger.info("ingested %d records from %s (%s)", len(records), path, summarize(records))
    return records


def summarize(records: Sequence[DatasetRecord]) -> dict:
    counts = {"records": len(records), "positive": 0, "random": 0, "adversarial": 0}
    splits: dict[str, int] = {}
    for r in records:
        counts["positive"] += len(r.positive_responses)
        counts["random"] += len(r.random_negative_responses)
        counts["adversarial"] += len(r.adversarial_negative_responses)
        splits[r.split or "unsplit"] = splits.get(r.split or "unsplit", 0) + 1
    counts["splits"] = splits
    if set(splits) & set(DAILYDIALOGPP_SPLITS):
        counts["reference_splits"] = {k: v for k, v in DAILYDIALOGPP_SPLITS.items() if k in splits}
    return counts


def fill_random_negatives(records: Sequence[DatasetRecord], k: int = 5, seed: int = 0) -> list[DatasetRecord]:
    """Give records without random negatives ``k`` positives drawn from other records."""
    rng = random.Random(seed)
    out = []
    for i, rec in enumerate(records):
        if rec.random_negative_responses or len(records) < 2:
            out.append(rec)
            continue
        pool = [r for j, other in enumerate(records) if j != i for r in other.positive_responses]
        picks = rng.sample(pool, min(k, len(pool)))
        out.append(DatasetRecord(rec.context, rec.positive_responses, picks,
                                 rec.adversarial_negative_responses, rec.graphs, rec.record_id, rec.split))
    return out


def expand_examples(records: Sequence[DatasetRecord], graphs: GraphLookup | None = None) -> list[TrainingExample]:
    return [ex for rec in records for ex in rec.to_examples(graphs or GraphLookup(rec.graphs))]


def write_records(records: Sequence[DatasetRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({
                "id": r.record_id,
                "split": r.split,
                "context": r.context,
                "positive_responses": r.positive_responses,
                "random_negative_responses": r.random_negative_responses,
                "adversarial_negative_responses": r.adversarial_negative_responses,
                "graphs": r.graphs,
            }, ensure_ascii=False) + "\n")
