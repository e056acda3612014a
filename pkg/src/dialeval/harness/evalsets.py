"""Standard / Adversarial evaluation sets and human annotation files."""

from __future__ import annotations

import json
import random
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from ..data import DatasetRecord, FormatError, content_id
from ..judge.prompts import CRITERIA, Criterion

STANDARD, ADVERSARIAL = "standard", "adversarial"
SET_KINDS = (STANDARD, ADVERSARIAL)
# negative category admitted by each set kind (positives go in both)
_NEGATIVE_OF = {STANDARD: "random", ADVERSARIAL: "adversarial"}


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class EvalPair:
    pair_id: str
    context: tuple[str, ...]
    response: str
    category: str  # "positive" | "random" | "adversarial"
    dataset: str = ""
    record_id: str = ""

    def to_dict(self, kind: str) -> dict:
        return {"pair_id": self.pair_id, "set": kind, "dataset": self.dataset, "record_id": self.record_id,
                "category": self.category, "context": list(self.context), "response": self.response}


@dataclass
class EvalSet:
    kind: str
    pairs: list[EvalPair] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in SET_KINDS:
            raise ValueError(f"unknown eval set kind {self.kind!r}")
        allowed = {"positive", _NEGATIVE_OF[self.kind]}
        for p in self.pairs:
            if p.category not in allowed:
                raise ValueError(f"{self.kind} set cannot hold a {p.category} response ({p.pair_id})")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def pair_ids(self) -> list[str]:
        return [p.pair_id for p in self.pairs]


def _pool(records: Sequence[DatasetRecord], category: str, dataset: str) -> list[EvalPair]:
    attr = {"positive": "positive_responses", "random": "random_negative_responses",
            "adversarial": "adversarial_negative_responses"}[category]
    out = []
    for rec in records:
        for resp in getattr(rec, attr):
            pid = content_id([dataset, rec.record_id, category, resp])
            out.append(EvalPair(pid, tuple(rec.context), resp, category, dataset, rec.record_id))
    return out


def build_eval_sets(records: Sequence[DatasetRecord], n_per_dataset: int, seed: int = 0,
                    dataset: str = "") -> tuple[EvalSet, EvalSet]:
    """Sample ``n_per_dataset`` pairs per set without replacement, half positives and half negatives.

    Standard negatives are random negatives; Adversarial negatives are
    adversarial negatives. The two sets draw their positives independently.
    """
    if n_per_dataset < 0:
        raise ValueError("n_per_dataset must be non-negative")
    rng = random.Random(f"{seed}:{dataset}")
    sets = []
    for kind in SET_KINDS:
        n_pos = n_per_dataset // 2
        n_neg = n_per_dataset - n_pos
        chosen = []
        for category, n in (("positive", n_pos), (_NEGATIVE_OF[kind], n_neg)):
            pool = _pool(records, category, dataset)
            if len(pool) < n:
                raise InsufficientData(f"{dataset or 'dataset'}: need {n} {category} responses for the "
                                       f"{kind} set, found {len(pool)}")
            chosen.extend(rng.sample(pool, n))
        rng.shuffle(chosen)
        sets.append(EvalSet(kind, chosen))
    return sets[0], sets[1]


def build_eval_sets_multi(datasets: Mapping[str, Sequence[DatasetRecord]], n_per_dataset: int,
                          seed: int = 0) -> tuple[EvalSet, EvalSet]:
    """Concatenate per-dataset sets, in sorted dataset-name order."""
    standard, adversarial = EvalSet(STANDARD), EvalSet(ADVERSARIAL)
    for name in sorted(datasets):
        s, a = build_eval_sets(datasets[name], n_per_dataset, seed, name)
        standard.pairs.extend(s.pairs)
        adversarial.pairs.extend(a.pairs)
    return standard, adversarial


def write_eval_sets(sets: Sequence[EvalSet], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sets:
            for p in s.pairs:
                fh.write(json.dumps(p.to_dict(s.kind), ensure_ascii=False) + "\n")


def read_eval_sets(path: str | Path) -> dict[str, EvalSet]:
    """Read a JSON-lines eval-set file; each line carries its ``set`` kind."""
    grouped: dict[str, list[EvalPair]] = defaultdict(list)
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                kind = raw["set"]
                ctx = raw["context"]
                pair = EvalPair(str(raw["pair_id"]), tuple([ctx] if isinstance(ctx, str) else ctx),
                                raw["response"], raw["category"], raw.get("dataset", ""), raw.get("record_id", ""))
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", index=i) from exc
            except KeyError as exc:
                raise FormatError("missing field", index=i, field_name=exc.args[0]) from exc
            grouped[kind].append(pair)
    unknown = set(grouped) - set(SET_KINDS)
    if unknown:
        raise FormatError(f"unknown set kinds {sorted(unknown)}")
    return {k: EvalSet(k, grouped[k]) for k in SET_KINDS if k in grouped}


@dataclass
class AnnotationRecord:
    pair_id: str
    scores: dict[str, dict[str, int]] = field(default_factory=dict)  # annotator -> criterion -> score

    def averaged(self) -> dict[str, float]:
        """Mean over annotators per criterion."""
        per: dict[str, list[int]] = defaultdict(list)
        for by_crit in self.scores.values():
            for c, s in by_crit.items():
                per[c].append(s)
        return {c: sum(v) / len(v) for c, v in per.items()}


def load_annotations(path: str | Path) -> dict[str, AnnotationRecord]:
    """Lines of ``{"pair_id", "annotator", "criterion", "score"}``; scores are integers 1-5."""
    out: dict[str, AnnotationRecord] = {}
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", index=i) from exc
            for key in ("pair_id", "annotator", "criterion", "score"):
                if key not in raw:
                    raise FormatError("missing field", index=i, field_name=key)
            try:
                crit = Criterion.parse(str(raw["criterion"])).value
            except ValueError:
                raise FormatError(f"unknown criterion {raw['criterion']!r}", index=i, field_name="criterion") from None
            score = raw["score"]
            if isinstance(score, bool) or not isinstance(score, int) or not 1 <= score <= 5:
                raise FormatError(f"score must be an integer in 1-5, got {score!r}", index=i, field_name="score")
            rec = out.setdefault(str(raw["pair_id"]), AnnotationRecord(str(raw["pair_id"])))
            rec.scores.setdefault(str(raw["annotator"]), {})[crit] = score
    return out


def annotator_ratings(annotations: Mapping[str, AnnotationRecord],
                      pair_ids: Sequence[str] | None = None) -> dict[str, dict[tuple[str, str], int]]:
    """Per annotator: (pair_id, criterion) -> score, for kappa."""
    keep = set(pair_ids) if pair_ids is not None else None
    out: dict[str, dict[tuple[str, str], int]] = defaultdict(dict)
    for pid, rec in annotations.items():
        if keep is not None and pid not in keep:
            continue
        for ann, by_crit in rec.scores.items():
            for c in CRITERIA:
                if c.value in by_crit:
                    out[ann][(pid, c.value)] = by_crit[c.value]
    return dict(out)
