"""Per-pair judging: four criterion prompts, retries on unparsable output, audit trail."""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from ..amr import serialize_penman
from ..data import DialoguePair
from .client import ClientError, LlmClient, TokenBucket
from .prompts import CRITERIA, Criterion, ScoreParseError, build_prompt, parse_criterion_score, with_clarification

logger = logging.getLogger(__name__)


class JudgeError(RuntimeError):
    pass


@dataclass
class JudgeSettings:
    max_retries: int = 2
    backoff: float = 1.0
    style: str = "compact"
    max_in_flight: int = 4
    rate_per_second: float = 5.0

    @classmethod
    def from_config(cls, cfg) -> "JudgeSettings":
        return cls(cfg.max_retries, cfg.backoff, cfg.style, cfg.max_in_flight, cfg.rate_per_second)


@dataclass
class JudgeItem:
    pair_id: str
    context: tuple[str, ...]
    response: str
    amr_text: str
    slm_score: float


@dataclass
class CriterionOutcome:
    score: int | None
    completions: list[str]
    retries: int
    error: str | None = None


@dataclass
class JudgeResult:
    pair_id: str
    scores: dict[str, int | None]
    slm_score_used: float
    completions: dict[str, list[str]] = field(default_factory=dict)
    retries: dict[str, int] = field(default_factory=dict)

    @property
    def failed(self) -> list[str]:
        return [c for c, s in self.scores.items() if s is None]

    @property
    def mean_score(self) -> float:
        ok = [s for s in self.scores.values() if s is not None]
        if not ok:
            raise JudgeError(f"no criterion succeeded for pair {self.pair_id}")
        return sum(ok) / len(ok)

    def to_dict(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "scores": self.scores,
            "mean_score": self.mean_score,
            "failed": self.failed,
            "slm_score_used": self.slm_score_used,
            "completions": self.completions,
            "retries": self.retries,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "JudgeResult":
        return cls(d["pair_id"], dict(d["scores"]), d["slm_score_used"],
                   {k: list(v) for k, v in d.get("completions", {}).items()}, dict(d.get("retries", {})))


class JudgeStore:
    """Append-only result and audit logs (one JSON object per line)."""

    def __init__(self, out_dir: str | Path):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.results_path = self.dir / "judgments.jsonl"
        self.audit_path = self.dir / "audit.jsonl"
        self._lock = threading.Lock()

    def _append(self, path: Path, record: dict) -> None:
        line = json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n"
        with self._lock, open(path, "a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()

    def audit(self, record: dict) -> None:
        self._append(self.audit_path, record)

    def save(self, result: JudgeResult) -> None:
        self._append(self.results_path, result.to_dict())

    def load(self) -> dict[str, JudgeResult]:
        return load_judgments(self.results_path) if self.results_path.exists() else {}


def load_judgments(path: str | Path) -> dict[str, JudgeResult]:
    out: dict[str, JudgeResult] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                r = JudgeResult.from_dict(json.loads(line))
                out[r.pair_id] = r
    return out


def _judge_criterion(item: JudgeItem, criterion: Criterion, client: LlmClient, settings: JudgeSettings,
                     store: JudgeStore | None, limiter: TokenBucket | None,
                     sleep: Callable[[float], None]) -> CriterionOutcome:
    base = build_prompt(criterion, item.context, item.response, item.amr_text, item.slm_score,
                        settings.style).rendered_text
    completions: list[str] = []
    error = None
    for attempt in range(settings.max_retries + 1):
        if attempt and settings.backoff > 0:
            sleep(settings.backoff * 2 ** (attempt - 1))
        prompt = base if attempt == 0 else with_clarification(base)
        if limiter is not None:
            limiter.acquire()
        record = {"pair_id": item.pair_id, "criterion": criterion.value, "attempt": attempt,
                  "prompt_sha256": hashlib.sha256(prompt.encode("utf-8")).hexdigest(), "prompt": prompt}
        try:
            text = client.complete(prompt)
        except ClientError as exc:
            error = f"client error: {exc}"
            if store:
                store.audit({**record, "status": "client_error", "error": str(exc), "completion": None})
            continue
        completions.append(text)
        try:
            score = parse_criterion_score(text, criterion)
        except ScoreParseError as exc:
            error = str(exc)
            if store:
                store.audit({**record, "status": "parse_error", "error": error, "completion": text})
            continue
        if store:
            store.audit({**record, "status": "ok", "score": score, "completion": text})
        return CriterionOutcome(score, completions, attempt)
    logger.warning("pair %s: %s failed after %d attempts (%s)", item.pair_id, criterion.value,
                   settings.max_retries + 1, error)
    return CriterionOutcome(None, completions, settings.max_retries, error)


def _assemble(item: JudgeItem, outcomes: dict[Criterion, CriterionOutcome]) -> JudgeResult:
    result = JudgeResult(
        item.pair_id,
        {c.value: outcomes[c].score for c in CRITERIA},
        item.slm_score,
        {c.value: outcomes[c].completions for c in CRITERIA},
        {c.value: outcomes[c].retries for c in CRITERIA},
    )
    if len(result.failed) == len(CRITERIA):
        raise JudgeError(f"all criteria failed for pair {item.pair_id}")
    return result


def item_from_pair(pair: DialoguePair, slm_score: float, amr_text: str | None = None) -> JudgeItem:
    if amr_text is None:
        amr_text = serialize_penman(pair.merged_graph())
    return JudgeItem(pair.pair_id or "", tuple(pair.context), pair.response, amr_text, slm_score)


def judge_response(pair: DialoguePair | JudgeItem, slm_score: float | None, client: LlmClient,
                   settings: JudgeSettings | None = None, store: JudgeStore | None = None,
                   amr_text: str | None = None, sleep: Callable[[float], None] = time.sleep) -> JudgeResult:
    """Score one pair on all four criteria; the result is persisted (if a store is given) before return."""
    settings = settings or JudgeSettings()
    item = pair if isinstance(pair, JudgeItem) else item_from_pair(pair, slm_score, amr_text)
    outcomes = {c: _judge_criterion(item, c, client, settings, store, None, sleep) for c in CRITERIA}
    result = _assemble(item, outcomes)
    if store:
        store.save(result)
    return result


def judge_batch(items: Sequence[JudgeItem], client: LlmClient, settings: JudgeSettings | None = None,
                store: JudgeStore | None = None, sleep: Callable[[float], None] = time.sleep,
                limiter: TokenBucket | None = None) -> tuple[list[JudgeResult], list[tuple[str, str]]]:
    """Judge many pairs with bounded concurrency.

    Work units are (pair, criterion) and may finish in any order; results are
    written in input order as soon as every earlier pair is complete. Pairs
    already present in ``store`` are reused. Returns (results, failures), where
    failures lists (pair_id, message) for pairs whose four criteria all failed.
    """
    settings = settings or JudgeSettings()
    done = store.load() if store else {}
    todo = [it for it in items if it.pair_id not in done]
    if done:
        logger.info("resuming: %d of %d pairs already judged", len(items) - len(todo), len(items))
    limiter = limiter or TokenBucket(settings.rate_per_second, sleep=sleep)

    outcomes: dict[str, dict[Criterion, CriterionOutcome]] = {it.pair_id: {} for it in todo}
    finished: dict[int, JudgeResult | str] = {}
    lock = threading.Lock()
    cursor = [0]

    def flush() -> None:
        while cursor[0] in finished:
            r = finished[cursor[0]]
            if store and isinstance(r, JudgeResult):
                store.save(r)
            cursor[0] += 1

    def run(idx: int, item: JudgeItem, criterion: Criterion) -> None:
        out = _judge_criterion(item, criterion, client, settings, store, limiter, sleep)
        with lock:
            outcomes[item.pair_id][criterion] = out
            if len(outcomes[item.pair_id]) == len(CRITERIA):
                try:
                    finished[idx] = _assemble(item, outcomes[item.pair_id])
                except JudgeError as exc:
                    finished[idx] = str(exc)
                flush()

    with ThreadPoolExecutor(max_workers=settings.max_in_flight) as pool:
        futures = [pool.submit(run, i, it, c) for i, it in enumerate(todo) for c in CRITERIA]
        for f in futures:
            f.result()

    failures = [(it.pair_id, finished[i]) for i, it in enumerate(todo) if isinstance(finished[i], str)]
    fresh = {it.pair_id: finished[i] for i, it in enumerate(todo) if isinstance(finished[i], JudgeResult)}
    results = [done.get(it.pair_id) or fresh[it.pair_id] for it in items if it.pair_id in done or it.pair_id in fresh]
    return results, failures
