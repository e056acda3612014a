"""Text-to-AMR backends and the on-disk graph cache kept beside each dataset file."""

from __future__ import annotations

import json
import logging
import re
import shlex
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol

from .amr import ParseError, iter_penman_corpus, parse_penman, serialize_penman, simplify_graph, validate_graph
from .data import MissingAmrError, is_text_hash, text_hash

logger = logging.getLogger(__name__)

CACHE_SUFFIX = ".amr.jsonl"


class BackendError(RuntimeError):
    pass


class AmrBackend(Protocol):
    def parse(self, text: str) -> str:
        """Return PENMAN text for one sentence or utterance."""


_SNT = re.compile(r"^#\s*::snt\s+(.*)$")


def _corpus_with_sentences(text: str) -> dict[str, str]:
    """Blank-line separated PENMAN blocks, each carrying a ``# ::snt`` line."""
    out = {}
    for block in re.split(r"\n\s*\n", text):
        lines = block.strip().splitlines()
        snt = [m.group(1).strip() for ln in lines if (m := _SNT.match(ln.strip()))]
        body = "\n".join(ln for ln in lines if not ln.lstrip().startswith("#"))
        if snt and body.strip():
            out[snt[0]] = body
    return out


def read_graph_file(path: str | Path) -> dict[str, str]:
    """``text_hash -> penman`` from a JSON map, JSON lines or a ``# ::snt`` corpus."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError:
            obj = None
        if isinstance(obj, dict) and not {"text", "penman"} <= set(obj):
            return {text_hash(k): v for k, v in obj.items()}
        rows = [json.loads(ln) for ln in text.splitlines() if ln.strip()]
        return {text_hash(r["text"]): r["penman"] for r in rows}
    return {text_hash(k): v for k, v in _corpus_with_sentences(text).items()}


class FixtureBackend:
    """Looks sentences up in pre-parsed files.

    Accepted files: a JSON object ``{text: penman}``, JSON lines with ``text``
    and ``penman`` keys, or a PENMAN corpus annotated with ``# ::snt`` lines.
    """

    def __init__(self, paths: Iterable[str | Path]):
        self.paths = [Path(p) for p in paths]
        self.table: dict[str, str] = {}
        for p in self.paths:
            self.table.update(read_graph_file(p))

    def parse(self, text: str) -> str:
        try:
            return self.table[text_hash(text)]
        except KeyError:
            raise MissingAmrError(f"no fixture graph for {text!r}") from None


class CommandBackend:
    """Runs an external parser once per sentence: text on stdin, PENMAN on stdout."""

    def __init__(self, command: str, timeout: float = 60.0):
        self.argv = shlex.split(command)
        self.timeout = timeout

    def parse(self, text: str) -> str:
        try:
            proc = subprocess.run(self.argv, input=text, capture_output=True, text=True, timeout=self.timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise BackendError(f"AMR command failed: {exc}") from exc
        if proc.returncode != 0:
            raise BackendError(f"AMR command exited {proc.returncode}: {proc.stderr.strip()[:300]}")
        graphs = list(iter_penman_corpus(proc.stdout))
        if len(graphs) != 1:
            raise BackendError(f"AMR command returned {len(graphs)} graphs for one input")
        return "\n".join(ln for ln in proc.stdout.strip().splitlines() if not ln.lstrip().startswith("#"))


def make_backend(cfg, base: Path | None = None) -> AmrBackend:
    from .config import resolve_path

    if cfg.backend == "fixture":
        return FixtureBackend([resolve_path(base, p) for p in cfg.fixtures])
    return CommandBackend(cfg.command, cfg.timeout)


def cache_path(dataset_path: str | Path) -> Path:
    p = Path(dataset_path)
    return p.with_name(p.name + CACHE_SUFFIX)


@dataclass
class GraphCache:
    """``text_hash -> {text, raw, penman}``; ``penman`` is the simplified graph."""

    path: Path
    entries: dict[str, dict] = field(default_factory=dict)

    @classmethod
    def open(cls, path: str | Path) -> "GraphCache":
        path = Path(path)
        entries = {}
        if path.exists():
            for line in path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    row = json.loads(line)
                    entries[row["text_hash"]] = row
        return cls(path, entries)

    def penman(self) -> dict[str, str]:
        return {h: row["penman"] for h, row in self.entries.items()}

    def save(self) -> Path:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", encoding="utf-8") as fh:
            for h in sorted(self.entries):
                fh.write(json.dumps(self.entries[h], sort_keys=True, ensure_ascii=False) + "\n")
        return self.path


@dataclass
class PreprocessOutcome:
    graphs: dict[str, str] = field(default_factory=dict)  # text_hash -> simplified penman
    parsed: int = 0
    cached: int = 0
    issues: dict[str, list[str]] = field(default_factory=dict)  # text -> problems

    @property
    def ok(self) -> bool:
        return not self.issues


def preprocess_texts(texts: Iterable[str], backend: AmrBackend | None, cache: GraphCache,
                     known: dict[str, str] | None = None) -> PreprocessOutcome:
    """Parse, simplify and validate every distinct text, reusing the cache and any known graphs.

    The backend is only called for texts absent from both.
    """
    out = PreprocessOutcome()
    known = {k if is_text_hash(k) else text_hash(k): v for k, v in (known or {}).items()}
    for text in dict.fromkeys(t.strip() for t in texts if t.strip()):
        h = text_hash(text)
        if h in cache.entries:
            out.graphs[h] = cache.entries[h]["penman"]
            out.cached += 1
            continue
        try:
            raw = known[h] if h in known else (backend.parse(text) if backend else None)
            if raw is None:
                raise MissingAmrError(f"no graph for {text!r}")
            g = simplify_graph(parse_penman(raw))
        except (MissingAmrError, BackendError, ParseError) as exc:
            out.issues[text] = [str(exc)]
            continue
        report = validate_graph(g)
        if not report.ok:
            out.issues[text] = [f"{i.message} at {i.location}" for i in report.errors]
            continue
        penman = serialize_penman(g)
        cache.entries[h] = {"text_hash": h, "text": text, "raw": raw, "penman": penman}
        out.graphs[h] = penman
        out.parsed += 1
    logger.info("AMR preprocessing: %d parsed, %d from cache, %d failed", out.parsed, out.cached, len(out.issues))
    return out
