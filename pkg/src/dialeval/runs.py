"""Run directories: deterministic ids, advisory locks, manifests with checksums."""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path


class RunLocked(RuntimeError):
    pass


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def fingerprint_inputs(paths: list[Path]) -> dict[str, str]:
    """sha256 of every existing input file, keyed by its path as given."""
    return {str(p): sha256_file(p) for p in sorted(set(paths), key=str) if p.is_file()}


def run_id(command: str, config_digest: str, inputs: dict[str, str]) -> str:
    blob = json.dumps({"command": command, "config": config_digest, "inputs": sorted(inputs.values())},
                      sort_keys=True)
    return f"{command}-{hashlib.sha256(blob.encode()).hexdigest()[:8]}"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    run_id: str
    command: str
    config_hash: str
    inputs: dict[str, str]
    artifacts: dict[str, str] = field(default_factory=dict)  # path relative to run dir -> sha256
    started: str = field(default_factory=_now)
    finished: str = ""
    status: str = "running"

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "command": self.command,
            "config_hash": self.config_hash,
            "inputs": self.inputs,
            "artifacts": self.artifacts,
            "started": self.started,
            "finished": self.finished,
            "status": self.status,
        }

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(d["run_id"], d["command"], d["config_hash"], d["inputs"], d.get("artifacts", {}),
                   d.get("started", ""), d.get("finished", ""), d.get("status", ""))


class RunDir:
    """A run directory guarded by an O_EXCL lock file while a command writes into it."""

    MANIFEST = "manifest.json"
    LOCK = ".lock"

    def __init__(self, root: str | Path, manifest: RunManifest):
        self.path = Path(root) / manifest.run_id
        self.manifest = manifest
        self._locked = False

    def __enter__(self) -> "RunDir":
        self.path.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path / self.LOCK, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RunLocked(f"run directory {self.path} is locked by another process "
                            f"(remove {self.LOCK} if that process is gone)") from None
        with os.fdopen(fd, "w") as fh:
            fh.write(f"{os.getpid()} {time.time():.0f}\n")
        self._locked = True
        for stale in (self.MANIFEST, "error.json"):
            (self.path / stale).unlink(missing_ok=True)
        return self

    def __exit__(self, *exc) -> None:
        if self._locked:
            (self.path / self.LOCK).unlink(missing_ok=True)
            self._locked = False

    def file(self, name: str) -> Path:
        p = self.path / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def register(self, *paths: Path) -> None:
        for p in paths:
            rel = str(Path(p).resolve().relative_to(self.path.resolve()))
            self.manifest.artifacts[rel] = sha256_file(p)

    def finalize(self, status: str = "ok") -> Path:
        self.manifest.status = status
        self.manifest.finished = _now()
        path = self.path / self.MANIFEST
        path.write_text(json.dumps(self.manifest.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def verify_manifest(run_path: str | Path) -> list[str]:
    """Return problems: listed artifacts that are missing or whose checksum changed."""
    run_path = Path(run_path)
    m = RunManifest.load(run_path / RunDir.MANIFEST)
    problems = []
    for rel, digest in sorted(m.artifacts.items()):
        p = run_path / rel
        if not p.is_file():
            problems.append(f"missing artifact {rel}")
        elif sha256_file(p) != digest:
            problems.append(f"checksum mismatch for {rel}")
    return problems
