"""Command-line entry point: ``dialeval <command> --config <file> [--seed N] [--out DIR]``.

Every command writes into ``<out>/<command>-<hash8>``, where the hash covers the
command, the resolved config and the checksums of its input files, so a rerun
with identical inputs lands in the same directory and rewrites the same files.

Exit codes: 0 success, 1 stage failure (``error.json`` in the run directory),
2 invalid config or usage, 3 run directory locked by another process.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import yaml

from .amr import ParseError, parse_penman, serialize_penman, simplify_graph
from .amr_backend import GraphCache, cache_path, make_backend, preprocess_texts, read_graph_file
from .config import ConfigError, RunConfig, load_config, resolve_path
from .data import (DatasetRecord, DialoguePair, FormatError, GraphLookup, MissingAmrError, expand_examples,
                   fill_random_negatives, ingest_dataset, text_hash)
from .runs import RunDir, RunLocked, RunManifest, fingerprint_inputs, run_id

logger = logging.getLogger("dialeval")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_LOCKED = 0, 1, 2, 3


class StageError(RuntimeError):
    pass


@dataclass
class Context:
    cfg: RunConfig
    base: Path | None  # directory of the config file; relative paths resolve against it
    run: RunDir | None = None

    def path(self, value: str) -> Path:
        return resolve_path(self.base, value)

    def paths(self, values: Sequence[str]) -> list[Path]:
        return [self.path(v) for v in values if v]


# ---------------------------------------------------------------------------
# inputs

def _dataset_files(ctx: Context) -> list[tuple[str, Path]]:
    d = ctx.cfg.data
    return [(split, ctx.path(p)) for split, p in (("train", d.train), ("validation", d.validation),
                                                  ("test", d.test)) if p]


def _load_split(ctx: Context, split: str) -> list[DatasetRecord]:
    value = getattr(ctx.cfg.data, split)
    if not value:
        return []
    records = ingest_dataset(ctx.path(value), ctx.cfg.data.format, split)
    if ctx.cfg.data.format == "augmented_pairs":
        records = fill_random_negatives(records, seed=ctx.cfg.train.seed)
    return records


def _simplified(raw: dict[str, str]) -> dict[str, str]:
    out = {}
    for key, penman in raw.items():
        try:
            out[key] = serialize_penman(simplify_graph(parse_penman(penman)))
        except ParseError as exc:
            logger.warning("skipping unparsable graph for %r: %s", key, exc)
    return out


def _graph_lookup(ctx: Context, data_files: Sequence[Path], records: Sequence[DatasetRecord] = ()) -> GraphLookup:
    """Graphs from records and ``amr.graphs`` files, overridden by the caches beside each data file."""
    sources = [_simplified(r.graphs) for r in records if r.graphs]
    sources += [_simplified(read_graph_file(p)) for p in ctx.paths(ctx.cfg.amr.graphs)]
    sources += [GraphCache.open(cache_path(f)).penman() for f in data_files]
    return GraphLookup(*sources)


def _require_graphs(lookup: GraphLookup, texts: Sequence[str]) -> None:
    missing = list(dict.fromkeys(t for t in lookup.missing(texts)))
    if missing:
        shown = "; ".join(repr(t) for t in missing[:5])
        raise MissingAmrError(f"missing AMR for {len(missing)} text(s), run preprocess-amr first: {shown}"
                              + (" ..." if len(missing) > 5 else ""))


def _eval_sets(ctx: Context):
    from .harness import read_eval_sets

    if not ctx.cfg.data.eval_sets:
        raise ConfigError("data.eval_sets is required for this command")
    merged: dict = {}
    for p in ctx.paths(ctx.cfg.data.eval_sets):
        for kind, s in read_eval_sets(p).items():
            if kind in merged:
                merged[kind].pairs.extend(s.pairs)
            else:
                merged[kind] = s
    return merged


def _eval_pairs(ctx: Context) -> list[DialoguePair]:
    """Every distinct pair of the configured eval sets, with graphs attached."""
    sets = _eval_sets(ctx)
    lookup = _graph_lookup(ctx, ctx.paths(ctx.cfg.data.eval_sets))
    seen: dict[str, DialoguePair] = {}
    texts: list[str] = []
    for s in sets.values():
        for p in s.pairs:
            texts.extend([*p.context, p.response])
            if p.pair_id not in seen:
                seen[p.pair_id] = DialoguePair(p.context, p.response, None, None, None, p.pair_id)
    _require_graphs(lookup, texts)
    return [DialoguePair(p.context, p.response, None, lookup.context_graph(p.context), lookup.get(p.response),
                         p.pair_id) for p in seen.values()]


def _read_scores(path: Path) -> dict[str, float]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if line.strip():
                try:
                    row = json.loads(line)
                    out[str(row["pair_id"])] = float(row["p_positive"])
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise FormatError(f"bad score line: {exc}", index=i) from exc
    return out


def _write_jsonl(path: Path, rows: Sequence[dict]) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
    return path


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# commands

def cmd_preprocess_amr(ctx: Context) -> list[Path]:
    cfg = ctx.cfg
    backend = make_backend(cfg.amr, ctx.base) if (cfg.amr.backend == "command" or cfg.amr.fixtures) else None
    known: dict[str, str] = {}
    for p in ctx.paths(cfg.amr.graphs):
        known.update(read_graph_file(p))
    jobs: list[tuple[Path, list[str], dict[str, str]]] = []
    for split, path in _dataset_files(ctx):
        records = _load_split(ctx, split)
        embedded = {text_hash(t): g for r in records for t, g in r.graphs.items()}
        jobs.append((path, [t for r in records for t in r.texts()], embedded))
    if cfg.data.eval_sets:
        from .harness import read_eval_sets

        for path in ctx.paths(cfg.data.eval_sets):
            texts = [t for s in read_eval_sets(path).values() for p in s.pairs for t in (*p.context, p.response)]
            jobs.append((path, texts, {}))
    if not jobs:
        raise ConfigError("preprocess-amr needs data.train/validation/test or data.eval_sets")

    summary, issues, written = {}, {}, []
    for path, texts, embedded in jobs:
        cache = GraphCache.open(cache_path(path))
        outcome = preprocess_texts(texts, backend, cache, {**known, **embedded})
        cache.save()
        snapshot = ctx.run.file(f"graphs/{cache.path.name}")
        snapshot.write_bytes(cache.path.read_bytes())
        written.append(snapshot)
        summary[path.name] = {"cache": cache.path.name, "graphs": len(outcome.graphs), "failed": len(outcome.issues)}
        issues.update(outcome.issues)
    written.append(_write_json(ctx.run.file("preprocess.json"), {"datasets": summary, "issues": issues}))
    ctx.run.register(*written)
    if issues:
        raise MissingAmrError(f"{len(issues)} text(s) could not be parsed or validated; see preprocess.json")
    return written


def cmd_train_slm(ctx: Context) -> list[Path]:
    from .training import evaluate_accuracy, train

    cfg = ctx.cfg
    if not cfg.data.train or not cfg.data.validation:
        raise ConfigError("train-slm needs data.train and data.validation")
    splits = {s: _load_split(ctx, s) for s in ("train", "validation", "test")}
    records = [r for rs in splits.values() for r in rs]
    lookup = _graph_lookup(ctx, [p for _, p in _dataset_files(ctx)], records)
    _require_graphs(lookup, [t for r in records for t in r.texts()])
    examples = {s: expand_examples(rs, lookup) for s, rs in splits.items()}
    logger.info("examples: %s", {s: len(v) for s, v in examples.items()})
    result = train(examples["train"], examples["validation"], cfg.train, cfg.model, cfg.ablation, ctx.run.path)
    summary = {"best_epoch": result.best_epoch, "best_val_accuracy": result.best_val_accuracy,
               "n_examples": {s: len(v) for s, v in examples.items()}}
    if examples["test"]:
        summary["test_accuracy"] = evaluate_accuracy(result.model, result.featurizer, examples["test"])
    return [result.checkpoint, ctx.run.path / "metrics.tsv", _write_json(ctx.run.file("train_summary.json"), summary)]


def _require_checkpoint(ctx: Context) -> Path:
    if not ctx.cfg.checkpoint:
        raise ConfigError("this command needs checkpoint (a train-slm checkpoint.pt)")
    return ctx.path(ctx.cfg.checkpoint)


def _checkpoint(ctx: Context):
    from .slm import load_checkpoint

    return load_checkpoint(_require_checkpoint(ctx))


def cmd_score(ctx: Context) -> list[Path]:
    from .slm import score_pairs

    _require_checkpoint(ctx)
    pairs = _eval_pairs(ctx)
    model, featurizer, _ = _checkpoint(ctx)
    scores = score_pairs(pairs, model, featurizer)
    rows = [{"pair_id": p.pair_id, "p_positive": s.p_positive, "score": s.formatted()} for p, s in zip(pairs, scores)]
    return [_write_jsonl(ctx.run.file("scores.jsonl"), rows)]


def cmd_judge(ctx: Context) -> list[Path]:
    from .judge import JudgeSettings, JudgeStore, item_from_pair, judge_batch, make_client

    cfg = ctx.cfg.judge
    if not cfg.scores:
        raise ConfigError("judge needs judge.scores (scores.jsonl from the score command)")
    pairs = _eval_pairs(ctx)
    scores = _read_scores(ctx.path(cfg.scores))
    absent = [p.pair_id for p in pairs if p.pair_id not in scores]
    if absent:
        raise StageError(f"{len(absent)} pair(s) have no SLM score: {', '.join(absent[:10])}")
    store = JudgeStore(ctx.run.path)
    if cfg.checkpoint:
        previous = ctx.path(cfg.checkpoint)
        if previous.resolve() != store.results_path.resolve():
            store.results_path.write_bytes(previous.read_bytes())
    items = [item_from_pair(p, scores[p.pair_id]) for p in pairs]
    results, failures = judge_batch(items, make_client(cfg, ctx.base), JudgeSettings.from_config(cfg), store)
    partial = [r.pair_id for r in results if r.failed]
    summary = {"pairs": len(items), "judged": len(results), "failed_pairs": [pid for pid, _ in failures],
               "partial_pairs": partial, "retries": sum(sum(r.retries.values()) for r in results)}
    written = [store.results_path, _write_json(ctx.run.file("judge_summary.json"), summary)]
    if store.audit_path.exists():
        written.append(store.audit_path)
    ctx.run.register(*written)
    if failures:
        raise StageError(f"judge failed on {len(failures)} pair(s): "
                         + "; ".join(f"{pid}: {msg}" for pid, msg in failures[:5]))
    return written


def cmd_evaluate(ctx: Context) -> list[Path]:
    from .harness import generate_report, load_annotations, write_report
    from .judge import load_judgments

    cfg = ctx.cfg
    if not cfg.eval.judgments or not cfg.data.annotations:
        raise ConfigError("evaluate needs eval.judgments and data.annotations")
    sets = _eval_sets(ctx)
    judgments = load_judgments(ctx.path(cfg.eval.judgments))
    annotations = load_annotations(ctx.path(cfg.data.annotations))
    slm = None
    if cfg.eval.include_slm:
        if not cfg.eval.scores:
            raise ConfigError("eval.include_slm needs eval.scores")
        slm = _read_scores(ctx.path(cfg.eval.scores))
    bundle = generate_report(sets, judgments, annotations, cfg.digest(), slm)
    return list(write_report(bundle, ctx.run.path))


def cmd_export_attention(ctx: Context) -> list[Path]:
    from .slm import export_attention_maps, write_attention_bundle

    _require_checkpoint(ctx)
    pairs = _eval_pairs(ctx)
    model, featurizer, _ = _checkpoint(ctx)
    written = []
    for p in pairs:
        written.extend(write_attention_bundle(export_attention_maps(p, model, featurizer),
                                              ctx.run.path / "attention" / p.pair_id))
    return written


COMMANDS: dict[str, tuple[Callable[[Context], list[Path]], str]] = {
    "preprocess-amr": (cmd_preprocess_amr, "parse, simplify and validate AMR graphs for every text"),
    "train-slm": (cmd_train_slm, "train the SLM and keep the best-validation checkpoint"),
    "score": (cmd_score, "score eval-set pairs with a trained SLM"),
    "judge": (cmd_judge, "run the LLM judge over eval-set pairs"),
    "evaluate": (cmd_evaluate, "correlate judge (and SLM) scores with human annotations"),
    "export-attention": (cmd_export_attention, "write per-layer, per-head attention maps as TSV"),
}


def _inputs(ctx: Context, command: str) -> list[Path]:
    """Files whose content determines the command's output (hashed into the run id)."""
    cfg = ctx.cfg
    data = [p for _, p in _dataset_files(ctx)] + ctx.paths(cfg.data.eval_sets)
    files = data + ctx.paths(cfg.amr.graphs)
    if command == "preprocess-amr":
        files += ctx.paths(cfg.amr.fixtures)
    else:
        files += [cache_path(p) for p in data]
    if command in ("score", "export-attention"):
        files += ctx.paths([cfg.checkpoint])
    if command == "judge":
        files += ctx.paths([cfg.judge.scores, cfg.judge.mock_rules, cfg.judge.checkpoint])
    if command == "evaluate":
        files = ctx.paths(cfg.data.eval_sets) + ctx.paths([cfg.eval.judgments, cfg.data.annotations])
        if cfg.eval.include_slm:
            files += ctx.paths([cfg.eval.scores])
    return files


# ---------------------------------------------------------------------------
# entry point

def _parse_sets(items: Sequence[str]) -> dict:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = yaml.safe_load(value)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dialeval", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO level on stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML or JSON config file")
        p.add_argument("--seed", type=int, default=None, help="overrides train.seed")
        p.add_argument("--out", default="runs", help="parent directory for run directories")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted config override, e.g. train.epochs=2 (repeatable)")
    return parser


def _error_record(command: str, rid: str, exc: BaseException) -> dict:
    kind = "missing AMR" if isinstance(exc, MissingAmrError) else type(exc).__name__
    return {"command": command, "run_id": rid, "error": kind, "type": type(exc).__name__, "message": str(exc)}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if not logging.getLogger().handlers:
        console = logging.StreamHandler()
        console.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        console.setLevel(logging.INFO if args.verbose else logging.WARNING)
        logging.getLogger().addHandler(console)
    try:
        overrides = _parse_sets(args.set)
        if args.seed is not None:
            overrides["train.seed"] = args.seed
        config_path = Path(args.config)
        cfg = load_config(config_path, overrides)
        ctx = Context(cfg, config_path.resolve().parent)
        inputs = fingerprint_inputs(_inputs(ctx, args.command))
    except (ConfigError, FormatError, OSError, yaml.YAMLError) as exc:
        print(json.dumps(_error_record(args.command, "", exc)), file=sys.stderr)
        return EXIT_CONFIG

    handler, _ = COMMANDS[args.command]
    rid = run_id(args.command, cfg.digest(), inputs)
    manifest = RunManifest(rid, args.command, cfg.digest(), inputs)
    try:
        with RunDir(args.out, manifest) as run:
            ctx.run = run
            log_handler = logging.FileHandler(run.file("run.log"), mode="w", encoding="utf-8")
            log_handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
            root = logging.getLogger()
            root.addHandler(log_handler)
            previous_level = root.level
            root.setLevel(min(previous_level, logging.INFO))
            status, code = "ok", EXIT_OK
            try:
                run.register(_write_json(run.file("config.json"), {"config": cfg.to_dict(), "base_dir": str(ctx.base)}))
                run.register(*handler(ctx))
            except ConfigError as exc:
                _write_json(run.file("error.json"), _error_record(args.command, rid, exc))
                status, code = "failed", EXIT_CONFIG
            except Exception as exc:  # every stage failure becomes an error record
                logger.exception("%s failed", args.command)
                _write_json(run.file("error.json"), _error_record(args.command, rid, exc))
                status, code = "failed", EXIT_FAILED
            finally:
                root.removeHandler(log_handler)
                root.setLevel(previous_level)
                log_handler.close()
            run.register(run.path / "run.log")
            if status != "ok":
                run.register(run.path / "error.json")
            run.finalize(status)
    except RunLocked as exc:
        print(json.dumps(_error_record(args.command, rid, exc)), file=sys.stderr)
        return EXIT_LOCKED
    print(run.path)
    if code:
        print((run.path / "error.json").read_text(encoding="utf-8").strip(), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
