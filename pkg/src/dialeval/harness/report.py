"""Correlation report over Standard/Adversarial sets: JSON bundle plus aligned text tables."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Mapping

from ..judge.judge import JudgeResult
from ..judge.prompts import CRITERIA
from .evalsets import SET_KINDS, AnnotationRecord, EvalSet, annotator_ratings
from .stats import DegenerateInput, aggregate_criteria, correlate, pairwise_kappa

logger = logging.getLogger(__name__)


class ReportError(ValueError):
    pass


class MissingAnnotations(ReportError):
    def __init__(self, missing: list[str]):
        super().__init__(f"{len(missing)} pair(s) lack human annotations: {', '.join(missing[:10])}"
                         + (" ..." if len(missing) > 10 else ""))
        self.missing = missing


def _cells(set_name: str, metric: Mapping[str, Mapping[str, float]], human: Mapping[str, Mapping[str, float]],
           pair_ids: list[str]) -> dict:
    block: dict = {"n": len(pair_ids), "criteria": {}, "average": None}
    per = []
    for c in CRITERIA:
        xs = [metric[p][c.value] for p in pair_ids]
        ys = [human[p][c.value] for p in pair_ids]
        try:
            cc = correlate(c.value, xs, ys)
        except DegenerateInput as exc:
            logger.warning("%s/%s: %s", set_name, c.value, exc)
            block["criteria"][c.value] = {"rho": None, "rho_p": None, "tau": None, "tau_p": None, "error": str(exc)}
            continue
        per.append(cc)
        block["criteria"][c.value] = {"rho": cc.pearson_rho, "rho_p": cc.pearson_p,
                                      "tau": cc.spearman_tau, "tau_p": cc.spearman_p}
    if len(per) == len(CRITERIA):
        agg = aggregate_criteria(per)
        block["average"] = {"rho": agg.rho, "tau": agg.tau}
    return block


def generate_report(sets: Mapping[str, EvalSet], judgments: Mapping[str, JudgeResult],
                    annotations: Mapping[str, AnnotationRecord], config_hash: str = "",
                    slm_scores: Mapping[str, float] | None = None) -> dict:
    """Correlate judge (and optionally SLM) scores with averaged human scores per set and criterion.

    Pairs whose judge failed on any criterion are left out of that set's judge
    tables (listwise), so all four criteria share one sample.
    """
    all_ids = [pid for kind in SET_KINDS if kind in sets for pid in sets[kind].pair_ids]
    missing = sorted({p for p in all_ids if p not in annotations
                      or any(c.value not in annotations[p].averaged() for c in CRITERIA)})
    if missing:
        raise MissingAnnotations(missing)
    no_judgment = sorted({p for p in all_ids if p not in judgments})
    if no_judgment:
        raise ReportError(f"{len(no_judgment)} pair(s) lack judge results: {', '.join(no_judgment[:10])}")
    human = {p: annotations[p].averaged() for p in all_ids}

    variants: dict = {"judge": {}}
    for kind in SET_KINDS:
        if kind not in sets:
            continue
        ids = sets[kind].pair_ids
        kept = [p for p in ids if not judgments[p].failed]
        metric = {p: {c: float(s) for c, s in judgments[p].scores.items()} for p in kept}
        block = _cells(kind, metric, human, kept)
        block["dropped"] = [p for p in ids if p not in kept]
        variants["judge"][kind] = block

    if slm_scores is not None:
        variants["slm"] = {}
        for kind in SET_KINDS:
            if kind not in sets:
                continue
            ids = sets[kind].pair_ids
            absent = [p for p in ids if p not in slm_scores]
            if absent:
                raise ReportError(f"{len(absent)} pair(s) lack SLM scores: {', '.join(absent[:10])}")
            metric = {p: {c.value: float(slm_scores[p]) for c in CRITERIA} for p in ids}
            block = _cells(kind, metric, human, ids)
            block["dropped"] = []
            variants["slm"][kind] = block

    kappa = pairwise_kappa(annotator_ratings(annotations, all_ids))
    n_cells = {name: sum(1 for blk in v.values() for col in [*blk["criteria"].values(), blk["average"] or {}]
                         for k in ("rho", "tau") if col.get(k) is not None)
               for name, v in variants.items()}
    return {
        "config_hash": config_hash,
        "sets": {k: len(sets[k]) for k in SET_KINDS if k in sets},
        "variants": variants,
        "cells": n_cells,
        "kappa": {"pairwise": kappa.pairwise, "mean": kappa.mean, "n_items": kappa.n_items},
    }


def _fmt(v: float | None, p: float | None = None) -> str:
    if v is None:
        return "n/a"
    return f"{v:.4f} ({p:.3g})" if p is not None else f"{v:.4f}"


def render_text(bundle: dict) -> str:
    cols = [c.value for c in CRITERIA] + ["Average"]
    lines = [f"config hash: {bundle['config_hash'] or '-'}", ""]
    for variant, sets in bundle["variants"].items():
        for kind, blk in sets.items():
            lines.append(f"[{variant}] {kind} set (n={blk['n']}, dropped={len(blk['dropped'])})")
            rows = [["", *cols]]
            for coef, pkey, label in (("rho", "rho_p", "Pearson rho"), ("tau", "tau_p", "Spearman tau")):
                row = [label]
                for c in CRITERIA:
                    cell = blk["criteria"][c.value]
                    row.append(_fmt(cell[coef], cell[pkey]))
                row.append(_fmt((blk["average"] or {}).get(coef)))
                rows.append(row)
            widths = [max(len(r[i]) for r in rows) for i in range(len(cols) + 1)]
            for r in rows:
                lines.append("  ".join(s.ljust(w) for s, w in zip(r, widths)).rstrip())
            lines.append("")
    kappa = bundle["kappa"]
    lines.append(f"inter-annotator agreement (Cohen's kappa): mean {_fmt(kappa['mean'])}")
    for pair, k in sorted(kappa["pairwise"].items()):
        lines.append(f"  {pair}  {k:.4f}  (n={kappa['n_items'][pair]})")
    return "\n".join(lines) + "\n"


def write_report(bundle: dict, out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    js = out_dir / "report.json"
    txt = out_dir / "report.txt"
    js.write_text(json.dumps(bundle, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    txt.write_text(render_text(bundle), encoding="utf-8")
    return js, txt
