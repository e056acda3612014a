"""Correlation and agreement statistics."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from itertools import combinations
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy import stats as sps


class DegenerateInput(ValueError):
    pass


class Correlation(NamedTuple):
    coefficient: float
    p: float


def _as_pair(x: Sequence[float], y: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise DegenerateInput(f"series must be 1-d with equal length, got {x.shape} and {y.shape}")
    if len(x) < 3:
        raise DegenerateInput(f"need n >= 3 observations, got {len(x)}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise DegenerateInput("series contain non-finite values")
    return x, y


def t_test_p(r: float, n: int) -> float:
    """Two-sided p-value of t = r * sqrt((n - 2) / (1 - r^2)) with n - 2 degrees of freedom."""
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return float(min(1.0, 2.0 * sps.t.sf(abs(t), n - 2)))


def pearson(x: Sequence[float], y: Sequence[float]) -> Correlation:
    x, y = _as_pair(x, y)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInput("correlation is undefined for a constant series")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    return Correlation(r, t_test_p(r, len(x)))


def rankdata(x: Sequence[float]) -> np.ndarray:
    """1-based ranks with ties given their average (mid-)rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> Correlation:
    x, y = _as_pair(x, y)
    return pearson(rankdata(x), rankdata(y))


def cohen_kappa(a: Sequence, b: Sequence) -> float:
    """Unweighted kappa (p_o - p_e) / (1 - p_e) from the contingency table of two raters."""
    if len(a) != len(b):
        raise DegenerateInput("rating vectors differ in length")
    if not a:
        raise DegenerateInput("no ratings")
    n = len(a)
    cats = sorted(set(a) | set(b), key=repr)
    index = {c: i for i, c in enumerate(cats)}
    table = np.zeros((len(cats), len(cats)))
    for u, v in zip(a, b):
        table[index[u], index[v]] += 1
    p_o = np.trace(table) / n
    p_e = float((table.sum(1) / n) @ (table.sum(0) / n))
    if p_e >= 1.0:
        raise DegenerateInput("kappa is undefined when both raters use one shared category")
    return float((p_o - p_e) / (1.0 - p_e))


@dataclass(frozen=True)
class KappaReport:
    pairwise: dict[str, float]  # "annA|annB" -> kappa
    mean: float | None
    n_items: dict[str, int]


def pairwise_kappa(ratings: Mapping[str, Mapping[object, int]]) -> KappaReport:
    """Kappa for every annotator pair over the items both rated; undefined pairs are skipped."""
    pairwise: dict[str, float] = {}
    n_items: dict[str, int] = {}
    for a, b in combinations(sorted(ratings), 2):
        shared = sorted(set(ratings[a]) & set(ratings[b]), key=repr)
        if not shared:
            continue
        try:
            k = cohen_kappa([ratings[a][i] for i in shared], [ratings[b][i] for i in shared])
        except DegenerateInput:
            continue
        pairwise[f"{a}|{b}"] = k
        n_items[f"{a}|{b}"] = len(shared)
    mean = sum(pairwise.values()) / len(pairwise) if pairwise else None
    return KappaReport(pairwise, mean, n_items)


@dataclass(frozen=True)
class CriterionCorrelation:
    criterion: str
    pearson_rho: float
    pearson_p: float
    spearman_tau: float
    spearman_p: float
    n: int


def correlate(criterion: str, metric: Sequence[float], human: Sequence[float]) -> CriterionCorrelation:
    r = pearson(metric, human)
    s = spearman(metric, human)
    return CriterionCorrelation(criterion, r.coefficient, r.p, s.coefficient, s.p, len(metric))


@dataclass(frozen=True)
class CorrelationReport:
    per_criterion: dict[str, CriterionCorrelation]
    rho: float
    tau: float
    n: int


def aggregate_criteria(reports: Sequence[CriterionCorrelation]) -> CorrelationReport:
    """Average rho and tau over the four criterion reports, keeping the breakdown."""
    if len(reports) != 4:
        raise ValueError(f"expected four criterion reports, got {len(reports)}")
    sizes = Counter(r.n for r in reports)
    if len(sizes) != 1:
        raise ValueError(f"criterion reports differ in sample size: {dict(sizes)}")
    return CorrelationReport(
        {r.criterion: r for r in reports},
        sum(r.pearson_rho for r in reports) / 4,
        sum(r.spearman_tau for r in reports) / 4,
        reports[0].n,
    )
