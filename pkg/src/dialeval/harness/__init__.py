"""Evaluation sets, correlation statistics and reports."""

from .evalsets import (
    ADVERSARIAL,
    SET_KINDS,
    STANDARD,
    AnnotationRecord,
    EvalPair,
    EvalSet,
    InsufficientData,
    annotator_ratings,
    build_eval_sets,
    build_eval_sets_multi,
    load_annotations,
    read_eval_sets,
    write_eval_sets,
)
from .report import MissingAnnotations, ReportError, generate_report, render_text, write_report
from .stats import (
    Correlation,
    CorrelationReport,
    CriterionCorrelation,
    DegenerateInput,
    KappaReport,
    aggregate_criteria,
    cohen_kappa,
    correlate,
    pairwise_kappa,
    pearson,
    rankdata,
    spearman,
)
