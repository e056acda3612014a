"""Criterion prompts for the LLM judge and parsing of its 1-5 answers."""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from importlib import resources
from string import Template
from typing import Sequence

STYLES = ("compact", "spaced")

# Appended to the prompt when a completion could not be parsed.
CLARIFICATION = "Answer with the score only, as a single integer from 1 to 5."


class TemplateError(ValueError):
    pass


class ScoreParseError(ValueError):
    def __init__(self, message: str, raw: str):
        super().__init__(f"{message}: {raw!r}")
        self.raw = raw


class Criterion(str, enum.Enum):
    NATURALNESS = "Naturalness"
    COHERENCE = "Coherence"
    ENGAGINGNESS = "Engagingness"
    GROUNDEDNESS = "Groundedness"

    @property
    def question_text(self) -> str:
        return _QUESTIONS[self]

    def question(self, style: str = "compact") -> str:
        if style == "spaced":
            return _SPACED_QUESTIONS.get(self, self.question_text)
        return self.question_text

    @classmethod
    def parse(cls, name: str) -> "Criterion":
        for c in cls:
            if c.value.lower() == name.strip().lower():
                return c
        raise ValueError(f"unknown criterion {name!r}")


CRITERIA = tuple(Criterion)

_QUESTIONS = {
    Criterion.ENGAGINGNESS: "How dull/interest is the text of the dialogue response?",
    Criterion.NATURALNESS: "To what extent the response is naturally written",
    Criterion.COHERENCE: "To what extent the response is well-structured, logical, and meaningful",
    Criterion.GROUNDEDNESS: "To what extent the response is grounded in facts present in the context",
}
# The worked example phrases the coherence question differently.
_SPACED_QUESTIONS = {
    Criterion.COHERENCE: "How coherent is the text of the dialogue response?",
}


def load_template(style: str) -> Template:
    if style not in STYLES:
        raise TemplateError(f"unknown template style {style!r}; known: {STYLES}")
    text = resources.files("dialeval.judge").joinpath("templates", f"{style}.txt").read_text(encoding="utf-8")
    return Template(text)


@dataclass(frozen=True)
class JudgePrompt:
    criterion: Criterion
    rendered_text: str


def format_context(context: str | Sequence[str]) -> str:
    if isinstance(context, str):
        return context.strip()
    return " ".join(u.strip() for u in context if u.strip())


def build_prompt(criterion: Criterion | str, context: str | Sequence[str], response: str,
                 amr_text: str, slm_score: float, style: str = "compact") -> JudgePrompt:
    """Render one criterion prompt. ``amr_text`` is inserted verbatim (trailing newlines dropped)."""
    if criterion is None or criterion == "":
        raise TemplateError("criterion is empty")
    criterion = criterion if isinstance(criterion, Criterion) else Criterion.parse(criterion)
    ctx = format_context(context or "")
    fields = {"context": ctx, "response": (response or "").strip(), "amr_text": (amr_text or "").rstrip("\n")}
    for name, value in fields.items():
        if not value.strip():
            raise TemplateError(f"{name} is empty")
    if slm_score is None or isinstance(slm_score, bool):
        raise TemplateError("slm_score is empty")
    slm_score = float(slm_score)
    if math.isnan(slm_score) or not 0.0 <= slm_score <= 1.0:
        raise TemplateError(f"slm_score must lie in [0, 1], got {slm_score}")
    text = load_template(style).substitute(
        question=criterion.question(style),
        context=fields["context"],
        response=fields["response"],
        amr=fields["amr_text"],
        slm_score=f"{slm_score:.2f}",
        criterion=criterion.value,
    )
    return JudgePrompt(criterion, text)


def with_clarification(prompt_text: str) -> str:
    return prompt_text + CLARIFICATION + "\n"


def strip_input_block(text: str) -> str:
    """Drop the lines from ``Input:`` through the ``SLM score:`` line (inclusive)."""
    lines = text.split("\n")
    try:
        start = lines.index("Input:")
    except ValueError:
        raise TemplateError("no Input block found") from None
    ends = [i for i, ln in enumerate(lines) if i > start and ln.startswith("SLM score:")]
    if not ends:
        raise TemplateError("Input block is not terminated by an SLM score line")
    return "\n".join(lines[:start] + lines[ends[-1] + 1:])


_SCORE_TOKEN = re.compile(r"^(\d+)(?:/5)?[.,;:!)]*$")


def parse_criterion_score(completion_text: str, criterion: Criterion | str) -> int:
    """Accept ``"<Criterion>: n"``, a bare integer, or an integer as the first token."""
    criterion = criterion if isinstance(criterion, Criterion) else Criterion.parse(criterion)
    raw = completion_text if completion_text is not None else ""
    text = raw.strip()
    labelled = re.match(rf"^[\W_]*{criterion.value}[\W_]*?:[\s*]*(\S+)", text, re.IGNORECASE)
    if labelled:
        token = labelled.group(1).strip("*")
    elif text:
        token = text.split()[0].strip("*")
    else:
        raise ScoreParseError("empty completion", raw)
    m = _SCORE_TOKEN.match(token)
    if not m:
        raise ScoreParseError("no integer score found", raw)
    score = int(m.group(1))
    if not 1 <= score <= 5:
        raise ScoreParseError(f"score {score} outside 1-5", raw)
    return score
