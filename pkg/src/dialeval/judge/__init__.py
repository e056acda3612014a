"""LLM-judge prompts, clients and dispatch."""

from .client import ClientError, LlmClient, MockClient, OpenAIClient, TokenBucket, make_client
from .judge import (
    CriterionOutcome,
    JudgeError,
    JudgeItem,
    JudgeResult,
    JudgeSettings,
    JudgeStore,
    item_from_pair,
    judge_batch,
    judge_response,
    load_judgments,
)
from .prompts import (
    CLARIFICATION,
    CRITERIA,
    Criterion,
    JudgePrompt,
    ScoreParseError,
    TemplateError,
    build_prompt,
    parse_criterion_score,
    strip_input_block,
)
