import json

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dialeval.judge import (
    CLARIFICATION,
    CRITERIA,
    ClientError,
    Criterion,
    JudgeError,
    JudgeItem,
    JudgeSettings,
    JudgeStore,
    MockClient,
    OpenAIClient,
    ScoreParseError,
    TemplateError,
    TokenBucket,
    build_prompt,
    judge_batch,
    judge_response,
    parse_criterion_score,
    strip_input_block,
)

from _support import CANYON_AMR, FIXTURES

PROMPTS = FIXTURES / "prompts"
CANYON_CONTEXT = ["Would you recommend some places for sightseeing?", "How about great canyon?",
                  "Is it worth seeing?"]
MOVIE_RESPONSE = "The movie was really good, it was worth watching it."
NO_SLEEP = lambda s: None  # noqa: E731
FAST = JudgeSettings(backoff=0.0, rate_per_second=1e6)


def worked_prompt() -> str:
    return build_prompt(Criterion.COHERENCE, CANYON_CONTEXT, MOVIE_RESPONSE, CANYON_AMR.read_text(), 0.32,
                        style="spaced").rendered_text


def item(pair_id: str = "p1", slm: float = 0.5) -> JudgeItem:
    return JudgeItem(pair_id, ("hello there",), f"response for {pair_id}", "(h / hello)", slm)


# ---------------------------------------------------------------------------
# prompts

def test_worked_prompt_is_byte_identical():
    assert worked_prompt().encode() == (PROMPTS / "worked_coherence.txt").read_bytes()


@pytest.mark.parametrize("criterion", CRITERIA)
@pytest.mark.parametrize("style", ["compact", "spaced"])
def test_templates_match_golden_outside_input_block(criterion, style):
    golden = (PROMPTS / f"template_{criterion.value.lower()}.txt").read_text()
    rendered = build_prompt(criterion, ["a question?"], "an answer.", "(a / answer)", 0.7).rendered_text
    assert strip_input_block(rendered) == strip_input_block(golden)
    if style == "spaced" and criterion is not Criterion.COHERENCE:
        spaced = build_prompt(criterion, ["q?"], "a.", "(a / a)", 0.7, style="spaced").rendered_text
        assert criterion.question_text in spaced


def test_question_lines():
    assert Criterion.COHERENCE.question_text == "To what extent the response is well-structured, logical, and meaningful"
    assert Criterion.ENGAGINGNESS.question_text.startswith("How dull/interest is the text")


def test_section_order_and_score_format():
    text = build_prompt("groundedness", "ctx", "resp", "(r / resp)", 0.125).rendered_text
    keys = ["Rate the dialogue response.", "Input:", "Conversation Context: ctx", "Response: resp",
            "AMR Graph:", "SLM score: 0.12", "Evaluation Form (Score ONLY):", "Groundedness:"]
    positions = [text.index(k) for k in keys]
    assert positions == sorted(positions)


@pytest.mark.parametrize("kwargs", [dict(context=""), dict(response="  "), dict(amr_text=""), dict(slm_score=None),
                                    dict(slm_score=1.5), dict(slm_score=float("nan")), dict(criterion="")])
def test_empty_or_invalid_fields(kwargs):
    args = dict(criterion="Coherence", context="c", response="r", amr_text="(a / a)", slm_score=0.5)
    args.update(kwargs)
    with pytest.raises(TemplateError):
        build_prompt(**args)


def test_unknown_style():
    with pytest.raises(TemplateError):
        build_prompt("Coherence", "c", "r", "(a / a)", 0.5, style="fancy")


@given(st.floats(0.0, 1.0))
def test_score_always_two_decimals(s):
    line = [ln for ln in build_prompt("Naturalness", "c", "r", "(a / a)", s).rendered_text.splitlines()
            if ln.startswith("SLM score:")][0]
    value = line.split(": ")[1]
    assert len(value.split(".")[1]) == 2
    assert abs(float(value) - s) <= 0.005 + 1e-12


# ---------------------------------------------------------------------------
# score parsing

@pytest.mark.parametrize("text,criterion,expected", [
    ("Coherence: 4", "Coherence", 4),
    ("5\n", "Coherence", 5),
    ("3 because it is fine", "Naturalness", 3),
    ("**Groundedness:** 2", "Groundedness", 2),
    ("engagingness: 1.", "Engagingness", 1),
    ("4/5", "Naturalness", 4),
])
def test_parse_accepts(text, criterion, expected):
    assert parse_criterion_score(text, criterion) == expected


@pytest.mark.parametrize("text", ["The response is quite good.", "", "0", "6", "Coherence: seven", "3.5"])
def test_parse_rejects(text):
    with pytest.raises(ScoreParseError) as info:
        parse_criterion_score(text, "Coherence")
    assert info.value.raw == text


@given(st.sampled_from(CRITERIA), st.integers(-50, 50))
def test_parse_range(criterion, n):
    text = f"{criterion.value}: {n}"
    if 1 <= n <= 5:
        assert parse_criterion_score(text, criterion) == n
    else:
        with pytest.raises(ScoreParseError):
            parse_criterion_score(text, criterion)


# ---------------------------------------------------------------------------
# judging with the scripted mock

def per_criterion_rules(score: int) -> list[dict]:
    return [{"match": [f"\n{c.value}:\n"], "completions": [f"{c.value}: {score}"]} for c in CRITERIA]


def test_all_threes(tmp_path):
    store = JudgeStore(tmp_path)
    result = judge_response(item(), None, MockClient(per_criterion_rules(3)), FAST, store, sleep=NO_SLEEP)
    assert set(result.scores.values()) == {3}
    assert result.mean_score == 3.0
    assert store.load()["p1"].scores == result.scores  # persisted before return


def test_coherence_fails_twice_then_answers(tmp_path):
    rules = [{"match": ["\nCoherence:\n"], "completions": ["I think it is fine", "hmm", "2"]}] + per_criterion_rules(4)
    store = JudgeStore(tmp_path)
    client = MockClient(rules)
    result = judge_response(item(), None, client, FAST, store, sleep=NO_SLEEP)
    assert result.scores["Coherence"] == 2
    assert result.retries["Coherence"] == 2
    assert result.mean_score == (2 + 4 * 3) / 4
    audit = [json.loads(ln) for ln in store.audit_path.read_text().splitlines()]
    coh = [a for a in audit if a["criterion"] == "Coherence"]
    assert [a["status"] for a in coh] == ["parse_error", "parse_error", "ok"]
    assert coh[-1]["attempt"] == 2
    assert coh[1]["prompt"].endswith(CLARIFICATION + "\n")
    assert len(result.completions["Coherence"]) == 3


def test_failed_criterion_excluded_from_mean():
    rules = [{"match": ["\nNaturalness:\n"], "completions": ["no idea"]}] + per_criterion_rules(5)
    result = judge_response(item(), None, MockClient(rules), FAST, sleep=NO_SLEEP)
    assert result.failed == ["Naturalness"]
    assert result.mean_score == 5.0


def test_all_criteria_failing_raises():
    with pytest.raises(JudgeError):
        judge_response(item(), None, MockClient([], default="nothing useful"), FAST, sleep=NO_SLEEP)


def test_client_error_counts_as_failure():
    with pytest.raises(JudgeError):
        judge_response(item(), None, MockClient([]), FAST, sleep=NO_SLEEP)


def test_backoff_is_exponential():
    waits = []
    judge_response(item(), None, MockClient([{"match": ["Coherence:\n"], "completions": ["x", "y", "3"]}],
                                            default="4"),
                   JudgeSettings(backoff=0.5), sleep=waits.append)
    assert waits == [0.5, 1.0]


def test_two_runs_identical():
    a = judge_response(item(), None, MockClient(per_criterion_rules(2)), FAST, sleep=NO_SLEEP)
    b = judge_response(item(), None, MockClient(per_criterion_rules(2)), FAST, sleep=NO_SLEEP)
    assert a == b


@given(st.lists(st.integers(1, 5), min_size=4, max_size=4))
def test_mean_is_arithmetic_mean(scores):
    rules = [{"match": [f"\n{c.value}:\n"], "completions": [str(s)]} for c, s in zip(CRITERIA, scores)]
    result = judge_response(item(), None, MockClient(rules), FAST, sleep=NO_SLEEP)
    assert list(result.scores.values()) == scores
    assert result.mean_score == sum(scores) / 4


# ---------------------------------------------------------------------------
# batches

def test_batch_order_and_resume(tmp_path):
    items = [item(f"p{i}", i / 10) for i in range(8)]
    rules = [{"match": [f"Response: response for p{i}\n"], "completions": [str(1 + i % 5)]} for i in range(8)]
    store = JudgeStore(tmp_path)
    results, failures = judge_batch(items[:5], MockClient(rules), JudgeSettings(backoff=0, max_in_flight=4,
                                                                               rate_per_second=1e6), store)
    assert not failures
    assert [r.pair_id for r in results] == [f"p{i}" for i in range(5)]
    client = MockClient(rules)
    results, _ = judge_batch(items, client, JudgeSettings(backoff=0, max_in_flight=3, rate_per_second=1e6), store)
    assert [r.pair_id for r in results] == [it.pair_id for it in items]
    assert len(client.calls) == 3 * 4  # only the three new pairs
    lines = store.results_path.read_text().splitlines()
    assert [json.loads(ln)["pair_id"] for ln in lines] == [it.pair_id for it in items]
    assert all(r.mean_score == 1 + i % 5 for i, r in enumerate(results))


def test_batch_reports_failures():
    items = [item("good"), item("bad")]
    rules = [{"match": ["response for good"], "completions": ["3"]}]
    results, failures = judge_batch(items, MockClient(rules), FAST)
    assert [r.pair_id for r in results] == ["good"]
    assert [f[0] for f in failures] == ["bad"]


def test_token_bucket_rate():
    now = [0.0]

    def sleep(dt):
        now[0] += dt

    bucket = TokenBucket(rate=2.0, capacity=1.0, clock=lambda: now[0], sleep=sleep)
    for _ in range(5):
        bucket.acquire()
    assert now[0] == pytest.approx(2.0)


# ---------------------------------------------------------------------------
# HTTP client (mock transport, no network)

def _client(handler, monkeypatch, **kw):
    monkeypatch.setenv("TEST_KEY", "secret")
    return OpenAIClient("m", "http://judge.invalid/v1", "TEST_KEY", transport=httpx.MockTransport(handler),
                        sleep=NO_SLEEP, **kw)


def test_openai_client_success(monkeypatch):
    seen = {}

    def handler(request):
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "Coherence: 4"}}]})

    assert _client(handler, monkeypatch).complete("hi") == "Coherence: 4"
    assert seen["auth"] == "Bearer secret"
    assert seen["body"]["temperature"] == 0.0
    assert seen["body"]["messages"] == [{"role": "user", "content": "hi"}]


def test_openai_client_retries_transient(monkeypatch):
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) < 3:
            return httpx.Response(503)
        return httpx.Response(200, json={"choices": [{"message": {"content": "2"}}]})

    assert _client(handler, monkeypatch, max_retries=2).complete("x") == "2"
    assert len(calls) == 3


def test_openai_client_gives_up(monkeypatch):
    with pytest.raises(ClientError):
        _client(lambda r: httpx.Response(429), monkeypatch, max_retries=1).complete("x")
    with pytest.raises(ClientError):
        _client(lambda r: httpx.Response(401, text="nope"), monkeypatch).complete("x")


def test_openai_client_needs_credential(monkeypatch):
    monkeypatch.delenv("TEST_KEY", raising=False)
    with pytest.raises(ClientError):
        OpenAIClient("m", "http://judge.invalid", "TEST_KEY")
