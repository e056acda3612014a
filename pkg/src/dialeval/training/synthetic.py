"""Synthetic adversarial benchmark with known separability.

Every record has one context, one positive and one adversarial negative.
Positives make the context keyword a core argument (``:ARGn``) of the reply.
Adversarial negatives copy the keyword into another template where it only
modifies an unrelated noun (``:mod``).

Twins share their word bag, so word identity alone does not separate the
classes. Each graph has several wordings, sprinkled with discourse markers;
test records use a wording never seen in training. The role pattern carries
over to the test split, the word order does not.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from ..data import DatasetRecord

KEYWORDS = (
    "canyon", "school", "machine", "museum", "beach", "garden", "market", "castle",
    "river", "bridge", "lake", "temple", "island", "forest", "village", "harbor",
)
ACTIVITIES = ("visit", "see", "explore", "photograph", "tour", "enjoy")

CONTEXTS = (
    ("would you recommend the {kw} ? i want to {act} something new .",
     "(r / recommend-01 :ARG0 (y / you) :ARG1 (k / {kw}) :purpose (a / {act}-01 :ARG0 (i / i)))"),
    ("is the {kw} worth the trip ? we plan to {act} it .",
     "(w / worth-02 :ARG1 (k / {kw}) :ARG2 (t / trip) :purpose (a / {act}-01 :ARG0 (w2 / we) :ARG1 k))"),
    ("tell me about the {kw} , should we {act} it this weekend ?",
     "(t / tell-01 :ARG1 (k / {kw}) :ARG2 (i / i) :purpose (a / {act}-01 :ARG0 (w / we) :ARG1 k))"),
)

# Twins share one word bag. In the positive the keyword fills a core role; in
# the adversarial it only modifies the twin's noun. Each side lists a graph and
# three wordings of it: training draws from the first two, test uses the last.
TWINS = (
    {"positive": ("(s / show-01 :ARG0 (p / photo) :ARG1 (r / recommend-01 :ARG1 (a / {act}-01 :ARG0 (y / you) :ARG1 (k / {kw}))))",
                  "the photo shows you should {act} the {kw} .",
                  "the photo shows that the {kw} is what you should {act} .",
                  "you should {act} the {kw} , the photo shows ."),
     "adversarial": ("(s / show-01 :ARG0 (p / photo :mod (k / {kw})) :ARG1 (r / recommend-01 :ARG1 (a / {act}-01 :ARG0 (y / you))))",
                     "the {kw} photo shows you should {act} .",
                     "the photo of the {kw} shows that you should {act} .",
                     "you should {act} , the photo of the {kw} shows .")},
    {"positive": ("(s / say-01 :ARG0 (b / book) :ARG1 (w / worth-02 :ARG1 (k / {kw}) :ARG2 (a / {act}-01)))",
                  "the book says the {kw} is worth a {act} .",
                  "the book says that a {act} of the {kw} is worth it .",
                  "the {kw} is worth a {act} , says the book ."),
     "adversarial": ("(s / say-01 :ARG0 (b / book :mod (k / {kw})) :ARG1 (w / worth-02 :ARG2 (a / {act}-01)))",
                     "the book about the {kw} says it is worth a {act} .",
                     "the {kw} book says that a {act} is worth it .",
                     "it is worth a {act} , says the {kw} book .")},
    {"positive": ("(l / love-01 :ARG0 (t / teacher) :ARG1 (a / {act}-01 :ARG0 t :ARG1 (k / {kw})))",
                  "the teacher loved to {act} the {kw} .",
                  "to {act} the {kw} is what the teacher loved .",
                  "the {kw} , the teacher loved to {act} it ."),
     "adversarial": ("(l / love-01 :ARG0 (t / teacher :mod (k / {kw})) :ARG1 (a / {act}-01 :ARG0 t))",
                     "the teacher in the {kw} loved to {act} .",
                     "to {act} is what the teacher in the {kw} loved .",
                     "in the {kw} , the teacher loved to {act} .")},
    {"positive": ("(t / take-01 :ARG0 (g / guide) :ARG1 (y / you) :ARG3 (k / {kw}) :purpose (a / {act}-01))",
                  "the guide takes you to the {kw} to {act} .",
                  "the guide takes you to {act} at the {kw} .",
                  "to {act} , the guide takes you to the {kw} ."),
     "adversarial": ("(t / take-01 :ARG0 (g / guide :mod (k / {kw})) :ARG1 (y / you) :purpose (a / {act}-01))",
                     "the guide of the {kw} takes you to {act} .",
                     "the guide from the {kw} takes you to {act} .",
                     "to {act} , the {kw} guide takes you .")},
)

# Discourse markers carry no content, so they leave the graph unchanged.
FILLERS = ("well", "oh", "um", "uh", "yeah")


@dataclass(frozen=True)
class SyntheticSplit:
    train: list[DatasetRecord]
    validation: list[DatasetRecord]
    test: list[DatasetRecord]


def _render(rng: random.Random, wordings, held_out: bool, **slots) -> str:
    words = (wordings[-1] if held_out else rng.choice(wordings[:-1])).format(**slots).split()
    for _ in range(rng.randint(0, 2)):
        words.insert(rng.randrange(len(words)), rng.choice(FILLERS))
    return " ".join(words)


def _record(rng: random.Random, held_out: bool, rid: str, split: str) -> DatasetRecord:
    kw = rng.choice(KEYWORDS)
    act = rng.choice(ACTIVITIES)
    ctx_t, ctx_g = rng.choice(CONTEXTS)
    pos_g, *pos_t = rng.choice(TWINS)["positive"]
    adv_g, *adv_t = rng.choice(TWINS)["adversarial"]
    adv_act = rng.choice(ACTIVITIES)
    context = ctx_t.format(kw=kw, act=act)
    pos = _render(rng, pos_t, held_out, kw=kw, act=act)
    adv = _render(rng, adv_t, held_out, kw=kw, act=adv_act)
    graphs = {
        context: ctx_g.format(kw=kw, act=act),
        pos: pos_g.format(kw=kw, act=act),
        adv: adv_g.format(kw=kw, act=adv_act),
    }
    return DatasetRecord([context], [pos], [], [adv], graphs, record_id=rid, split=split)


def make_adversarial_benchmark(n_examples: int = 200, seed: int = 0,
                               fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)) -> SyntheticSplit:
    """``n_examples // 2`` records (one positive + one adversarial negative each), split by record.

    Train and validation use the training wordings; test records use the
    paraphrased wordings, whose graphs are unchanged.
    """
    rng = random.Random(seed)
    n_records = n_examples // 2
    n_train = round(fractions[0] * n_records)
    n_val = round(fractions[1] * n_records)
    train, val, test = [], [], []
    for i in range(n_records):
        if i < n_train:
            train.append(_record(rng, False, f"syn{seed}-{i:04d}", "train"))
        elif i < n_train + n_val:
            val.append(_record(rng, False, f"syn{seed}-{i:04d}", "validation"))
        else:
            test.append(_record(rng, True, f"syn{seed}-{i:04d}", "test"))
    return SyntheticSplit(train, val, test)
