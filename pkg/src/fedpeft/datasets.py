"""Closed-ended task ingestion, label mapping, splits and a synthetic generator.

Two JSONL record shapes are accepted:

* multiple choice: ``{"prompt": str, "options": [str, ...], "answer_idx": int}``
* scored sentiment: ``{"text": str, "score": float}``
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .backbone import Instance, tokenize, truncate_prompt

log = logging.getLogger(__name__)

LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
SENTIMENT_CLASSES = ("negative", "neutral", "positive")
SENTIMENT_LOW, SENTIMENT_HIGH = -0.05, 0.05

MCQA_TEMPLATE = "Question: {question}\n{options}\nAnswer: "
SENTIMENT_TEMPLATE = ("Sentence: {question}\nWhat is the sentiment? "
                      "A. negative B. neutral C. positive\nAnswer: ")
SYNTH_TEMPLATE = "{question} Answer: "

# Class keywords for synthetic tasks; upper case so no filler word contains one.
SYNTH_KEYWORDS = ("RED", "BLUE", "GREEN", "GOLD", "PINK", "GRAY", "TEAL", "NAVY",
                  "LIME", "RUST", "SAND", "JADE")
SYNTH_FILLER = ("the", "report", "notes", "a", "patient", "market", "was", "seen",
                "with", "signs", "of", "in", "review", "after", "stable", "quarter",
                "case", "data", "shows", "item", "level", "daily", "moved", "plan")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class TaskDef:
    name: str
    answers: tuple = ("A", "B", "C", "D")
    template: str = MCQA_TEMPLATE

    def __post_init__(self):
        object.__setattr__(self, "answers", tuple(self.answers))
        if len(self.answers) < 2:
            raise DatasetError("a task needs at least two answers")
        if len(set(self.answers)) != len(self.answers):
            raise DatasetError("answers must be distinct")

    @property
    def k(self):
        return len(self.answers)


@dataclass
class SplitSet:
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def check(self, n):
        parts = [set(self.train), set(self.validation), set(self.test)]
        total = sum(len(p) for p in parts)
        if total != len(set().union(*parts)) or set().union(*parts) != set(range(n)):
            raise DatasetError("splits are not a disjoint cover of the index range")
        return self


# ------------------------------------------------------------------ loading

def _kind(rec):
    if "prompt" in rec or "options" in rec or "answer_idx" in rec:
        return "mcqa"
    if "score" in rec or "text" in rec:
        return "sentiment"
    return None


def load_jsonl(path):
    """Load records in file order; errors name the offending line."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise DatasetError(f"{path}:{lineno}: expected a JSON object")
            kind = _kind(rec)
            if kind == "mcqa":
                missing = [k for k in ("prompt", "options", "answer_idx") if k not in rec]
            elif kind == "sentiment":
                missing = [k for k in ("text", "score") if k not in rec]
            else:
                missing = ["prompt/options/answer_idx or text/score"]
            if missing:
                raise DatasetError(f"{path}:{lineno}: missing required field(s) {missing}")
            records.append(rec)
    return records


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


# ------------------------------------------------------------------ preprocessing

def map_sentiment_score(score):
    """Continuous score -> class name; exactly ±0.05 counts as neutral."""
    score = float(score)
    if not np.isfinite(score):
        raise DatasetError(f"non-finite sentiment score {score}")
    if score < SENTIMENT_LOW:
        return "negative"
    if score > SENTIMENT_HIGH:
        return "positive"
    return "neutral"


def sentiment_to_mcqa(records):
    """Scored sentences as three-way records answered by A/B/C."""
    out = []
    for rec in records:
        label = map_sentiment_score(rec["score"])
        out.append({"prompt": rec["text"], "options": list(SENTIMENT_CLASSES),
                    "answer_idx": SENTIMENT_CLASSES.index(label)})
    return out


def filter_valid_mcqa(records, stats=None):
    """Keep single-choice records with non-empty options and a valid answer index."""
    kept = []
    dropped = {"empty_option": 0, "bad_index": 0}
    for rec in records:
        options = rec.get("options") or []
        idx = rec.get("answer_idx")
        if not options or any(not isinstance(o, str) or not o.strip() for o in options):
            dropped["empty_option"] += 1
            continue
        if isinstance(idx, bool) or not isinstance(idx, int) or not 0 <= idx < len(options):
            dropped["bad_index"] += 1
            continue
        kept.append(rec)
    if stats is not None:
        stats.update(kept=len(kept), **dropped)
    if dropped["empty_option"] or dropped["bad_index"]:
        log.info("filter_valid_mcqa kept %d, dropped %s", len(kept), dropped)
    return kept


def make_splits(n, rng, val_fraction=0.10, test_fraction=0.0, allow_small=False):
    """Shuffle 0..n-1; validation gets the first ⌊val_fraction·n⌋ of the shuffle.

    ``test_fraction`` applies only when the source has no test split of its own.
    """
    if n < 10 and not allow_small:
        raise DatasetError(f"{n} instances is too few to split (need 10, or allow_small=True)")
    order = rng.generator().permutation(n)
    n_val = int(np.floor(val_fraction * n))
    n_test = int(np.floor(test_fraction * n))
    if n_val + n_test > n:
        raise DatasetError("validation and test fractions exceed the data")
    val = sorted(int(i) for i in order[:n_val])
    test = sorted(int(i) for i in order[n_val:n_val + n_test])
    train = sorted(int(i) for i in order[n_val + n_test:])
    return SplitSet(train, val, test)


def render_prompt(rec, task):
    opts = "\n".join(f"{LETTERS[i]}. {o}" for i, o in enumerate(rec["options"]))
    return task.template.format(question=rec["prompt"], options=opts)


def to_instances(records, task, max_len=512):
    """Tokenized, length-safe instances whose candidates are the task's answers."""
    cands = tuple(tuple(tokenize(a)) for a in task.answers)
    out = []
    for rec in records:
        gold = int(rec["answer_idx"])
        if len(rec["options"]) != task.k:
            raise DatasetError(f"record has {len(rec['options'])} options, task expects {task.k}")
        inst = Instance(tuple(tokenize(render_prompt(rec, task))), cands[gold], gold, cands)
        out.append(truncate_prompt(inst, max_len))
    return out


def labels_of(records):
    return np.array([int(r["answer_idx"]) for r in records], dtype=np.int64)


# ------------------------------------------------------------------ synthetic

def synth_task(k=4, n=1000, noise=0.0, rng=None, filler=(2, 4)):
    """Keyword-classification records with uniform classes and label noise.

    The keyword for the true class appears once among filler words; with
    probability ``noise`` the label is resampled uniformly over all ``k``
    classes, so Bayes accuracy is ``1 - noise * (k - 1) / k``.
    """
    if k < 2 or k > len(SYNTH_KEYWORDS):
        raise DatasetError(f"k must lie in [2, {len(SYNTH_KEYWORDS)}]")
    if not 0.0 <= noise < 0.5:
        raise DatasetError("noise must lie in [0, 0.5)")
    if rng is None:
        from .numkit import Rng
        from .numkit.rng import SYNTH
        rng = Rng(42, SYNTH)
    gen = rng.generator()
    lo, hi = filler
    records = []
    for _ in range(n):
        true = int(gen.integers(k))
        before = [SYNTH_FILLER[j] for j in gen.integers(len(SYNTH_FILLER), size=int(gen.integers(lo, hi + 1)))]
        after = [SYNTH_FILLER[j] for j in gen.integers(len(SYNTH_FILLER), size=int(gen.integers(lo, hi + 1)))]
        label = int(gen.integers(k)) if gen.random() < noise else true
        text = " ".join([*before, SYNTH_KEYWORDS[true], *after])
        records.append({"prompt": text, "options": [f"class {SYNTH_KEYWORDS[c].lower()}" for c in range(k)],
                        "answer_idx": label})
    return records


def synth_taskdef(k=4):
    return TaskDef(name=f"synthetic-{k}", answers=tuple(LETTERS[:k]), template=SYNTH_TEMPLATE)


def keyword_lookup(rec):
    """Reference classifier for synthetic records: the class whose keyword appears."""
    words = rec["prompt"].split()
    for c, kw in enumerate(SYNTH_KEYWORDS):
        if kw in words:
            return c
    raise DatasetError("no class keyword in record")


def bayes_accuracy(k, noise):
    return 1.0 - noise * (k - 1) / k
