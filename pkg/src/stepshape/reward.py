"""Hybrid outcome reward: a string-match rule with an LLM-judge fallback.

The rule path normalizes both answers (trim, casefold, collapse internal
whitespace, strip terminal ``.?!``) and compares; ``exact`` mode skips the
normalization. The judge is only consulted when the rule says 0, so agreeing
answers never cost a judge call. The final reward is max(rule, judge), which
keeps rewards binary.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

from .clients import ChatRequest, Verdict, parse_verdict
from .errors import JudgeUnparseable
from .prompts import load_prompt, render

logger = logging.getLogger(__name__)


class MatchMode(Enum):
    NORMALIZED = "normalized"
    EXACT = "exact"


@dataclass(frozen=True)
class RewardRecord:
    rule: int
    judge: int | None  # None when the judge was short-circuited away
    hybrid: int
    judge_raw: str | None = None


def normalize_answer(text: str) -> str:
    collapsed = " ".join(text.split())
    return collapsed.casefold().rstrip(".?!").strip()


def rule_reward(predicted: str, gold: str, mode: MatchMode = MatchMode.NORMALIZED) -> int:
    if mode == MatchMode.EXACT:
        return int(predicted == gold)
    return int(normalize_answer(predicted) == normalize_answer(gold))


def _call_judge(client, question: str, predicted: str, gold: str, prompt_overrides=None) -> tuple[str, Verdict]:
    template = load_prompt("judge_answer", prompt_overrides)
    content = render(template, question=question, predicted_answer=predicted, golden_answer=gold)
    raw = client.chat(ChatRequest(messages=[{"role": "user", "content": content}], temperature=0.0))
    return raw, parse_verdict(raw)


def judge_reward(
    client,
    question: str,
    predicted: str,
    gold: str,
    on_unparseable: str = "zero",
    prompt_overrides: dict | None = None,
) -> int:
    """Ask the judge whether the answers are equivalent; 1 for YES, 0 for NO.

    A reply with no verdict marker either counts as 0 with a logged warning
    (``on_unparseable="zero"``, the default) or raises JudgeUnparseable
    (``"raise"``).
    """
    try:
        _, verdict = _call_judge(client, question, predicted, gold, prompt_overrides)
    except JudgeUnparseable:
        if on_unparseable == "raise":
            raise
        logger.warning("judge reply had no verdict marker; scoring 0 (question=%r)", question[:80])
        return 0
    return int(verdict == Verdict.YES)


def hybrid_reward(
    client,
    question: str,
    predicted: str,
    gold: str,
    mode: MatchMode = MatchMode.NORMALIZED,
    on_unparseable: str = "zero",
    prompt_overrides: dict | None = None,
) -> RewardRecord:
    """Rule reward first; judge only when the rule rejects. Returns the full record."""
    rule = rule_reward(predicted, gold, mode)
    if rule == 1:
        return RewardRecord(rule=1, judge=None, hybrid=1)
    try:
        raw, verdict = _call_judge(client, question, predicted, gold, prompt_overrides)
        judge = int(verdict == Verdict.YES)
    except JudgeUnparseable:
        if on_unparseable == "raise":
            raise
        logger.warning("judge reply had no verdict marker; scoring 0 (question=%r)", question[:80])
        return RewardRecord(rule=0, judge=0, hybrid=0, judge_raw=None)
    return RewardRecord(rule=rule, judge=judge, hybrid=max(rule, judge), judge_raw=raw)
