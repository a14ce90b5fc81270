"""Coverage diagnostics: how much of the gold path failing rollouts touch.

Entity coverage is lexical: the fraction of the path's distinct entities (or
their aliases) appearing in the rollout text as case-insensitive,
word-boundary substrings. Triplet coverage is judged: each rollout step is
checked against the rendered gold chain by the substep judge; the YES count
over the path's hop count can exceed 1 when a rollout restates hops across
several steps, so reports carry the raw value plus a clamped variant.

Buckets group negative rollouts by their group's positive ratio so the two
coverages can be compared across easy and hard groups.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence

from .clients import ChatRequest, Verdict, parse_verdict
from .errors import ClientError, EmptyPath, JudgeUnparseable
from .model import ReasoningPath, render_gt_chain
from .prompts import load_prompt, render
from .segmenter import Trajectory


@dataclass(frozen=True)
class CoverageRecord:
    entity_coverage: float
    triplet_coverage: float
    matched_entities: tuple[str, ...] = ()
    judged_steps: int = 0


@dataclass(frozen=True)
class RatioBucket:
    positive_ratio: float  # lower edge of the bucket
    mean_entity_cov: float
    mean_triplet_cov: float
    mean_triplet_cov_clamped: float
    raw_exceeds_one: bool
    count: int


def _canonical(name: str) -> str:
    return " ".join(name.split()).casefold()


def _boundary_pattern(name: str) -> re.Pattern:
    words = [re.escape(w) for w in name.split()]
    return re.compile(r"(?<!\w)" + r"\s+".join(words) + r"(?!\w)", re.IGNORECASE)


def match_entities(text: str, path: ReasoningPath, aliases: dict | None = None) -> list[str]:
    """The path's distinct entities found in text, first spelling preserved.

    Case-variant node duplicates count as one entity. An entity matches when
    its name or any alias occurs on word boundaries; internal whitespace in
    names matches any whitespace run in the text.
    """
    if not path.nodes:
        raise EmptyPath("path has no nodes")
    alias_map = {}
    for key, names in (aliases or {}).items():
        alias_map[_canonical(key)] = list(names)
    seen: dict[str, str] = {}
    for node in path.nodes:
        seen.setdefault(_canonical(node), node)
    matched = []
    for canon, spelling in seen.items():
        surfaces = [spelling] + alias_map.get(canon, [])
        if any(_boundary_pattern(surface).search(text) for surface in surfaces):
            matched.append(spelling)
    return matched


def entity_coverage(text: str, path: ReasoningPath, aliases: dict | None = None) -> float:
    """|matched distinct entities| / |distinct entities in the path|."""
    if not path.nodes:
        raise EmptyPath("path has no nodes")
    distinct = {_canonical(n) for n in path.nodes}
    matched = match_entities(text, path, aliases)
    return len(matched) / len(distinct)


def triplet_coverage(
    trajectory: Trajectory,
    path: ReasoningPath,
    judge_client,
    max_workers: int = 1,
    prompt_overrides: dict | None = None,
) -> float:
    """YES-judged steps over the path's hop count. Raw: may exceed 1.

    Each trajectory step is judged against the rendered chain with the
    substep prompt (step order explicitly ignored by the prompt).
    Unparseable verdicts count as NO; client errors are collected and
    re-raised once with every failing step listed.
    """
    if not path.nodes:
        raise EmptyPath("path has no nodes")
    steps = [s.text.strip() for s in trajectory.steps]
    if not steps:
        return 0.0
    gt_text = render_gt_chain(path)
    template = load_prompt("judge_substep", prompt_overrides)

    def judge_one(text: str):
        content = render(template, ground_truth=gt_text, substep=text)
        reply = judge_client.chat(
            ChatRequest(messages=[{"role": "user", "content": content}], temperature=0.0)
        )
        try:
            return parse_verdict(reply) == Verdict.YES
        except JudgeUnparseable:
            return False

    results: list[bool | None] = [None] * len(steps)
    errors: list[tuple[int, ClientError]] = []

    def run(i: int):
        try:
            results[i] = judge_one(steps[i])
        except ClientError as exc:
            errors.append((i, exc))

    if max_workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            list(pool.map(run, range(len(steps))))
    else:
        for i in range(len(steps)):
            run(i)
    if errors:
        failed = sorted(i for i, _ in errors)
        first = errors[0][1]
        raise ClientError(first.kind, f"judge failed on steps {failed}: {first}") from first
    yes = sum(1 for r in results if r)
    return yes / path.hops


def coverage_record(
    trajectory: Trajectory,
    path: ReasoningPath,
    judge_client,
    aliases: dict | None = None,
    max_workers: int = 1,
    prompt_overrides: dict | None = None,
) -> CoverageRecord:
    matched = match_entities(trajectory.raw_text, path, aliases)
    distinct = {_canonical(n) for n in path.nodes}
    return CoverageRecord(
        entity_coverage=len(matched) / len(distinct),
        triplet_coverage=triplet_coverage(trajectory, path, judge_client, max_workers, prompt_overrides),
        matched_entities=tuple(matched),
        judged_steps=len(trajectory.steps),
    )


def bucket_by_positive_ratio(
    groups: Sequence[tuple[Sequence[int], Sequence[CoverageRecord | None]]],
    bin_width: float = 0.125,
) -> list[RatioBucket]:
    """Average negative-rollout coverage per group-positive-ratio bucket.

    Each input pair is (rewards, records) with records aligned to rewards;
    only negative rollouts with a record contribute. Bucket index is
    floor(ratio / bin_width), clamped so ratio 1.0 lands in the top bucket;
    the default width of 0.125 puts every exact N=8 ratio on a bin edge.
    Only non-empty buckets are returned, ascending.
    """
    if not 0.0 < bin_width <= 1.0:
        raise ValueError("bin_width must lie in (0, 1]")
    n_buckets = math.ceil(1.0 / bin_width)
    per_bucket: dict[int, list[CoverageRecord]] = {}
    for rewards, records in groups:
        if len(rewards) == 0:
            continue
        if len(records) != len(rewards):
            raise ValueError("records must align with rewards")
        ratio = sum(1 for r in rewards if r == 1) / len(rewards)
        idx = min(int(math.floor(ratio / bin_width)), n_buckets - 1)
        for reward, record in zip(rewards, records):
            if reward == 0 and record is not None:
                per_bucket.setdefault(idx, []).append(record)
    buckets = []
    for idx in sorted(per_bucket):
        records = per_bucket[idx]
        n = len(records)
        raw = [r.triplet_coverage for r in records]
        buckets.append(
            RatioBucket(
                positive_ratio=idx * bin_width,
                mean_entity_cov=sum(r.entity_coverage for r in records) / n,
                mean_triplet_cov=sum(raw) / n,
                mean_triplet_cov_clamped=sum(min(1.0, v) for v in raw) / n,
                raw_exceeds_one=any(v > 1.0 for v in raw),
                count=n,
            )
        )
    return buckets


def render_coverage_csv(buckets: Sequence[RatioBucket]) -> str:
    """The coverage report as CSV text (trailing newline included)."""
    lines = ["ratio_bucket,mean_entity_cov,mean_triplet_cov,count,mean_triplet_cov_clamped,raw_exceeds_one"]
    for b in buckets:
        lines.append(
            f"{b.positive_ratio!r},{b.mean_entity_cov!r},{b.mean_triplet_cov!r},"
            f"{b.count},{b.mean_triplet_cov_clamped!r},{str(b.raw_exceeds_one).lower()}"
        )
    return "\n".join(lines) + "\n"
