"""Trajectory segmentation: tag regions, reasoning steps, final answer.

Recognized tag pairs: ``<think>...</think>``, ``<begin_of_thought>...
<end_of_thought>`` and ``<begin_of_solution>...<end_of_solution>``. Anything
outside a tagged region becomes an Other segment, so segments always tile the
raw text byte for byte. A missing closer closes the segment at end of text.

Steps are split at ``Step <n>:`` markers found inside Thought and Solution
content (never inside ``<think>``). Declared numbers are kept as metadata but
step indices are re-numbered 1..K in textual order, so gaps or repeats in the
model's own numbering do not corrupt downstream arrays.
"""

from __future__ import annotations

import re
from bisect import bisect_left
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

from .errors import OffsetsMismatch


class SegmentKind(Enum):
    THINK = "think"
    THOUGHT = "thought"
    SOLUTION = "solution"
    OTHER = "other"


class ModelKind(Enum):
    INSTRUCT = "instruct"
    THINKING = "thinking"


_TAG_PAIRS = (
    ("<think>", "</think>", SegmentKind.THINK),
    ("<begin_of_thought>", "<end_of_thought>", SegmentKind.THOUGHT),
    ("<begin_of_solution>", "<end_of_solution>", SegmentKind.SOLUTION),
)
_ALL_TAGS = tuple(t for pair in _TAG_PAIRS for t in pair[:2])

# A step marker is "Step <digits>:" at start of text or preceded by whitespace;
# mid-word hits like "misStep 2:" do not count.
_STEP_RE = re.compile(r"(?:^|(?<=\s))Step\s+(\d+)\s*:")

_ANSWER_PHRASE = "Therefore, the answer is"
_ANSWER_RE = re.compile(re.escape(_ANSWER_PHRASE), re.IGNORECASE)


@dataclass
class Segment:
    kind: SegmentKind
    char_span: tuple[int, int]
    content_span: tuple[int, int]  # char_span minus the enclosing tags
    text: str
    token_span: tuple[int, int] | None = None


@dataclass
class Step:
    index: int  # 1-based, re-numbered in textual order
    declared: int  # the number the model wrote
    char_span: tuple[int, int]
    text: str
    token_span: tuple[int, int] | None = None


@dataclass
class Trajectory:
    raw_text: str
    model_kind: ModelKind
    segments: list[Segment]
    steps: list[Step]
    answer: str | None
    token_offsets: list[tuple[int, int]] | None = None


def _find_next_opener(text: str, pos: int):
    best = None
    for opener, closer, kind in _TAG_PAIRS:
        at = text.find(opener, pos)
        if at >= 0 and (best is None or at < best[0]):
            best = (at, opener, closer, kind)
    return best


def _split_segments(text: str) -> list[Segment]:
    segments: list[Segment] = []

    def other(lo: int, hi: int):
        if hi > lo:
            segments.append(Segment(SegmentKind.OTHER, (lo, hi), (lo, hi), text[lo:hi]))

    pos = 0
    while pos < len(text):
        hit = _find_next_opener(text, pos)
        if hit is None:
            other(pos, len(text))
            break
        at, opener, closer, kind = hit
        other(pos, at)
        content_start = at + len(opener)
        close_at = text.find(closer, content_start)
        if close_at < 0:
            span_end = content_end = len(text)
        else:
            content_end = close_at
            span_end = close_at + len(closer)
        segments.append(Segment(kind, (at, span_end), (content_start, content_end), text[at:span_end]))
        pos = span_end
    return segments


def _split_steps(text: str, segments: Sequence[Segment]) -> list[Step]:
    steps: list[Step] = []
    for seg in segments:
        if seg.kind not in (SegmentKind.THOUGHT, SegmentKind.SOLUTION):
            continue
        lo, hi = seg.content_span
        marks = [(m.start() + lo, int(m.group(1))) for m in _STEP_RE.finditer(text[lo:hi])]
        for i, (start, declared) in enumerate(marks):
            end = marks[i + 1][0] if i + 1 < len(marks) else hi
            steps.append(Step(0, declared, (start, end), text[start:end]))
    for i, step in enumerate(steps):
        step.index = i + 1
    return steps


def _clean_answer(raw: str) -> str:
    s = raw.strip()
    while True:
        before = s
        for tag in _ALL_TAGS:
            if s.endswith(tag):
                s = s[: -len(tag)].rstrip()
        s = s.rstrip(".?!").rstrip()
        if s == before:
            return s


def extract_answer(trajectory: Trajectory) -> str | None:
    """Text after the last "Therefore, the answer is" in the Solution segment.

    Falls back to scanning the whole raw text when no Solution segment exists.
    Trailing punctuation and closing tags are trimmed. Returns None when the
    phrase never occurs or nothing is left after trimming.
    """
    last: str | None = None
    solutions = [s for s in trajectory.segments if s.kind == SegmentKind.SOLUTION]
    if solutions:
        for seg in solutions:
            lo, hi = seg.content_span
            content = trajectory.raw_text[lo:hi]
            for m in _ANSWER_RE.finditer(content):
                last = content[m.end() :]
    else:
        for m in _ANSWER_RE.finditer(trajectory.raw_text):
            last = trajectory.raw_text[m.end() :]
    if last is None:
        return None
    cleaned = _clean_answer(last)
    return cleaned if cleaned else None


def segment_trajectory(raw_text: str, model_kind: ModelKind = ModelKind.INSTRUCT) -> Trajectory:
    """Parse one rollout string into segments, steps and the final answer."""
    segments = _split_segments(raw_text)
    steps = _split_steps(raw_text, segments)
    trajectory = Trajectory(raw_text, model_kind, segments, steps, None)
    trajectory.answer = extract_answer(trajectory)
    return trajectory


def _validate_offsets(raw_text: str, offsets: Sequence[tuple[int, int]]):
    if len(raw_text) == 0 and len(offsets) == 0:
        return
    if not offsets:
        raise OffsetsMismatch("no token offsets for non-empty text")
    expected = 0
    for i, (start, end) in enumerate(offsets):
        if start != expected:
            raise OffsetsMismatch(f"token {i} starts at {start}, expected {expected}")
        if end <= start:
            raise OffsetsMismatch(f"token {i} is empty or reversed: ({start}, {end})")
        expected = end
    if expected != len(raw_text):
        raise OffsetsMismatch(f"offsets end at {expected}, text has {len(raw_text)} chars")


def _span_tokens(starts: Sequence[int], lo: int, hi: int) -> tuple[int, int]:
    # A token belongs to the span holding its start char.
    return bisect_left(starts, lo), bisect_left(starts, hi)


def assign_token_spans(trajectory: Trajectory, token_offsets: Sequence[tuple[int, int]]) -> Trajectory:
    """Return a copy of the trajectory with token spans on segments and steps.

    Offsets must tile raw_text exactly (contiguous, non-empty, covering);
    anything else raises OffsetsMismatch. Tokens are assigned to the segment
    and step containing their start character, which partitions tokens across
    segments even when a token straddles a boundary.
    """
    offsets = [(int(s), int(e)) for s, e in token_offsets]
    _validate_offsets(trajectory.raw_text, offsets)
    starts = [s for s, _ in offsets]
    segments = [replace(seg, token_span=_span_tokens(starts, *seg.char_span)) for seg in trajectory.segments]
    steps = [replace(st, token_span=_span_tokens(starts, *st.char_span)) for st in trajectory.steps]
    return Trajectory(trajectory.raw_text, trajectory.model_kind, segments, steps, trajectory.answer, offsets)


def whitespace_token_offsets(text: str) -> list[tuple[int, int]]:
    """A tiling toy tokenization: each token is a word plus trailing whitespace.

    Leading whitespace sticks to the first token. Useful for tests and mock
    pipelines; real callers supply offsets from their own tokenizer.
    """
    if not text:
        return []
    starts = [0]
    for m in re.finditer(r"(?<=\s)\S", text):
        if m.start() > 0:
            starts.append(m.start())
    bounds = starts + [len(text)]
    return [(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)]
