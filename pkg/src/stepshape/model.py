"""Core value types: triples, documents, reasoning paths, QA items.

The chain notation used throughout is ``(Entity)-[relation]->(Entity)...``.
Entity names may themselves contain balanced parentheses, so parsing counts
bracket depth instead of splitting on delimiters. Both ``-[r]->`` and the
undirected spelling ``-[r]-`` are accepted on input; rendering always emits
the arrow form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .errors import MalformedChain


class Paradigm(Enum):
    MULTI_HOP = "multi_hop"
    TEMPORAL = "temporal"
    CAUSAL = "causal"
    HYPOTHETICAL = "hypothetical"


@dataclass(frozen=True)
class Triple:
    """One directed edge of a knowledge graph, tagged with its source document."""

    subject: str
    relation: str
    object: str
    doc_id: str = ""

    def __post_init__(self):
        for name in ("subject", "relation", "object"):
            value = getattr(self, name).strip()
            if not value:
                raise ValueError(f"Triple.{name} must be non-empty after trimming")
            object.__setattr__(self, name, value)


@dataclass(frozen=True)
class Document:
    """A context document. token_count falls back to a chars/4 estimate."""

    doc_id: str
    title: str
    body: str
    token_count: int | None = None

    def __post_init__(self):
        if self.token_count is None:
            object.__setattr__(self, "token_count", len(self.body) // 4)
        if self.token_count < 0:
            raise ValueError("Document.token_count must be non-negative")


@dataclass(frozen=True)
class ReasoningPath:
    """An entity/relation chain. hops == len(relations) == len(nodes) - 1.

    doc_ids is either empty (chain parsed from text, provenance unknown) or
    aligned one-per-relation. Node repetition is tolerated here; samplers that
    promise simple paths enforce distinctness themselves.
    """

    nodes: tuple[str, ...]
    relations: tuple[str, ...]
    doc_ids: tuple[str, ...] = ()

    def __init__(self, nodes: Sequence[str], relations: Sequence[str], doc_ids: Sequence[str] = ()):
        nodes = tuple(n.strip() for n in nodes)
        relations = tuple(r.strip() for r in relations)
        doc_ids = tuple(doc_ids)
        if len(nodes) < 2 or len(relations) != len(nodes) - 1:
            raise ValueError("ReasoningPath needs n nodes and n-1 relations, n >= 2")
        if any(not n for n in nodes) or any(not r for r in relations):
            raise ValueError("ReasoningPath nodes and relations must be non-empty")
        if doc_ids and len(doc_ids) != len(relations):
            raise ValueError("ReasoningPath.doc_ids must be empty or one per relation")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "relations", relations)
        object.__setattr__(self, "doc_ids", doc_ids)

    @property
    def hops(self) -> int:
        return len(self.relations)


@dataclass
class QAItem:
    """A synthesized question grounded in a reasoning path over documents."""

    id: str
    question: str
    answer: str
    paradigm: Paradigm
    doc_ids: list[str]
    gt_chain: ReasoningPath
    token_count: int = 0
    qc: list = field(default_factory=list)

    def __post_init__(self):
        if not self.question.strip() or not self.answer.strip():
            raise ValueError("QAItem.question and QAItem.answer must be non-empty")

    @property
    def hops(self) -> int:
        return self.gt_chain.hops


def _read_entity(text: str, start: int) -> tuple[str, int]:
    """Read a parenthesized entity starting at text[start] == '('.

    Returns (inner text, index one past the closing paren). Inner parentheses
    must balance; depth counting finds the matching closer.
    """
    depth = 0
    for i in range(start, len(text)):
        ch = text[i]
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth == 0:
                return text[start + 1 : i], i + 1
    raise MalformedChain(f"unbalanced '(' at index {start}")


def _skip_ws(text: str, i: int) -> int:
    while i < len(text) and text[i].isspace():
        i += 1
    return i


def parse_gt_chain(text: str) -> ReasoningPath:
    """Parse ``(E)-[r]->(E)...`` (or ``-[r]-``) into a ReasoningPath.

    Raises MalformedChain on unbalanced brackets, empty entities or relations,
    trailing junk, or a chain with no relation at all. doc_ids come back empty;
    textual chains carry no provenance.
    """
    i = _skip_ws(text, 0)
    if i >= len(text) or text[i] != "(":
        raise MalformedChain("chain must start with '('")
    raw, i = _read_entity(text, i)
    if not raw.strip():
        raise MalformedChain("empty entity")
    nodes = [raw]
    relations: list[str] = []
    i = _skip_ws(text, i)
    while i < len(text):
        if text[i] != "-":
            raise MalformedChain(f"expected '-' at index {i}")
        i = _skip_ws(text, i + 1)
        if i >= len(text) or text[i] != "[":
            raise MalformedChain(f"expected '[' at index {i}")
        close = text.find("]", i + 1)
        if close < 0:
            raise MalformedChain(f"unbalanced '[' at index {i}")
        rel = text[i + 1 : close].strip()
        if not rel:
            raise MalformedChain(f"empty relation at index {i}")
        i = _skip_ws(text, close + 1)
        if i >= len(text) or text[i] != "-":
            raise MalformedChain(f"expected '-' after relation at index {i}")
        i += 1
        if i < len(text) and text[i] == ">":
            i += 1
        i = _skip_ws(text, i)
        if i >= len(text) or text[i] != "(":
            raise MalformedChain(f"expected '(' at index {i}")
        raw, i = _read_entity(text, i)
        if not raw.strip():
            raise MalformedChain("empty entity")
        nodes.append(raw)
        relations.append(rel)
        i = _skip_ws(text, i)
    if not relations:
        raise MalformedChain("chain needs at least one relation")
    return ReasoningPath(nodes, relations, doc_ids=())


def render_gt_chain(path: ReasoningPath) -> str:
    """Render a path in canonical arrow form, one string, no line breaks."""
    parts = [f"({path.nodes[0]})"]
    for rel, node in zip(path.relations, path.nodes[1:]):
        parts.append(f"-[{rel}]->({node})")
    return "".join(parts)
