"""Deterministic offline stand-ins for the chat and embedding clients.

One omni handler routes on distinctive prompt markers and emulates each role
semantically: the generator writes a question that literally embeds the
reasoning chain, the responder follows that chain back out (but only when
articles are present in the context), the equivalence judge compares the two
answer lines after normalization, and the substep judge checks that a step
mentions an entity from the ground-truth chain. Stochastic decoding is
emulated by a per-payload call counter with an md5-derived success budget, so
every run of a seeded pipeline is byte-identical.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass, field

from .clients import ChatRequest, MockChatClient, MockEmbeddingClient
from .model import Document, ReasoningPath, Triple, parse_gt_chain
from .reward import normalize_answer
from .synthesis import RoleClients
from .util import stable_digest

# One or more (entity)-[relation]->(entity) hops; entities may hold one level
# of nested parentheses.
_CHAIN_RE = re.compile(
    r"\((?:[^()]|\([^()]*\))*\)"
    r"(?:\s*-\[[^\[\]]*\]->?\s*\((?:[^()]|\([^()]*\))*\))+"
)

_GENERATOR_MARK = "As a specialist in complex problem design"
_EQUIVALENCE_MARK = "expert in verifying if two answers are the same"
_SUBSTEP_MARK = "expert in analyzing reasoning traces"
_OBFUSCATION_MARK = "Rewrite the entity name below"
_REFERENCE_MARK = "Ground-truth reasoning chain, follow it step by step:"


def _last_chain(text: str):
    matches = _CHAIN_RE.findall(text)
    if not matches:
        return None
    return parse_gt_chain(matches[-1])


def _trajectory(chain, answer: str, stall: bool = False) -> str:
    steps = []
    if chain is not None:
        for j, rel in enumerate(chain.relations):
            steps.append(
                f"Step {j + 1}: From ({chain.nodes[j]}), follow [{rel}] "
                f"to reach ({chain.nodes[j + 1]})."
            )
    if stall:
        steps.append(
            f"Step {len(steps) + 1}: The remaining hop cannot be resolved "
            "from the articles."
        )
    if not steps:
        steps.append("Step 1: The context gives no trail to follow.")
    body = "\n".join(steps)
    return (
        "<begin_of_thought>\n"
        f"{body}\n"
        "<end_of_thought>\n"
        "<begin_of_solution>\n"
        f"Therefore, the answer is {answer}.\n"
        "<end_of_solution>"
    )


@dataclass
class OmniHandler:
    """Routes mock chat requests by prompt marker; holds the rollout counters."""

    success_mod: int = 9

    def __post_init__(self):
        self._lock = threading.Lock()
        self._rollout_counts: dict[int, int] = {}

    def _next_rollout(self, payload: str) -> int:
        key = stable_digest(payload, salt="rollout")
        with self._lock:
            t = self._rollout_counts.get(key, 0)
            self._rollout_counts[key] = t + 1
        return t

    def _generate(self, content: str) -> str:
        section = content[content.rfind("Multi-hop Reasoning Paths:") :]
        chain = _last_chain(section)
        if chain is None:
            return "[[Question]]:\n\n[[Answer]]:\n"
        rendered = _CHAIN_RE.findall(section)[-1]
        question = (
            f"Following the trail {rendered} through the articles, "
            "which entity is finally reached?"
        )
        answer = chain.nodes[-1]
        return (
            f"[[Question]]: {question}\n"
            f"[[Answer]]: {answer}\n"
            f"[[Explanation]]: Walk the trail hop by hop; it ends at {answer}."
        )

    def _equivalence(self, content: str) -> str:
        a1_at = content.rfind("Answer 1:")
        a2_at = content.rfind("Answer 2:")
        if a1_at < 0 or a2_at < 0 or a2_at < a1_at:
            return "[[NO]]"
        first = content[a1_at + len("Answer 1:") : a2_at]
        second = content[a2_at + len("Answer 2:") :]
        same = normalize_answer(first) == normalize_answer(second)
        reason = "The answers match." if same else "The answers differ."
        return f"{reason} {'[[YES]]' if same else '[[NO]]'}"

    def _substep(self, content: str) -> str:
        gt_at = content.rfind("Ground Truth Reasoning Solution:")
        sub_at = content.rfind("Reasoning Substep to Check:")
        if gt_at < 0 or sub_at < 0 or sub_at < gt_at:
            return "[[NO]]"
        gt = content[gt_at + len("Ground Truth Reasoning Solution:") : sub_at]
        substep = content[sub_at + len("Reasoning Substep to Check:") :].casefold()
        chain = _last_chain(gt)
        if chain is not None:
            nodes = list(chain.nodes)
        else:
            # Ground truth may be prose step lines; fall back to any
            # parenthesized mentions as the entity inventory.
            nodes = [n.strip() for n in re.findall(r"\(([^()]+)\)", gt)]
        hit = any(node.casefold() in substep for node in nodes if node)
        return "[[YES]]" if hit else "[[NO]]"

    def _obfuscate(self, content: str) -> str:
        entity = content[content.rfind("Entity:") + len("Entity:") :].strip()
        category = "generic"
        m = re.search(r"Use a (\w+) style description", content)
        if m:
            category = m.group(1)
        return f"[the {category} descriptor of {entity}]"

    def _reference(self, content: str) -> str:
        chain = _last_chain(content[content.rfind(_REFERENCE_MARK) :])
        answer = chain.nodes[-1] if chain is not None else "unknown"
        return _trajectory(chain, answer)

    def _respond(self, request: ChatRequest, content: str) -> str:
        q_at = content.rfind("Question:")
        question = content[q_at + len("Question:") :] if q_at >= 0 else content
        chain = _last_chain(question)
        has_docs = "Article 1:" in content
        if not has_docs or chain is None:
            return _trajectory(None, "unknown")
        if request.temperature != 0.0:
            budget = stable_digest(question.strip(), salt="difficulty") % self.success_mod
            if self._next_rollout(content) >= budget:
                # Failure mode: follow the trail partway, then stall. The
                # partial steps match the reference steps verbatim.
                partial = None
                if chain.hops >= 2:
                    partial = ReasoningPath(chain.nodes[:-1], chain.relations[:-1])
                return _trajectory(partial, "inconclusive", stall=True)
        return _trajectory(chain, chain.nodes[-1])

    def __call__(self, request: ChatRequest) -> str:
        content = request.text()
        if _GENERATOR_MARK in content:
            return self._generate(content)
        if _EQUIVALENCE_MARK in content:
            return self._equivalence(content)
        if _SUBSTEP_MARK in content:
            return self._substep(content)
        if _OBFUSCATION_MARK in content:
            return self._obfuscate(content)
        if _REFERENCE_MARK in content:
            return self._reference(content)
        return self._respond(request, content)


def make_mock_chat(success_mod: int = 9) -> MockChatClient:
    return MockChatClient(handler=OmniHandler(success_mod=success_mod))


def build_role_clients(dim: int = 16, success_mod: int = 9) -> RoleClients:
    """One shared omni chat client across all chat roles plus a digest-seeded
    embedder; call counts stay inspectable through the shared instance."""
    chat = make_mock_chat(success_mod=success_mod)
    return RoleClients(
        generator=chat,
        responder=chat,
        verifier=chat,
        judge=chat,
        embedder=MockEmbeddingClient(dim=dim),
    )


_SUFFIXES = ("Institute", "Observatory", "Archive", "Laboratory", "Museum", "Station")
_CALLSIGNS = (
    "Alpha", "Bravo", "Charlie", "Delta", "Echo", "Foxtrot", "Golf", "Hotel",
    "India", "Juliett", "Kilo", "Lima", "Mike", "November", "Oscar", "Papa",
    "Quebec", "Romeo", "Sierra", "Tango", "Uniform", "Victor", "Whiskey",
    "Xray", "Yankee", "Zulu",
)
_RELATIONS = ("collaborates with", "was founded beside", "supplies", "curates records for")


def demo_dataset(n_entities: int = 24, seed: int = 0) -> tuple[list[Triple], list[Document]]:
    """A ring-with-chords corpus: one triple and one document per edge.

    Token counts are synthetic (the bodies are two sentences) so default
    context windows are reachable with a handful of documents.
    """
    import random

    if not 3 <= n_entities <= len(_CALLSIGNS):
        raise ValueError(f"n_entities must be in [3, {len(_CALLSIGNS)}]")
    rng = random.Random(seed)
    names = [
        f"{_CALLSIGNS[i]} {_SUFFIXES[i % len(_SUFFIXES)]}" for i in range(n_entities)
    ]
    edges = [(i, (i + 1) % n_entities) for i in range(n_entities)]
    edges += [(i, (i + 5) % n_entities) for i in range(0, n_entities, 3)]
    triples = []
    docs = []
    for k, (a, b) in enumerate(edges):
        rel = _RELATIONS[k % len(_RELATIONS)]
        doc_id = f"doc-{k:03d}"
        s, o = names[a], names[b]
        triples.append(Triple(s, rel, o, doc_id=doc_id))
        docs.append(
            Document(
                doc_id=doc_id,
                title=f"{s} and {o}",
                body=(
                    f"{s} {rel} {o}. Archive records describe at length how "
                    f"{s} {rel} {o}, with provenance notes and inventories."
                ),
                token_count=5200 + rng.randrange(0, 1600),
            )
        )
    return triples, docs
