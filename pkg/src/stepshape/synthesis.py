"""Question synthesis over sampled reasoning paths, with staged quality control.

An item flows: sample path -> assemble a context window -> plan and write
entity obfuscations -> generate the QA pair -> four QC stages with
short-circuiting (answer alignment, knowledge grounding, answer length,
contextual robustness) -> optional difficulty filter. Every drop is counted
by stage so requested == emitted + all failure counts, and the whole run is
deterministic for a fixed seed and mock clients.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .clients import ChatRequest
from .errors import ClientError, GenerationUnparseable, JudgeUnparseable, StepshapeError
from .kgraph import (
    KnowledgeGraph,
    ObfuscationCategory,
    ObfuscationPlan,
    PathStrategy,
    plan_obfuscations,
    sample_path,
)
from .model import Document, Paradigm, QAItem, ReasoningPath, render_gt_chain
from .prompts import format_documents, load_prompt, render
from .reward import MatchMode, hybrid_reward
from .segmenter import segment_trajectory


class QCStage(Enum):
    ANSWER_ALIGNMENT = "answer_alignment"
    KNOWLEDGE_GROUNDING = "knowledge_grounding"
    ANSWER_LENGTH = "answer_length"
    CONTEXTUAL_ROBUSTNESS = "contextual_robustness"
    DIFFICULTY = "difficulty"


@dataclass(frozen=True)
class QCVerdict:
    stage: QCStage
    passed: bool
    detail: str = ""


@dataclass
class RoleClients:
    """Chat clients by role. QC equivalence checks go through ``verifier``;
    reward scoring and substep validity use ``judge``; ``embedder`` is the
    embedding client for similarity signals."""

    generator: object
    responder: object
    verifier: object
    judge: object | None = None
    embedder: object | None = None


@dataclass
class SynthesisConfig:
    paradigm_weights: dict[Paradigm, float] = field(
        default_factory=lambda: {p: 1.0 for p in Paradigm}
    )
    strategy: PathStrategy = PathStrategy.RANDOM_WALK
    hop_range: tuple[int, int] = (2, 30)
    hop_bounds: tuple[int, int] = (2, 30)
    min_docs: int | None = None
    max_attempts: int = 10000
    token_window: tuple[int, int] = (20000, 60000)
    obfuscation_density: float = 0.3
    obfuscation_categories: dict[str, ObfuscationCategory] | None = None
    distractor_count: int = 3
    robustness_rollouts: int = 4
    answer_word_cap: int = 20
    difficulty_rollouts: int = 8
    difficulty_band: tuple[float, float] = (0.25, 0.75)
    rollout_temperature: float = 0.7
    rollout_top_p: float = 0.95
    run_difficulty: bool = False
    max_workers: int = 1
    prompt_overrides: dict | None = None

    def __post_init__(self):
        lo, hi = self.hop_range
        blo, bhi = self.hop_bounds
        if not (blo <= lo <= hi <= bhi):
            raise ValueError(f"hop_range {self.hop_range} outside bounds {self.hop_bounds}")
        wlo, whi = self.token_window
        if not 0 <= wlo <= whi:
            raise ValueError("token_window must be an increasing pair")
        dlo, dhi = self.difficulty_band
        if not 0.0 <= dlo <= dhi <= 1.0:
            raise ValueError("difficulty_band must lie within [0, 1]")


@dataclass
class PipelineStats:
    requested: int = 0
    emitted: int = 0
    sampling_failures: int = 0
    generation_failures: int = 0
    window_failures: int = 0
    qc_failures: dict[str, int] = field(default_factory=dict)
    difficulty_failures: int = 0

    def record_qc_failure(self, stage: QCStage):
        self.qc_failures[stage.value] = self.qc_failures.get(stage.value, 0) + 1

    def total_failures(self) -> int:
        return (
            self.sampling_failures
            + self.generation_failures
            + self.window_failures
            + sum(self.qc_failures.values())
            + self.difficulty_failures
        )

    def conserved(self) -> bool:
        return self.requested == self.emitted + self.total_failures()

    def as_dict(self) -> dict:
        return {
            "requested": self.requested,
            "emitted": self.emitted,
            "sampling_failures": self.sampling_failures,
            "generation_failures": self.generation_failures,
            "window_failures": self.window_failures,
            "qc_failures": dict(sorted(self.qc_failures.items())),
            "difficulty_failures": self.difficulty_failures,
        }


@dataclass
class PipelineResult:
    items: list[QAItem]
    stats: PipelineStats


_PARADIGM_ASSETS = {
    Paradigm.MULTI_HOP: ("Multihop Reasoning", "paradigm_multi_hop"),
    Paradigm.TEMPORAL: ("Temporal Reasoning", "paradigm_temporal"),
    Paradigm.CAUSAL: ("Causal Analysis", "paradigm_causal"),
    Paradigm.HYPOTHETICAL: ("Hypothetical Scenario", "paradigm_hypothetical"),
}

_CATEGORY_HINTS = {
    ObfuscationCategory.TEMPORAL: (
        "a defining date or time-period property (for instance, 'the year ending with 5 "
        "in the late 20th century')"
    ),
    ObfuscationCategory.LOCATION: (
        "a distinctive geographic or demographic property (for instance, 'a country with "
        "a population of over 1.4 billion')"
    ),
    ObfuscationCategory.INSTITUTIONAL: (
        "its role, field and location (for instance, 'a prestigious science and engineering "
        "university located in Beijing')"
    ),
    ObfuscationCategory.GENERIC: "its most distinctive attributes or relationships",
}


def apply_obfuscations(client, plan: ObfuscationPlan, prompt_overrides: dict | None = None) -> ObfuscationPlan:
    """Fill each target's rewrite with a client-produced indirect description."""
    template = load_prompt("obfuscate_entity", prompt_overrides)
    for target in plan.targets:
        content = render(
            template,
            entity=target.node,
            category=target.category.value,
            category_hint=_CATEGORY_HINTS[target.category],
        )
        target.rewrite = client.chat(
            ChatRequest(messages=[{"role": "user", "content": content}], temperature=0.0)
        ).strip()
    return plan


def _obfuscation_block(plan: ObfuscationPlan | None) -> str:
    if plan is None:
        return ""
    lines = []
    for target in plan.targets:
        if target.rewrite:
            lines.append(
                f'* Refer to the entity "{target.node}" only through this indirect '
                f'description: "{target.rewrite}". Never name it directly.'
            )
    if not lines:
        return ""
    return "4. Obfuscation Requirements\n\n" + "\n".join(lines) + "\n"


def _parse_generation(text: str) -> tuple[str, str]:
    q_at = text.find("[[Question]]:")
    if q_at < 0:
        raise GenerationUnparseable("missing [[Question]]: block")
    a_at = text.find("[[Answer]]:", q_at)
    if a_at < 0:
        raise GenerationUnparseable("missing [[Answer]]: block")
    e_at = text.find("[[Explanation]]:", a_at)
    question = text[q_at + len("[[Question]]:") : a_at].strip()
    answer = text[a_at + len("[[Answer]]:") : e_at if e_at >= 0 else len(text)].strip()
    if not question or not answer:
        raise GenerationUnparseable("empty question or answer block")
    return question, answer


def generate_question(
    client,
    docs: Sequence[Document],
    path: ReasoningPath,
    paradigm: Paradigm,
    obfuscation_plan: ObfuscationPlan | None = None,
    item_id: str | None = None,
    prompt_overrides: dict | None = None,
) -> QAItem:
    """One generator call producing a QAItem (explanation block is parsed but
    not retained). Missing question/answer blocks raise GenerationUnparseable."""
    title, asset = _PARADIGM_ASSETS[paradigm]
    template = load_prompt("generate_question", prompt_overrides)
    content = render(
        template,
        k_context=str(len(docs)),
        paradigm_title=title,
        paradigm_requirements=load_prompt(asset, prompt_overrides).strip(),
        obfuscation_instructions=_obfuscation_block(obfuscation_plan),
        documents=format_documents(docs),
        reasoning_paths=render_gt_chain(path),
    )
    reply = client.chat(ChatRequest(messages=[{"role": "user", "content": content}], temperature=1.0, top_p=0.95))
    question, answer = _parse_generation(reply)
    if item_id is None:
        from .util import stable_digest

        item_id = f"qa-{stable_digest(question + answer):016x}"
    return QAItem(
        id=item_id,
        question=question,
        answer=answer,
        paradigm=paradigm,
        doc_ids=[d.doc_id for d in docs],
        gt_chain=path,
        token_count=sum(d.token_count for d in docs),
    )


def answer_rollout(
    client,
    question: str,
    docs: Sequence[Document],
    temperature: float = 0.0,
    top_p: float = 1.0,
    prompt_overrides: dict | None = None,
) -> str:
    """One responder rollout under the standard answering prompt (raw reply)."""
    system = load_prompt("training_system", prompt_overrides)
    parts = []
    if docs:
        parts.append(format_documents(docs))
    parts.append(f"Question: {question}")
    return client.chat(
        ChatRequest(
            messages=[
                {"role": "system", "content": system},
                {"role": "user", "content": "\n\n".join(parts)},
            ],
            temperature=temperature,
            top_p=top_p,
        )
    )


def answer_question(
    client,
    question: str,
    docs: Sequence[Document],
    temperature: float = 0.0,
    top_p: float = 1.0,
    prompt_overrides: dict | None = None,
) -> str | None:
    """Extracted final answer of one rollout, or None when it never concludes."""
    reply = answer_rollout(client, question, docs, temperature, top_p, prompt_overrides)
    return segment_trajectory(reply).answer


def _equivalent(verifier, question: str, predicted: str | None, gold: str) -> bool:
    if predicted is None:
        return False
    return hybrid_reward(verifier, question, predicted, gold).hybrid == 1


def qc_answer_alignment(clients: RoleClients, item: QAItem, docs: Sequence[Document], cfg: SynthesisConfig) -> QCVerdict:
    """Re-answer with the full context; the item's answer must be recoverable."""
    predicted = answer_question(clients.responder, item.question, docs, prompt_overrides=cfg.prompt_overrides)
    passed = _equivalent(clients.verifier, item.question, predicted, item.answer)
    return QCVerdict(QCStage.ANSWER_ALIGNMENT, passed, detail=f"predicted={predicted!r}")


def qc_knowledge_grounding(clients: RoleClients, item: QAItem, cfg: SynthesisConfig) -> QCVerdict:
    """Answer with no documents; the item fails if parametric knowledge suffices."""
    predicted = answer_question(clients.responder, item.question, [], prompt_overrides=cfg.prompt_overrides)
    passed = not _equivalent(clients.verifier, item.question, predicted, item.answer)
    return QCVerdict(QCStage.KNOWLEDGE_GROUNDING, passed, detail=f"doc_free={predicted!r}")


def qc_answer_length(item: QAItem, cfg: SynthesisConfig) -> QCVerdict:
    words = len(item.answer.split())
    return QCVerdict(QCStage.ANSWER_LENGTH, words <= cfg.answer_word_cap, detail=f"words={words}")


def qc_contextual_robustness(
    clients: RoleClients,
    item: QAItem,
    docs: Sequence[Document],
    distractors: Sequence[Document],
    cfg: SynthesisConfig,
    rng: random.Random,
) -> QCVerdict:
    """pass@k with distractor documents shuffled into the context."""
    correct = 0
    for _ in range(cfg.robustness_rollouts):
        mixed = list(docs) + list(distractors)
        rng.shuffle(mixed)
        predicted = answer_question(
            clients.responder,
            item.question,
            mixed,
            temperature=cfg.rollout_temperature,
            top_p=cfg.rollout_top_p,
            prompt_overrides=cfg.prompt_overrides,
        )
        if _equivalent(clients.verifier, item.question, predicted, item.answer):
            correct += 1
            break
    return QCVerdict(QCStage.CONTEXTUAL_ROBUSTNESS, correct >= 1, detail=f"correct={correct}")


def difficulty_rollouts(
    clients: RoleClients,
    item: QAItem,
    docs: Sequence[Document],
    cfg: SynthesisConfig,
) -> list[tuple[str, bool]]:
    """n stochastic rollouts, each returned as (raw reply, judged correct)."""
    out = []
    for _ in range(cfg.difficulty_rollouts):
        raw = answer_rollout(
            clients.responder,
            item.question,
            docs,
            temperature=cfg.rollout_temperature,
            top_p=cfg.rollout_top_p,
            prompt_overrides=cfg.prompt_overrides,
        )
        predicted = segment_trajectory(raw).answer
        out.append((raw, _equivalent(clients.verifier, item.question, predicted, item.answer)))
    return out


def difficulty_filter(
    clients: RoleClients,
    item: QAItem,
    docs: Sequence[Document],
    cfg: SynthesisConfig,
    rollouts: Sequence[tuple[str, bool]] | None = None,
) -> tuple[QCVerdict, float]:
    """Keep items whose rollout success rate sits inside the band, endpoints
    included. Returns the verdict and the raw rate. Pass ``rollouts`` to score
    an already-collected batch instead of sampling a fresh one."""
    if rollouts is None:
        rollouts = difficulty_rollouts(clients, item, docs, cfg)
    if not rollouts:
        raise ValueError("difficulty_filter needs at least one rollout")
    rate = sum(1 for _, ok in rollouts if ok) / len(rollouts)
    lo, hi = cfg.difficulty_band
    verdict = QCVerdict(QCStage.DIFFICULTY, lo <= rate <= hi, detail=f"success_rate={rate}")
    return verdict, rate


def _assemble_context(
    path: ReasoningPath,
    corpus: dict[str, Document],
    cfg: SynthesisConfig,
    rng: random.Random,
) -> list[Document] | None:
    """Path documents plus padding from the corpus to hit the token window.

    Returns None when the window cannot be satisfied (missing path docs are
    the caller's problem and raise KeyError there)."""
    doc_ids = list(dict.fromkeys(path.doc_ids))
    docs = [corpus[d] for d in doc_ids]
    total = sum(d.token_count for d in docs)
    lo, hi = cfg.token_window
    if total > hi:
        return None
    rest = [d for d in corpus.values() if d.doc_id not in set(doc_ids)]
    rng.shuffle(rest)
    for doc in rest:
        if total >= lo:
            break
        if total + doc.token_count <= hi:
            docs.append(doc)
            total += doc.token_count
    if not lo <= total <= hi:
        return None
    return docs


def _process_item(
    index: int,
    config: SynthesisConfig,
    corpus: dict[str, Document],
    graph: KnowledgeGraph,
    clients: RoleClients,
    rng_seed: int,
) -> tuple[QAItem | None, str | None]:
    """Returns (item, None) on success or (None, failure_kind)."""
    seed = rng_seed * 1_000_003 + index
    rng = random.Random(seed)
    hops = rng.randint(*config.hop_range)
    try:
        path = sample_path(
            graph,
            strategy=config.strategy,
            hops=hops,
            min_docs=config.min_docs,
            rng_seed=seed,
            max_attempts=config.max_attempts,
            hop_bounds=config.hop_bounds,
        )
    except StepshapeError:
        return None, "sampling"
    try:
        docs = _assemble_context(path, corpus, config, rng)
    except KeyError:
        return None, "sampling"
    if docs is None:
        return None, "window"

    paradigms = sorted(config.paradigm_weights, key=lambda p: p.value)
    weights = [config.paradigm_weights[p] for p in paradigms]
    paradigm = rng.choices(paradigms, weights=weights)[0]
    try:
        plan = plan_obfuscations(path, config.obfuscation_categories, config.obfuscation_density, seed)
        if plan.targets:
            apply_obfuscations(clients.generator, plan, config.prompt_overrides)
        item = generate_question(
            clients.generator,
            docs,
            path,
            paradigm,
            obfuscation_plan=plan,
            item_id=f"qa-{index:06d}",
            prompt_overrides=config.prompt_overrides,
        )
    except (GenerationUnparseable, ClientError, JudgeUnparseable):
        return None, "generation"

    used = set(item.doc_ids)
    distractors = [d for d in corpus.values() if d.doc_id not in used]
    rng.shuffle(distractors)
    distractors = distractors[: config.distractor_count]

    try:
        checks = [
            lambda: qc_answer_alignment(clients, item, docs, config),
            lambda: qc_knowledge_grounding(clients, item, config),
            lambda: qc_answer_length(item, config),
            lambda: qc_contextual_robustness(clients, item, docs, distractors, config, rng),
        ]
        for check in checks:
            verdict = check()
            item.qc.append(verdict)
            if not verdict.passed:
                return None, f"qc:{verdict.stage.value}"
        if config.run_difficulty:
            verdict, _ = difficulty_filter(clients, item, docs, config)
            item.qc.append(verdict)
            if not verdict.passed:
                return None, "difficulty"
    except (ClientError, JudgeUnparseable):
        return None, "generation"
    return item, None


def run_pipeline(
    config: SynthesisConfig,
    corpus: Sequence[Document],
    graph: KnowledgeGraph,
    clients: RoleClients,
    count: int,
    rng_seed: int = 0,
) -> PipelineResult:
    """Synthesize up to ``count`` items; single-item failures never abort the
    run, they are tallied by stage. Deterministic for fixed seed and mocks."""
    corpus_map = {d.doc_id: d for d in corpus}
    stats = PipelineStats(requested=count)
    results: list[tuple[QAItem | None, str | None]] = [(None, None)] * count
    if config.max_workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
            futures = {
                pool.submit(_process_item, i, config, corpus_map, graph, clients, rng_seed): i
                for i in range(count)
            }
            for future, i in futures.items():
                results[i] = future.result()
    else:
        for i in range(count):
            results[i] = _process_item(i, config, corpus_map, graph, clients, rng_seed)
    items = []
    for item, failure in results:
        if item is not None:
            stats.emitted += 1
            items.append(item)
        elif failure == "sampling":
            stats.sampling_failures += 1
        elif failure == "window":
            stats.window_failures += 1
        elif failure == "generation":
            stats.generation_failures += 1
        elif failure == "difficulty":
            stats.difficulty_failures += 1
        elif failure and failure.startswith("qc:"):
            stats.qc_failures[failure[3:]] = stats.qc_failures.get(failure[3:], 0) + 1
    return PipelineResult(items=items, stats=stats)
