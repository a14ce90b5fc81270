"""Group-relative advantages, step-wise shaping, and the clipped objective.

Rollouts are scored as a group: each trajectory's advantage is its
group-normalized reward. Shaping then attenuates individual steps of
*negative* trajectories that a judge marks valid and an embedder finds close
to a reference trajectory: coefficient ``1 - valid * sim`` scales the step's
advantage toward zero, so a wrong rollout is not punished for the parts it
got right. Positive trajectories keep coefficient 1 everywhere and are
bit-identical to the unshaped baseline.

Token broadcasting gives step tokens their step's advantage, Solution tokens
outside any step the plain group advantage, prologue tokens (before the first
step, outside Solution/think regions) the first step's advantage, and tokens
inside ``<think>`` regions the mean of all non-think token advantages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from . import kernels
from .clients import ChatRequest, Verdict, parse_verdict
from .errors import (
    EmptyChain,
    EmptyGroup,
    JudgeUnparseable,
    LengthMismatch,
    MissingSignals,
    NoTokenSpans,
)
from .model import ReasoningPath, render_gt_chain
from .prompts import format_documents, load_prompt, render
from .segmenter import ModelKind, SegmentKind, Trajectory, segment_trajectory


class StdMode(Enum):
    POPULATION = "population"
    SAMPLE = "sample"


class RatioGranularity(Enum):
    TOKEN = "token"
    STEP = "step"


class SimMode(Enum):
    BEST_STEP = "best_step"  # max cosine over reference steps
    WHOLE_REFERENCE = "whole_reference"


@dataclass(frozen=True)
class ObjectiveConfig:
    epsilon: float = 0.2
    beta: float = 0.0
    ratio_granularity: RatioGranularity = RatioGranularity.TOKEN
    std_mode: StdMode = StdMode.POPULATION
    std_floor: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.beta < 0.0:
            raise ValueError("beta must be non-negative")
        if self.std_floor <= 0.0:
            raise ValueError("std_floor must be positive")


@dataclass(frozen=True)
class StepSignal:
    valid: bool
    sim: float

    def __post_init__(self):
        if not 0.0 <= self.sim <= 1.0:
            raise ValueError("sim must lie in [0, 1]")


@dataclass
class RolloutGroup:
    question_id: str
    trajectories: list[Trajectory]
    rewards: list[int]
    reference: Trajectory | None = None
    signals: list[list[StepSignal] | None] | None = None

    def __post_init__(self):
        if len(self.rewards) != len(self.trajectories):
            raise ValueError("one reward per trajectory")
        if any(r not in (0, 1) for r in self.rewards):
            raise ValueError("rewards must be binary")
        if self.signals is not None:
            if len(self.signals) != len(self.trajectories):
                raise ValueError("one signal list (or None) per trajectory")
            for traj, sig in zip(self.trajectories, self.signals):
                if sig is not None and len(sig) != len(traj.steps):
                    raise ValueError(
                        f"signal count {len(sig)} != step count {len(traj.steps)}"
                    )


@dataclass
class ShapedAdvantages:
    group_advantages: np.ndarray  # [N]
    step_advantages: list[np.ndarray]  # ragged, one array per trajectory
    coefficients: list[np.ndarray]  # ragged, kept for auditability
    token_advantages: list[np.ndarray | None] | None = None


def _sequential_sum(values) -> float:
    total = 0.0
    for v in values:
        total += v
    return total


def group_advantages(rewards: Sequence[float], cfg: ObjectiveConfig | None = None) -> np.ndarray:
    """Group-normalized advantages (reward - mean) / max(std, floor).

    A zero-variance group (all rewards equal) yields all-zero advantages
    rather than a floor-amplified residue. Sums run left-to-right so results
    are reproducible bit for bit across backends.
    """
    cfg = cfg or ObjectiveConfig()
    values = [float(r) for r in rewards]
    n = len(values)
    if n == 0:
        raise EmptyGroup("cannot normalize an empty reward list")
    mean = _sequential_sum(values) / n
    squared = _sequential_sum((v - mean) ** 2 for v in values)
    if cfg.std_mode == StdMode.SAMPLE:
        variance = squared / (n - 1) if n > 1 else 0.0
    else:
        variance = squared / n
    std = math.sqrt(variance)
    if std == 0.0:
        return np.zeros(n, dtype=np.float64)
    denom = max(std, cfg.std_floor)
    return np.asarray([(v - mean) / denom for v in values], dtype=np.float64)


def step_coefficients(group: RolloutGroup) -> list[np.ndarray]:
    """Per-step shaping coefficients: 1 everywhere on positive trajectories,
    1 - sim on steps judged valid on negative ones (1 on invalid steps).

    A negative trajectory with steps but no signals raises MissingSignals.
    """
    if not group.trajectories:
        raise EmptyGroup(f"group {group.question_id} has no trajectories")
    out: list[np.ndarray] = []
    for i, traj in enumerate(group.trajectories):
        n_steps = len(traj.steps)
        if group.rewards[i] == 1:
            out.append(np.ones(n_steps, dtype=np.float64))
            continue
        signals = group.signals[i] if group.signals is not None else None
        if signals is None:
            if n_steps == 0:
                out.append(np.zeros(0, dtype=np.float64))
                continue
            raise MissingSignals(
                f"negative trajectory {i} in group {group.question_id} has no step signals"
            )
        coeffs = np.empty(n_steps, dtype=np.float64)
        for j, sig in enumerate(signals):
            coeffs[j] = 1.0 - sig.sim if sig.valid else 1.0
        out.append(coeffs)
    return out


def shaped_step_advantages(group: RolloutGroup, cfg: ObjectiveConfig | None = None) -> ShapedAdvantages:
    """Group advantages times per-step coefficients; |shaped| <= |unshaped|."""
    adv = group_advantages(group.rewards, cfg)
    coefficients = step_coefficients(group)
    steps = [adv[i] * coefficients[i] for i in range(len(adv))]
    return ShapedAdvantages(adv, steps, coefficients)


def _think_mask(trajectory: Trajectory, n_tokens: int) -> np.ndarray:
    mask = np.zeros(n_tokens, dtype=np.bool_)
    for seg in trajectory.segments:
        if seg.kind == SegmentKind.THINK and seg.token_span is not None:
            lo, hi = seg.token_span
            mask[lo:hi] = True
    return mask


def broadcast_to_tokens(
    trajectory: Trajectory,
    step_advantages: np.ndarray,
    group_advantage: float,
    backend: str | None = None,
) -> np.ndarray:
    """Spread step advantages over the trajectory's tokens.

    Requires token spans (see assign_token_spans). Rules, in order: every
    token starts at the group advantage; step tokens get their step's value;
    non-Solution, non-think tokens before the first step get step 1's value;
    think tokens get the mean of all non-think token advantages. A trajectory
    that is nothing but a think region keeps the group advantage inside it.
    """
    if trajectory.token_offsets is None:
        raise NoTokenSpans("assign_token_spans() must run before token broadcasting")
    if len(step_advantages) != len(trajectory.steps):
        raise LengthMismatch(
            f"{len(step_advantages)} step advantages for {len(trajectory.steps)} steps"
        )
    n_tokens = len(trajectory.token_offsets)
    out = np.full(n_tokens, float(group_advantage), dtype=np.float64)
    for step, value in zip(trajectory.steps, step_advantages):
        lo, hi = step.token_span
        out[lo:hi] = value
    if len(trajectory.steps) > 0:
        first_start = trajectory.steps[0].token_span[0]
        first_value = float(step_advantages[0])
        for seg in trajectory.segments:
            if seg.kind in (SegmentKind.SOLUTION, SegmentKind.THINK):
                continue
            lo, hi = seg.token_span
            hi = min(hi, first_start)
            if hi > lo:
                out[lo:hi] = first_value
    mask = _think_mask(trajectory, n_tokens)
    if mask.any():
        kernels.fill_think_mean(out, mask, backend)
    return out


def shape_rollout_group(
    group: RolloutGroup,
    cfg: ObjectiveConfig | None = None,
    backend: str | None = None,
) -> ShapedAdvantages:
    """Full shaping pass: group advantages, step shaping, token broadcast.

    Token advantages are filled per trajectory where token offsets are
    assigned and left None elsewhere; the field is None when no trajectory
    has offsets.
    """
    shaped = shaped_step_advantages(group, cfg)
    token_advantages: list[np.ndarray | None] = []
    any_tokens = False
    for i, traj in enumerate(group.trajectories):
        if traj.token_offsets is None:
            token_advantages.append(None)
            continue
        any_tokens = True
        token_advantages.append(
            broadcast_to_tokens(traj, shaped.step_advantages[i], float(shaped.group_advantages[i]), backend)
        )
    shaped.token_advantages = token_advantages if any_tokens else None
    return shaped


# --- reference trajectories and step signals ---------------------------------


def collect_reference_trajectory(
    client,
    question: str,
    context_docs: Sequence,
    gt_chain: ReasoningPath | None,
    temperature: float = 0.0,
    top_p: float = 1.0,
    model_kind: ModelKind = ModelKind.INSTRUCT,
    prompt_overrides: dict | None = None,
) -> Trajectory:
    """Sample one chain-guided reference rollout and segment it.

    The prompt is the standard training prompt plus the rendered ground-truth
    chain as explicit guidance; greedy decoding by default so references are
    as faithful to the chain as the model allows.
    """
    if gt_chain is None:
        raise EmptyChain("reference sampling needs a ground-truth chain")
    system = load_prompt("training_system", prompt_overrides)
    parts = []
    if context_docs:
        parts.append(format_documents(context_docs))
    parts.append(f"Question: {question}")
    parts.append(
        "Ground-truth reasoning chain, follow it step by step:\n" + render_gt_chain(gt_chain)
    )
    request = ChatRequest(
        messages=[
            {"role": "system", "content": system},
            {"role": "user", "content": "\n\n".join(parts)},
        ],
        temperature=temperature,
        top_p=top_p,
    )
    return segment_trajectory(client.chat(request), model_kind)


def _reference_text(reference: Trajectory) -> str:
    if reference.steps:
        return "\n".join(step.text.strip() for step in reference.steps)
    return reference.raw_text


def step_signals(
    trajectory: Trajectory,
    reference: Trajectory,
    judge_client,
    embed_client,
    sim_mode: SimMode = SimMode.BEST_STEP,
    max_workers: int = 1,
    prompt_overrides: dict | None = None,
) -> list[StepSignal]:
    """Judge validity and embed similarity for each step of a trajectory.

    Validity asks the substep judge whether the step is contained in the
    reference; an unparseable verdict counts as invalid. Similarity is cosine
    against reference steps (best match) or the whole reference text, clamped
    to [0, 1]. Judge calls can run concurrently up to max_workers.
    """
    if sim_mode == SimMode.BEST_STEP and not reference.steps:
        raise ValueError("reference trajectory has no steps; use WHOLE_REFERENCE sim mode")
    steps = trajectory.steps
    if not steps:
        return []
    step_texts = [s.text.strip() for s in steps]
    step_vecs = embed_client.embed(step_texts)
    if sim_mode == SimMode.BEST_STEP:
        target_vecs = embed_client.embed([s.text.strip() for s in reference.steps])
    else:
        target_vecs = embed_client.embed([_reference_text(reference)])
    targets = np.stack(target_vecs)
    sims = []
    for vec in step_vecs:
        best = float(np.max(targets @ vec))
        sims.append(min(1.0, max(0.0, best)))

    gt_text = _reference_text(reference)
    template = load_prompt("judge_substep", prompt_overrides)

    def judge_one(text: str) -> bool:
        content = render(template, ground_truth=gt_text, substep=text)
        reply = judge_client.chat(ChatRequest(messages=[{"role": "user", "content": content}], temperature=0.0))
        try:
            return parse_verdict(reply) == Verdict.YES
        except JudgeUnparseable:
            return False

    if max_workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            valids = list(pool.map(judge_one, step_texts))
    else:
        valids = [judge_one(t) for t in step_texts]
    return [StepSignal(valid=v, sim=s) for v, s in zip(valids, sims)]


# --- surrogate objective -------------------------------------------------------


def f_epsilon(ratio: float, advantage: float, epsilon: float) -> float:
    """min(ratio * A, clip(ratio, 1-eps, 1+eps) * A); identity at ratio == 1."""
    clipped = min(max(ratio, 1.0 - epsilon), 1.0 + epsilon)
    return min(ratio * advantage, clipped * advantage)


@dataclass
class TrajectoryTerms:
    """Per-trajectory inputs to the objective: log-probs plus advantages at
    the configured granularity (token advantages, or step advantages with
    their token spans)."""

    logp_new: np.ndarray
    logp_old: np.ndarray
    token_advantages: np.ndarray | None = None
    step_advantages: np.ndarray | None = None
    step_token_spans: list[tuple[int, int]] | None = None

    def __post_init__(self):
        self.logp_new = np.asarray(self.logp_new, dtype=np.float64)
        self.logp_old = np.asarray(self.logp_old, dtype=np.float64)
        if self.logp_new.shape != self.logp_old.shape:
            raise LengthMismatch("logp_new and logp_old lengths differ")


@dataclass
class ObjectiveResult:
    objective: float
    policy: float
    kl: float
    per_group: list[tuple[float, float]] = field(default_factory=list)


def _cumsum_sum(values: np.ndarray) -> float:
    return float(np.cumsum(values)[-1]) if values.size else 0.0


def _trajectory_policy_score(terms: TrajectoryTerms, cfg: ObjectiveConfig, backend: str | None) -> float:
    n_tokens = terms.logp_new.shape[0]
    if cfg.ratio_granularity == RatioGranularity.TOKEN:
        if terms.token_advantages is None:
            raise MissingSignals("token granularity needs token_advantages")
        adv = np.asarray(terms.token_advantages, dtype=np.float64)
        if adv.shape[0] != n_tokens:
            raise LengthMismatch("token_advantages length != token count")
        if n_tokens == 0:
            return 0.0
        return kernels.policy_term_sum(terms.logp_new, terms.logp_old, adv, cfg.epsilon, backend) / n_tokens
    if terms.step_advantages is None or terms.step_token_spans is None:
        raise MissingSignals("step granularity needs step_advantages and step_token_spans")
    adv = np.asarray(terms.step_advantages, dtype=np.float64)
    spans = terms.step_token_spans
    if adv.shape[0] != len(spans):
        raise LengthMismatch("step_advantages length != span count")
    n_steps = len(spans)
    if n_steps == 0:
        return 0.0
    # A step's log-ratio is the sum of its token log-ratios.
    step_new = np.asarray([_cumsum_sum(terms.logp_new[lo:hi]) for lo, hi in spans], dtype=np.float64)
    step_old = np.asarray([_cumsum_sum(terms.logp_old[lo:hi]) for lo, hi in spans], dtype=np.float64)
    return kernels.policy_term_sum(step_new, step_old, adv, cfg.epsilon, backend) / n_steps


def surrogate_objective(
    groups: Sequence[Sequence[TrajectoryTerms]],
    cfg: ObjectiveConfig | None = None,
    backend: str | None = None,
) -> ObjectiveResult:
    """Clipped surrogate averaged per trajectory, per group, then overall,
    minus beta times the KL penalty estimated per token as exp(d) - d - 1
    with d = logp_old - logp_new (token-level regardless of granularity)."""
    cfg = cfg or ObjectiveConfig()
    if not groups:
        raise EmptyGroup("objective needs at least one group")
    group_stats: list[tuple[float, float]] = []
    for group in groups:
        if not group:
            raise EmptyGroup("objective group has no trajectories")
        policy_scores = []
        kl_scores = []
        for terms in group:
            policy_scores.append(_trajectory_policy_score(terms, cfg, backend))
            n_tokens = terms.logp_new.shape[0]
            if n_tokens == 0:
                kl_scores.append(0.0)
            else:
                kl_scores.append(kernels.kl_term_sum(terms.logp_new, terms.logp_old, backend) / n_tokens)
        group_stats.append(
            (_sequential_sum(policy_scores) / len(policy_scores), _sequential_sum(kl_scores) / len(kl_scores))
        )
    policy = _sequential_sum(p for p, _ in group_stats) / len(group_stats)
    kl = _sequential_sum(k for _, k in group_stats) / len(group_stats)
    return ObjectiveResult(objective=policy - cfg.beta * kl, policy=policy, kl=kl, per_group=group_stats)


def objective_terms(
    group: RolloutGroup,
    shaped: ShapedAdvantages,
    logp_new: Sequence[Sequence[float]],
    logp_old: Sequence[Sequence[float]],
    cfg: ObjectiveConfig | None = None,
) -> list[TrajectoryTerms]:
    """Assemble TrajectoryTerms for one group from shaping output and log-probs."""
    cfg = cfg or ObjectiveConfig()
    if len(logp_new) != len(group.trajectories) or len(logp_old) != len(group.trajectories):
        raise LengthMismatch("need one logp array pair per trajectory")
    out = []
    for i, traj in enumerate(group.trajectories):
        if cfg.ratio_granularity == RatioGranularity.TOKEN:
            token_adv = None if shaped.token_advantages is None else shaped.token_advantages[i]
            if token_adv is None:
                raise NoTokenSpans(f"trajectory {i} has no token advantages for token granularity")
            out.append(TrajectoryTerms(logp_new[i], logp_old[i], token_advantages=token_adv))
        else:
            spans = [s.token_span for s in traj.steps]
            if any(s is None for s in spans):
                raise NoTokenSpans(f"trajectory {i} has no token spans for step granularity")
            out.append(
                TrajectoryTerms(
                    logp_new[i],
                    logp_old[i],
                    step_advantages=shaped.step_advantages[i],
                    step_token_spans=spans,
                )
            )
    return out
