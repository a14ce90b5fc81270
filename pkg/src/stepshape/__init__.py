"""Step-shaped advantage computation for grouped RL rollouts, plus a
knowledge-graph-driven pipeline for synthesizing long-context multi-hop QA.

The import surface below is the supported API; everything else is internal.
"""

from .clients import (
    ChatClient,
    ChatRequest,
    ClientConfig,
    EmbeddingClient,
    MockChatClient,
    MockEmbeddingClient,
    Verdict,
    mock_mode_active,
    parse_verdict,
    set_mock_mode,
)
from .coverage import (
    CoverageRecord,
    RatioBucket,
    bucket_by_positive_ratio,
    coverage_record,
    entity_coverage,
    match_entities,
    render_coverage_csv,
    triplet_coverage,
)
from .errors import (
    AliasCycle,
    ClientError,
    ClientErrorKind,
    DimensionMismatch,
    EmptyChain,
    EmptyGroup,
    EmptyPath,
    GenerationUnparseable,
    JudgeUnparseable,
    LengthMismatch,
    MalformedChain,
    MissingSignals,
    MockModeViolation,
    NoPathFound,
    NoTokenSpans,
    OffsetsMismatch,
    SchemaViolation,
    StepshapeError,
    UnknownSeed,
    UnscriptedRequest,
)
from .kgraph import (
    KnowledgeGraph,
    ObfuscationCategory,
    ObfuscationPlan,
    ObfuscationTarget,
    PathStrategy,
    aggregate_domain,
    build_graph,
    plan_obfuscations,
    resolve_aliases,
    sample_path,
    sample_subgraph,
)
from .model import (
    Document,
    Paradigm,
    QAItem,
    ReasoningPath,
    Triple,
    parse_gt_chain,
    render_gt_chain,
)
from .reward import MatchMode, RewardRecord, hybrid_reward, judge_reward, normalize_answer, rule_reward
from .segmenter import (
    ModelKind,
    Segment,
    SegmentKind,
    Step,
    Trajectory,
    assign_token_spans,
    extract_answer,
    segment_trajectory,
    whitespace_token_offsets,
)
from .shaping import (
    ObjectiveConfig,
    ObjectiveResult,
    RatioGranularity,
    RolloutGroup,
    ShapedAdvantages,
    SimMode,
    StdMode,
    StepSignal,
    TrajectoryTerms,
    broadcast_to_tokens,
    collect_reference_trajectory,
    f_epsilon,
    group_advantages,
    objective_terms,
    shape_rollout_group,
    shaped_step_advantages,
    step_coefficients,
    step_signals,
    surrogate_objective,
)
from .synthesis import (
    PipelineResult,
    PipelineStats,
    QCStage,
    QCVerdict,
    RoleClients,
    SynthesisConfig,
    answer_question,
    apply_obfuscations,
    difficulty_filter,
    generate_question,
    run_pipeline,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
