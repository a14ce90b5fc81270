"""Command-line tools over the library.

Exit codes: 0 success, 1 usage problems, 2 data problems (schema violations,
malformed chains, unsatisfiable sampling), 3 client/transport failures. Every
failure also emits a single machine-readable JSON record on stderr. All file
writes are atomic, and any command run with --mock plus a fixed --seed
produces byte-identical output files across runs.
"""

from __future__ import annotations

import dataclasses
import json
import random
import sys
from typing import Sequence

import click
import yaml

from .clients import ChatClient, ClientConfig, EmbeddingClient, set_mock_mode
from .coverage import bucket_by_positive_ratio, coverage_record, render_coverage_csv
from .errors import ClientError, MockModeViolation, SchemaViolation, StepshapeError
from .kgraph import KnowledgeGraph, ObfuscationCategory, PathStrategy, build_graph, sample_path
from .model import Paradigm, parse_gt_chain, render_gt_chain
from .reward import MatchMode, RewardRecord, hybrid_reward, rule_reward
from .schemas import (
    DOCUMENT_SCHEMA,
    KG_SCHEMA,
    PREDICTION_SCHEMA,
    QA_SCHEMA,
    ROLLOUTS_SCHEMA,
    SCHEMAS_BY_KIND,
    TRIPLE_SCHEMA,
    document_from_dict,
    dump_jsonl,
    path_to_dict,
    qa_from_dict,
    qa_to_dict,
    read_json,
    read_jsonl,
    triple_from_dict,
    validate_rows,
    write_json,
    write_jsonl,
)
from .segmenter import ModelKind, assign_token_spans, segment_trajectory, whitespace_token_offsets
from .shaping import (
    ObjectiveConfig,
    RatioGranularity,
    RolloutGroup,
    SimMode,
    StdMode,
    StepSignal,
    collect_reference_trajectory,
    shape_rollout_group,
    step_signals,
)
from .synthesis import (
    RoleClients,
    SynthesisConfig,
    difficulty_filter,
    difficulty_rollouts,
    run_pipeline,
)
from .util import atomic_write_text


@dataclasses.dataclass
class ToolState:
    config: dict
    seed: int
    mock: bool


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise SchemaViolation(f"{path}: config root must be a mapping")
    return data


def _take(section: dict, overrides: dict) -> dict:
    merged = dict(section)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


def _synthesis_config(state: ToolState, **overrides) -> SynthesisConfig:
    section = _take(state.config.get("synthesis", {}), overrides)
    kwargs = {}
    for key, value in section.items():
        if key == "paradigm_weights":
            kwargs[key] = {Paradigm(k): float(v) for k, v in value.items()}
        elif key == "strategy":
            kwargs[key] = PathStrategy(value)
        elif key in ("hop_range", "hop_bounds", "token_window", "difficulty_band"):
            kwargs[key] = tuple(value)
        elif key == "obfuscation_categories":
            kwargs[key] = {k: ObfuscationCategory(v) for k, v in value.items()}
        elif key in (
            "min_docs",
            "max_attempts",
            "obfuscation_density",
            "distractor_count",
            "robustness_rollouts",
            "answer_word_cap",
            "difficulty_rollouts",
            "rollout_temperature",
            "rollout_top_p",
            "run_difficulty",
            "max_workers",
            "prompt_overrides",
        ):
            kwargs[key] = value
        else:
            raise SchemaViolation(f"unknown synthesis config key {key!r}")
    return SynthesisConfig(**kwargs)


def _objective_config(state: ToolState, **overrides) -> ObjectiveConfig:
    section = _take(state.config.get("objective", {}), overrides)
    kwargs = {}
    for key, value in section.items():
        if key == "ratio_granularity":
            kwargs[key] = RatioGranularity(value)
        elif key == "std_mode":
            kwargs[key] = StdMode(value)
        elif key in ("epsilon", "beta", "std_floor"):
            kwargs[key] = float(value)
        else:
            raise SchemaViolation(f"unknown objective config key {key!r}")
    return ObjectiveConfig(**kwargs)


def _role_clients(state: ToolState) -> RoleClients:
    if state.mock:
        set_mock_mode(True)
        from .mocks import build_role_clients

        return build_role_clients()
    section = state.config.get("clients", {})
    allowed = {f.name for f in dataclasses.fields(ClientConfig)}
    unknown = set(section) - allowed
    if unknown:
        raise SchemaViolation(f"unknown clients config key(s): {sorted(unknown)}")
    base = ClientConfig.from_env(**section)
    roles = state.config.get("roles", {})

    def chat_for(role: str) -> ChatClient:
        model = roles.get(role)
        cfg = base if model is None else dataclasses.replace(base, model=model)
        return ChatClient(cfg)

    embed_cfg = base
    if roles.get("embedder"):
        embed_cfg = dataclasses.replace(base, model=roles["embedder"])
    return RoleClients(
        generator=chat_for("generator"),
        responder=chat_for("responder"),
        verifier=chat_for("verifier"),
        judge=chat_for("judge"),
        embedder=EmbeddingClient(embed_cfg),
    )


def _lazy_clients(state: ToolState):
    holder: dict = {}

    def get() -> RoleClients:
        if "clients" not in holder:
            holder["clients"] = _role_clients(state)
        return holder["clients"]

    return get


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None, help="YAML config file.")
@click.option("--seed", type=int, default=None, help="Global RNG seed (overrides config).")
@click.option("--mock", is_flag=True, default=False, help="Run offline against deterministic mock clients.")
@click.pass_context
def cli(ctx, config_path, seed, mock):
    """Tools for step-shaped advantage computation and QA synthesis."""
    config = _load_config(config_path)
    if seed is None:
        seed = int(config.get("seed", 0))
    ctx.obj = ToolState(config=config, seed=seed, mock=mock)


@cli.command("build-kg")
@click.option("--triples", "triples_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--aliases", "aliases_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.pass_obj
def cmd_build_kg(state: ToolState, triples_path, aliases_path, out_path):
    """Canonicalize triples into a deduplicated knowledge graph JSON."""
    rows = read_jsonl(triples_path)
    validate_rows(rows, TRIPLE_SCHEMA, where=triples_path)
    alias_map = None
    if aliases_path is not None:
        with open(aliases_path, "r", encoding="utf-8") as fh:
            alias_map = yaml.safe_load(fh)
        if alias_map is not None and not isinstance(alias_map, dict):
            raise SchemaViolation(f"{aliases_path}: alias file must be a mapping")
    graph = build_graph((triple_from_dict(r) for r in rows), alias_map)
    write_json(out_path, graph.to_dict())
    click.echo(f"built graph: {len(graph)} entities, {len(graph.edges)} edges -> {out_path}")


@cli.command("sample-paths")
@click.option("--kg", "kg_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--count", type=int, default=10, show_default=True)
@click.option("--hops-min", type=int, default=2, show_default=True)
@click.option("--hops-max", type=int, default=4, show_default=True)
@click.option("--strategy", type=click.Choice([s.value for s in PathStrategy]), default=PathStrategy.RANDOM_WALK.value, show_default=True)
@click.option("--min-docs", type=int, default=None, help="Distinct source documents required (default: max(2, ceil(hops/3))).")
@click.option("--max-attempts", type=int, default=10000, show_default=True)
@click.pass_obj
def cmd_sample_paths(state: ToolState, kg_path, out_path, count, hops_min, hops_max, strategy, min_docs, max_attempts):
    """Sample simple reasoning paths from a knowledge graph."""
    if hops_min > hops_max:
        raise click.BadParameter("--hops-min must not exceed --hops-max")
    graph = KnowledgeGraph.from_dict(read_json(kg_path))
    strat = PathStrategy(strategy)
    rng = random.Random(state.seed)
    rows = []
    for i in range(count):
        hops = rng.randint(hops_min, hops_max)
        item_seed = state.seed * 1_000_003 + i
        path = sample_path(
            graph,
            strategy=strat,
            hops=hops,
            min_docs=min_docs,
            rng_seed=item_seed,
            max_attempts=max_attempts,
        )
        rows.append(path_to_dict(path, seed=item_seed, strategy=strat.value))
    write_jsonl(out_path, rows)
    click.echo(f"sampled {len(rows)} paths -> {out_path}")


@cli.command("synth")
@click.option("--kg", "kg_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--docs", "docs_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--stats-out", "stats_path", type=click.Path(dir_okay=False), default=None)
@click.option("--count", type=int, default=10, show_default=True)
@click.option("--difficulty/--no-difficulty", "difficulty", default=None, help="Run the difficulty filter stage inside the pipeline.")
@click.pass_obj
def cmd_synth(state: ToolState, kg_path, docs_path, out_path, stats_path, count, difficulty):
    """Synthesize QA items over a graph and document corpus."""
    doc_rows = read_jsonl(docs_path)
    validate_rows(doc_rows, DOCUMENT_SCHEMA, where=docs_path)
    corpus = [document_from_dict(r) for r in doc_rows]
    graph = KnowledgeGraph.from_dict(read_json(kg_path))
    cfg = _synthesis_config(state, run_difficulty=difficulty)
    clients = _role_clients(state)
    result = run_pipeline(cfg, corpus, graph, clients, count, rng_seed=state.seed)
    write_jsonl(out_path, [qa_to_dict(item) for item in result.items])
    stats = result.stats.as_dict()
    stats["conserved"] = result.stats.conserved()
    if stats_path is not None:
        write_json(stats_path, stats)
    else:
        click.echo(json.dumps(stats, ensure_ascii=False))
    click.echo(f"emitted {result.stats.emitted} of {count} items -> {out_path}")


def _trajectory_reward(t_row: dict, answer: str | None, row: dict, gid: str, index: int) -> int:
    raw = t_row.get("reward")
    if raw is None:
        gold = row.get("gold")
        if gold is None:
            raise SchemaViolation(
                f"group {gid}: trajectory {index} has no reward and the row has no gold answer"
            )
        return rule_reward(answer or "", gold)
    value = float(raw)
    if value not in (0.0, 1.0):
        raise SchemaViolation(f"group {gid}: trajectory {index} reward {raw!r} is not binary")
    return int(value)


def _reference_for(row: dict, get_clients, gid: str):
    text = row.get("reference_text")
    if text:
        return segment_trajectory(text)
    chain_text = row.get("gt_chain")
    if chain_text:
        chain = parse_gt_chain(chain_text)
        return collect_reference_trajectory(
            get_clients().responder, row.get("question", ""), [], chain
        )
    raise SchemaViolation(
        f"group {gid}: negative trajectories lack signals and the row has neither "
        "reference_text nor gt_chain to derive them"
    )


def _build_rollout_group(row: dict, get_clients, sim_mode: SimMode) -> RolloutGroup:
    gid = row["group_id"]
    trajectories = []
    rewards = []
    for k, t_row in enumerate(row["trajectories"]):
        kind = ModelKind(t_row["model_kind"]) if t_row.get("model_kind") else ModelKind.INSTRUCT
        traj = segment_trajectory(t_row["text"], kind)
        if t_row.get("token_offsets"):
            traj = assign_token_spans(traj, [tuple(p) for p in t_row["token_offsets"]])
        trajectories.append(traj)
        rewards.append(_trajectory_reward(t_row, traj.answer, row, gid, k))
    signals: list[list[StepSignal] | None] = []
    reference = None
    for k, t_row in enumerate(row["trajectories"]):
        if rewards[k] == 1 or not trajectories[k].steps:
            signals.append(None)
            continue
        given = t_row.get("signals")
        if given:
            signals.append([StepSignal(bool(s["valid"]), float(s["sim"])) for s in given])
            continue
        if reference is None:
            reference = _reference_for(row, get_clients, gid)
        clients = get_clients()
        signals.append(step_signals(trajectories[k], reference, clients.judge, clients.embedder, sim_mode))
    return RolloutGroup(gid, trajectories, rewards, signals=signals)


@cli.command("shape")
@click.option("--rollouts", "rollouts_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--std-mode", type=click.Choice([m.value for m in StdMode]), default=None)
@click.option("--std-floor", type=float, default=None)
@click.option("--sim-mode", type=click.Choice([m.value for m in SimMode]), default=SimMode.BEST_STEP.value, show_default=True)
@click.option("--backend", type=click.Choice(["numpy", "numba"]), default=None, help="Kernel backend (default: auto).")
@click.pass_obj
def cmd_shape(state: ToolState, rollouts_path, out_path, std_mode, std_floor, sim_mode, backend):
    """Compute shaped group/step/token advantages for rollout groups.

    Missing rewards are filled by the rule check against the row's gold
    answer; missing negative-step signals are derived from reference_text
    (or collected from gt_chain) via the judge and embedder.
    """
    rows = read_jsonl(rollouts_path)
    validate_rows(rows, ROLLOUTS_SCHEMA, where=rollouts_path)
    cfg = _objective_config(state, std_mode=std_mode, std_floor=std_floor)
    get_clients = _lazy_clients(state)
    out_rows = []
    for row in rows:
        group = _build_rollout_group(row, get_clients, SimMode(sim_mode))
        shaped = shape_rollout_group(group, cfg, backend=backend)
        per_trajectory = []
        for k in range(len(group.trajectories)):
            entry = {
                "step_advantages": [float(v) for v in shaped.step_advantages[k]],
                "coefficients": [float(v) for v in shaped.coefficients[k]],
            }
            if shaped.token_advantages is not None and shaped.token_advantages[k] is not None:
                entry["token_advantages"] = [float(v) for v in shaped.token_advantages[k]]
            per_trajectory.append(entry)
        out_rows.append(
            {
                "group_id": group.question_id,
                "group_advantages": [float(v) for v in shaped.group_advantages],
                "per_trajectory": per_trajectory,
            }
        )
    write_jsonl(out_path, out_rows)
    click.echo(f"shaped {len(out_rows)} groups -> {out_path}")


@cli.command("score")
@click.option("--predictions", "predictions_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--match-mode", type=click.Choice([m.value for m in MatchMode]), default=MatchMode.NORMALIZED.value, show_default=True)
@click.option("--rule-only", is_flag=True, default=False, help="Skip the judge; score with the rule check alone.")
@click.pass_obj
def cmd_score(state: ToolState, predictions_path, out_path, match_mode, rule_only):
    """Score predicted answers against gold with the hybrid reward."""
    rows = read_jsonl(predictions_path)
    validate_rows(rows, PREDICTION_SCHEMA, where=predictions_path)
    mode = MatchMode(match_mode)
    get_clients = _lazy_clients(state)
    out_rows = []
    total = 0.0
    for i, row in enumerate(rows):
        if rule_only:
            rule = rule_reward(row["predicted"], row["gold"], mode)
            record = RewardRecord(rule=rule, judge=None, hybrid=rule)
        else:
            record = hybrid_reward(
                get_clients().verifier, row.get("question", ""), row["predicted"], row["gold"], mode
            )
        total += record.hybrid
        out_rows.append(
            {
                "id": row.get("id", f"row-{i:06d}"),
                "rule": record.rule,
                "judge": record.judge,
                "hybrid": record.hybrid,
            }
        )
    write_jsonl(out_path, out_rows)
    mean = total / len(out_rows) if out_rows else 0.0
    click.echo(f"scored {len(out_rows)} predictions, mean_hybrid={mean:.4f} -> {out_path}")


@cli.command("diagnose")
@click.option("--rollouts", "rollouts_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--bin-width", type=float, default=0.125, show_default=True)
@click.option("--aliases", "aliases_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_obj
def cmd_diagnose(state: ToolState, rollouts_path, out_path, bin_width, aliases_path):
    """Bucket negative-rollout coverage by group positive ratio (CSV out)."""
    rows = read_jsonl(rollouts_path)
    validate_rows(rows, ROLLOUTS_SCHEMA, where=rollouts_path)
    aliases = None
    if aliases_path is not None:
        with open(aliases_path, "r", encoding="utf-8") as fh:
            aliases = yaml.safe_load(fh)
    get_clients = _lazy_clients(state)
    groups = []
    for row in rows:
        gid = row["group_id"]
        chain_text = row.get("gt_chain")
        if not chain_text:
            raise SchemaViolation(f"group {gid}: diagnose needs gt_chain on every row")
        path = parse_gt_chain(chain_text)
        rewards = []
        records = []
        for k, t_row in enumerate(row["trajectories"]):
            traj = segment_trajectory(t_row["text"])
            reward = _trajectory_reward(t_row, traj.answer, row, gid, k)
            rewards.append(reward)
            if reward == 0:
                records.append(coverage_record(traj, path, get_clients().judge, aliases))
            else:
                records.append(None)
        groups.append((rewards, records))
    buckets = bucket_by_positive_ratio(groups, bin_width=bin_width)
    atomic_write_text(out_path, render_coverage_csv(buckets))
    click.echo(f"diagnosed {len(groups)} groups into {len(buckets)} buckets -> {out_path}")


@cli.command("filter-difficulty")
@click.option("--qa", "qa_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--docs", "docs_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--rollouts-out", "rollouts_path", type=click.Path(dir_okay=False), default=None, help="Also write the probe rollouts as rollout groups.")
@click.option("--band", type=float, nargs=2, default=None, help="Inclusive success-rate band, e.g. 0.25 0.75.")
@click.option("--rollouts-n", type=int, default=None, help="Probe rollouts per item.")
@click.pass_obj
def cmd_filter_difficulty(state: ToolState, qa_path, docs_path, out_path, rollouts_path, band, rollouts_n):
    """Keep QA items whose probe success rate falls inside the band."""
    qa_rows = read_jsonl(qa_path)
    validate_rows(qa_rows, QA_SCHEMA, where=qa_path)
    doc_rows = read_jsonl(docs_path)
    validate_rows(doc_rows, DOCUMENT_SCHEMA, where=docs_path)
    corpus = {r["doc_id"]: document_from_dict(r) for r in doc_rows}
    cfg = _synthesis_config(
        state,
        difficulty_band=tuple(band) if band else None,
        difficulty_rollouts=rollouts_n,
    )
    clients = _role_clients(state)
    kept_rows = []
    rollout_rows = []
    for row in qa_rows:
        item = qa_from_dict(row)
        missing = [d for d in item.doc_ids if d not in corpus]
        if missing:
            raise SchemaViolation(f"item {item.id}: doc_ids not in corpus: {missing}")
        docs = [corpus[d] for d in item.doc_ids]
        batch = difficulty_rollouts(clients, item, docs, cfg)
        verdict, rate = difficulty_filter(clients, item, docs, cfg, rollouts=batch)
        item.qc.append(verdict)
        if verdict.passed:
            kept_rows.append(qa_to_dict(item))
        if rollouts_path is not None:
            reference = collect_reference_trajectory(
                clients.responder, item.question, docs, item.gt_chain
            )
            rollout_rows.append(
                {
                    "group_id": item.id,
                    "question_id": item.id,
                    "question": item.question,
                    "gold": item.answer,
                    "reference_text": reference.raw_text,
                    "gt_chain": render_gt_chain(item.gt_chain),
                    "trajectories": [
                        {
                            "text": text,
                            "reward": int(correct),
                            "token_offsets": [list(p) for p in whitespace_token_offsets(text)],
                            "model_kind": ModelKind.INSTRUCT.value,
                        }
                        for text, correct in batch
                    ],
                }
            )
    write_jsonl(out_path, kept_rows)
    if rollouts_path is not None:
        write_jsonl(rollouts_path, rollout_rows)
    click.echo(f"kept {len(kept_rows)} of {len(qa_rows)} items -> {out_path}")


@cli.command("validate")
@click.option("--kind", type=click.Choice(sorted(list(SCHEMAS_BY_KIND) + ["kg"])), required=True)
@click.option("--file", "file_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.pass_obj
def cmd_validate(state: ToolState, kind, file_path):
    """Validate a JSON/JSONL artifact against its schema."""
    if kind == "kg":
        payload = read_json(file_path)
        validate_rows([payload], KG_SCHEMA, where=file_path)
        click.echo(f"ok: {file_path} is a valid knowledge graph")
        return
    rows = read_jsonl(file_path)
    validate_rows(rows, SCHEMAS_BY_KIND[kind], where=file_path)
    click.echo(f"ok: {len(rows)} {kind} row(s) valid in {file_path}")


def _emit_error(name: str, message: str, **extra):
    record = {"error": name, "message": message}
    record.update({k: v for k, v in extra.items() if v is not None})
    print(json.dumps(record, ensure_ascii=False), file=sys.stderr)


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point with explicit exit-code mapping (no click standalone mode)."""
    try:
        cli.main(args=list(argv) if argv is not None else None, standalone_mode=False)
    except click.exceptions.Abort:
        _emit_error("Aborted", "aborted")
        return 1
    except click.ClickException as exc:
        _emit_error(type(exc).__name__, exc.format_message())
        return 1
    except (ClientError, MockModeViolation) as exc:
        kind = getattr(exc, "kind", None)
        _emit_error(
            type(exc).__name__,
            str(exc),
            kind=kind.value if kind is not None else None,
            status=getattr(exc, "status", None),
        )
        return 3
    except (StepshapeError, ValueError, OSError) as exc:
        _emit_error(type(exc).__name__, str(exc))
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
