"""JSONL schemas and file helpers shared by the command-line tools.

Every artifact the tools exchange is either a JSON document or JSONL with one
record per line. Schemas are plain jsonschema dicts; validate_rows reports the
first offending line by number so failures are actionable from a shell.
"""

from __future__ import annotations

import json
from typing import Iterable, Sequence

import jsonschema

from .errors import SchemaViolation
from .kgraph import PathStrategy
from .model import Document, Paradigm, QAItem, ReasoningPath, Triple, parse_gt_chain, render_gt_chain
from .synthesis import QCStage, QCVerdict
from .util import atomic_write_text

_NONEMPTY = {"type": "string", "minLength": 1}
_STRING = {"type": "string"}
_NUMBER = {"type": "number"}
_NUMBERS = {"type": "array", "items": {"type": "number"}}

TRIPLE_SCHEMA = {
    "type": "object",
    "properties": {
        "subject": _NONEMPTY,
        "relation": _NONEMPTY,
        "object": _NONEMPTY,
        "doc_id": _STRING,
    },
    "required": ["subject", "relation", "object"],
}

DOCUMENT_SCHEMA = {
    "type": "object",
    "properties": {
        "doc_id": _NONEMPTY,
        "title": _STRING,
        "body": _STRING,
        "token_count": {"type": "integer", "minimum": 0},
    },
    "required": ["doc_id", "body"],
}

KG_SCHEMA = {
    "type": "object",
    "properties": {
        "entities": {"type": "array", "items": _NONEMPTY},
        "edges": {"type": "array", "items": TRIPLE_SCHEMA},
    },
    "required": ["entities", "edges"],
}

PATH_SCHEMA = {
    "type": "object",
    "properties": {
        "nodes": {"type": "array", "items": _NONEMPTY, "minItems": 2},
        "relations": {"type": "array", "items": _NONEMPTY, "minItems": 1},
        "doc_ids": {"type": "array", "items": _STRING},
        "hops": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
        "strategy": {"enum": [s.value for s in PathStrategy]},
    },
    "required": ["nodes", "relations"],
}

QC_SCHEMA = {
    "type": "object",
    "properties": {
        "stage": {"enum": [s.value for s in QCStage]},
        "passed": {"type": "boolean"},
        "detail": _STRING,
    },
    "required": ["stage", "passed"],
}

QA_SCHEMA = {
    "type": "object",
    "properties": {
        "id": _NONEMPTY,
        "question": _NONEMPTY,
        "answer": _NONEMPTY,
        "paradigm": {"enum": [p.value for p in Paradigm]},
        "hops": {"type": "integer", "minimum": 1},
        "doc_ids": {"type": "array", "items": _STRING},
        "gt_chain": _NONEMPTY,
        "token_count": {"type": "integer", "minimum": 0},
        "qc": {"type": "array", "items": QC_SCHEMA},
    },
    "required": ["id", "question", "answer", "paradigm", "gt_chain"],
}

SIGNAL_SCHEMA = {
    "type": "object",
    "properties": {
        "valid": {"type": "boolean"},
        "sim": {"type": "number", "minimum": 0.0, "maximum": 1.0},
    },
    "required": ["valid", "sim"],
}

TRAJECTORY_SCHEMA = {
    "type": "object",
    "properties": {
        "text": _NONEMPTY,
        "reward": _NUMBER,
        "logp_new": _NUMBERS,
        "logp_old": _NUMBERS,
        "token_offsets": {
            "type": "array",
            "items": {
                "type": "array",
                "items": {"type": "integer", "minimum": 0},
                "minItems": 2,
                "maxItems": 2,
            },
        },
        "signals": {"type": "array", "items": SIGNAL_SCHEMA},
        "model_kind": _STRING,
    },
    "required": ["text"],
}

ROLLOUTS_SCHEMA = {
    "type": "object",
    "properties": {
        "group_id": _NONEMPTY,
        "question_id": _STRING,
        "question": _STRING,
        "gold": _STRING,
        "reference_text": _STRING,
        "gt_chain": _STRING,
        "trajectories": {"type": "array", "items": TRAJECTORY_SCHEMA, "minItems": 1},
    },
    "required": ["group_id", "trajectories"],
}

ADVANTAGES_SCHEMA = {
    "type": "object",
    "properties": {
        "group_id": _NONEMPTY,
        "group_advantages": _NUMBERS,
        "per_trajectory": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "step_advantages": _NUMBERS,
                    "coefficients": _NUMBERS,
                    "token_advantages": _NUMBERS,
                },
                "required": ["step_advantages", "coefficients"],
            },
        },
    },
    "required": ["group_id", "group_advantages", "per_trajectory"],
}

PREDICTION_SCHEMA = {
    "type": "object",
    "properties": {
        "id": _STRING,
        "question": _STRING,
        "predicted": _STRING,
        "gold": _NONEMPTY,
    },
    "required": ["predicted", "gold"],
}

REWARD_SCHEMA = {
    "type": "object",
    "properties": {
        "id": _STRING,
        "rule": _NUMBER,
        "judge": {"type": ["number", "null"]},
        "hybrid": _NUMBER,
    },
    "required": ["rule", "hybrid"],
}

SCHEMAS_BY_KIND = {
    "triples": TRIPLE_SCHEMA,
    "docs": DOCUMENT_SCHEMA,
    "paths": PATH_SCHEMA,
    "qa": QA_SCHEMA,
    "rollouts": ROLLOUTS_SCHEMA,
    "advantages": ADVANTAGES_SCHEMA,
    "predictions": PREDICTION_SCHEMA,
    "rewards": REWARD_SCHEMA,
}


def read_jsonl(path: str) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"{path}:{lineno}: not valid JSON: {exc}") from exc
    return rows


def dump_jsonl(rows: Iterable[dict]) -> str:
    return "".join(json.dumps(row, ensure_ascii=False) + "\n" for row in rows)


def write_jsonl(path: str, rows: Iterable[dict]):
    atomic_write_text(path, dump_jsonl(rows))


def read_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_json(path: str, payload: dict):
    atomic_write_text(path, json.dumps(payload, ensure_ascii=False, indent=2) + "\n")


def validate_rows(rows: Sequence[dict], schema: dict, where: str = "<rows>"):
    """First failure wins; the error names the file and 1-based row number."""
    validator = jsonschema.Draft202012Validator(schema)
    for i, row in enumerate(rows, start=1):
        error = jsonschema.exceptions.best_match(validator.iter_errors(row))
        if error is not None:
            raise SchemaViolation(f"{where}:{i}: {error.message}")


def triple_from_dict(row: dict) -> Triple:
    return Triple(row["subject"], row["relation"], row["object"], row.get("doc_id", ""))


def document_from_dict(row: dict) -> Document:
    return Document(
        doc_id=row["doc_id"],
        title=row.get("title", ""),
        body=row["body"],
        token_count=row.get("token_count"),
    )


def path_to_dict(path: ReasoningPath, seed: int | None = None, strategy: str | None = None) -> dict:
    row = {
        "nodes": list(path.nodes),
        "relations": list(path.relations),
        "doc_ids": list(path.doc_ids),
        "hops": path.hops,
    }
    if seed is not None:
        row["seed"] = seed
    if strategy is not None:
        row["strategy"] = strategy
    return row


def path_from_dict(row: dict) -> ReasoningPath:
    return ReasoningPath(row["nodes"], row["relations"], row.get("doc_ids", ()))


def qa_to_dict(item: QAItem) -> dict:
    return {
        "id": item.id,
        "question": item.question,
        "answer": item.answer,
        "paradigm": item.paradigm.value,
        "hops": item.hops,
        "doc_ids": list(item.doc_ids),
        "gt_chain": render_gt_chain(item.gt_chain),
        "token_count": item.token_count,
        "qc": [
            {"stage": v.stage.value, "passed": v.passed, "detail": v.detail}
            for v in item.qc
        ],
    }


def qa_from_dict(row: dict) -> QAItem:
    chain = parse_gt_chain(row["gt_chain"])
    item = QAItem(
        id=row["id"],
        question=row["question"],
        answer=row["answer"],
        paradigm=Paradigm(row["paradigm"]),
        doc_ids=list(row.get("doc_ids", [])),
        gt_chain=chain,
        token_count=row.get("token_count", 0),
    )
    for v in row.get("qc", []):
        item.qc.append(QCVerdict(QCStage(v["stage"]), v["passed"], v.get("detail", "")))
    return item
