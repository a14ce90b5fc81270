"""Prompt template loading and rendering.

Templates ship as package data under ``stepshape/assets/`` and can be
overridden per name with a file path (config key ``prompts``). Rendering uses
plain marker replacement instead of str.format so template bodies and field
values may contain literal braces.
"""

from __future__ import annotations

from importlib import resources


TEMPLATE_NAMES = (
    "training_system",
    "judge_answer",
    "judge_substep",
    "generate_question",
    "paradigm_multi_hop",
    "paradigm_temporal",
    "paradigm_causal",
    "paradigm_hypothetical",
    "obfuscate_entity",
)


def load_prompt(name: str, overrides: dict[str, str] | None = None) -> str:
    """Return the template text for ``name``, honoring path overrides."""
    if overrides and name in overrides:
        with open(overrides[name], encoding="utf-8") as fh:
            return fh.read()
    if name not in TEMPLATE_NAMES:
        raise KeyError(f"unknown prompt template: {name!r}")
    return resources.files("stepshape.assets").joinpath(f"{name}.txt").read_text(encoding="utf-8")


def render(template: str, **fields: str) -> str:
    """Replace ``{field}`` markers with values; untouched markers stay as-is."""
    out = template
    for key, value in fields.items():
        out = out.replace("{" + key + "}", str(value))
    return out


def format_documents(docs) -> str:
    """Render documents as numbered article blocks for prompt context."""
    blocks = []
    for i, doc in enumerate(docs, start=1):
        title = doc.title or doc.doc_id
        blocks.append(f"Article {i}: {title}\n{doc.body}")
    return "\n\n".join(blocks)
