"""Prompt rendering: system instructions, user message, provenance header.

The six task templates follow one shape: a role line, a "You receive:"
list whose entries appear only when the matching material is non-empty,
task bullets gated the same way, and the provenance-header instruction. The
narrative-text tasks reuse the generation/modification skeletons with the
code wording swapped for text. Rendering is a pure function of
(material, selection, timestamp); golden files pin every byte.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Optional

from .context import ContextMaterial, ContextSelection, TaskType

HEADER_PREFIX = "### Generated by AI"


def rfc3339(ts: datetime) -> str:
    """UTC, seconds precision, trailing Z."""
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_timestamp(text: str) -> datetime:
    return datetime.fromisoformat(text.replace("Z", "+00:00"))


def header_comment(ts: datetime, prompt: str) -> str:
    """The provenance header line; newlines in the prompt become spaces."""
    flat = " ".join(prompt.splitlines()) if prompt else ""
    return f"{HEADER_PREFIX} at {rfc3339(ts)}; Prompt: {flat}"


# ---------------------------------------------------------------------------
# System instructions


_ROLES = {
    TaskType.FIX: "You are an AI assistant that modifies Python code to fix runtime errors in a Jupyter Notebook cell.",
    TaskType.MODIFY_CODE: "You are an AI assistant that modifies Python code in a Jupyter Notebook cell.",
    TaskType.GEN_CODE: "You are an AI assistant that generates Python code for a Jupyter Notebook cell.",
    TaskType.EXPLAIN: "You are an AI assistant that explains code/output or answers questions about them.",
    TaskType.WRITE_TEXT: "You are an AI assistant that generates narrative text for a Jupyter Notebook cell.",
    TaskType.EDIT_TEXT: "You are an AI assistant that modifies narrative text in a Jupyter Notebook cell.",
}

_TEXTUAL = {TaskType.WRITE_TEXT, TaskType.EDIT_TEXT}


def _receive_lines(task: TaskType, material: ContextMaterial, sel: ContextSelection) -> list[str]:
    body = "text" if task in _TEXTUAL else "code"
    lines = []
    if material.full_text:
        lines.append(f"-- the full {body}")
    if task not in (TaskType.GEN_CODE, TaskType.WRITE_TEXT) and material.selected_text:
        if task is TaskType.EXPLAIN:
            lines.append("-- the selected part")
        else:
            lines.append(f"-- the selected part of the {body}")
    if material.context_cell_texts:
        lines.append("-- the context cell(s)")
    if material.context_data:
        lines.append("-- the context data(s)")
    if sel.include_output and (material.output_texts or material.images):
        lines.append("-- the outputs")
    if task is TaskType.FIX:
        lines.append("-- the error message (runtime error)")
    lines.append("-- a prompt (the user's instructions)")
    return lines


def _bullets(task: TaskType, material: ContextMaterial) -> list[str]:
    has_selected = bool(material.selected_text)
    has_full = bool(material.full_text)
    body = "text" if task in _TEXTUAL else "code"
    bullets = []
    if task is TaskType.FIX:
        if has_selected:
            bullets.append(
                "* If selectedText is non-empty, only fix that portion; do not alter other parts. "
                "Output the full corrected code that replaces the selected portion."
            )
        elif has_full:
            bullets.append(
                "* If selectedText is empty but fullText is non-empty, output the entire corrected code."
            )
    elif task in (TaskType.MODIFY_CODE, TaskType.EDIT_TEXT):
        if has_selected:
            bullets.append(
                "* If selectedText is non-empty, modify only that portion; do not alter unselected parts. "
                "Output only the new content that replaces the selection."
            )
        elif has_full:
            bullets.append(
                f"* If selectedText is empty but fullText is non-empty, output the entire modified {body}."
            )
    elif task in (TaskType.GEN_CODE, TaskType.WRITE_TEXT):
        if has_full:
            bullets.append(
                f"* If fullText is non-empty, your output should be the new {body} appended to the existing {body}."
            )
    elif task is TaskType.EXPLAIN:
        if has_selected:
            bullets.append(
                "* If selectedText is non-empty, focus on that portion while considering the full code/context."
            )
    return bullets


def _header_clause(task: TaskType, ts: datetime, prompt: str) -> str:
    header = header_comment(ts, prompt)
    if task in (TaskType.FIX, TaskType.MODIFY_CODE, TaskType.GEN_CODE):
        return (
            "At the beginning of the code, include:\n"
            f'"{header}"\n'
            f'as a comment. Do not remove existing lines starting with "{HEADER_PREFIX}" from the input.'
        )
    if task is TaskType.EXPLAIN:
        return (
            "At the beginning of your response, include:\n"
            f'"{header}"\n'
            f'Do not remove existing lines starting with "{HEADER_PREFIX}" from the input.'
        )
    return (
        "At the beginning of the text, include:\n"
        f'"{header}"\n'
        f'Do not remove existing lines starting with "{HEADER_PREFIX}" from the input.'
    )


def render_system_instruction(
    material: ContextMaterial, sel: ContextSelection, ts: Optional[datetime] = None
) -> str:
    task = sel.task
    ts = ts or datetime.now(timezone.utc)
    sections = []
    receive = "\n".join([_ROLES[task], "You receive:"] + _receive_lines(task, material, sel))
    sections.append(receive)
    bullets = _bullets(task, material)
    if task is TaskType.EXPLAIN and sel.condense:
        bullets.append(
            "* If checkBox_condense is true, produce a concise response (max three sentences)."
        )
    if bullets:
        sections.append("\n".join(bullets))
    sections.append(_header_clause(task, ts, sel.user_prompt))
    return "\n\n".join(sections)


# ---------------------------------------------------------------------------
# User message


def render_user_message(material: ContextMaterial, sel: ContextSelection) -> str:
    body = "text" if sel.task in _TEXTUAL else "code"
    lines = []
    if material.full_text:
        lines.append(f"The full {body}: {material.full_text}")
    if material.selected_text:
        lines.append(f"*** The selected part: {material.selected_text}")
    if sel.task is TaskType.FIX and material.error_text:
        lines.append(f"*** the error I got after executing the code: {material.error_text}")
    if material.context_cell_texts:
        lines.append(f"*** the context cell(s): " + "\n".join(material.context_cell_texts))
    if material.context_data:
        lines.append(f"*** the context data(s): " + "\n".join(material.context_data))
    if sel.include_output and (material.output_texts or material.images):
        segments = list(material.output_texts)
        if material.images:
            segments.append("attached as image(s)")
        lines.append("*** the output(s): " + "\n".join(segments))
    lines.append(f"*** the prompt: {sel.user_prompt}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Assembly


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str
    attachments: tuple[tuple[str, str], ...]  # (mime, base64)
    task: TaskType
    timestamp: datetime

    def to_dict(self) -> dict:
        return {
            "system_text": self.system_text,
            "user_text": self.user_text,
            "attachments": [{"mime": m, "data": d} for m, d in self.attachments],
            "task": self.task.value,
            "timestamp": rfc3339(self.timestamp),
        }


def assemble(material: ContextMaterial, sel: ContextSelection, now: datetime) -> PromptBundle:
    """Compose both renderers plus image attachments; pure in its inputs."""
    return PromptBundle(
        system_text=render_system_instruction(material, sel, now),
        user_text=render_user_message(material, sel),
        attachments=material.images if sel.include_output else (),
        task=sel.task,
        timestamp=now,
    )


# ---------------------------------------------------------------------------
# Changed-line markers


def diff_changed_lines(original: str, generated: str) -> set[int]:
    """0-based indices of generated lines absent from an LCS alignment.

    Lines are compared ignoring trailing whitespace. The backtrace is pinned
    (prefer matching later occurrences) so results are deterministic.
    """
    a = [line.rstrip() for line in original.splitlines()]
    b = [line.rstrip() for line in generated.splitlines()]
    n, m = len(a), len(b)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        row, prev = dp[i], dp[i - 1]
        ai = a[i - 1]
        for j in range(1, m + 1):
            if ai == b[j - 1]:
                row[j] = prev[j - 1] + 1
            else:
                row[j] = prev[j] if prev[j] >= row[j - 1] else row[j - 1]
    matched: set[int] = set()
    i, j = n, m
    while i > 0 and j > 0:
        if a[i - 1] == b[j - 1] and dp[i][j] == dp[i - 1][j - 1] + 1:
            matched.add(j - 1)
            i -= 1
            j -= 1
        elif dp[i - 1][j] >= dp[i][j - 1]:
            i -= 1
        else:
            j -= 1
    return {k for k in range(m) if k not in matched}
