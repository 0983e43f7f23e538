"""LLM transport and response application.

``send`` talks to whichever adapter is configured. The replay adapter keys
canned answers by a hash of (system text + user text), which makes whole
integration runs byte-reproducible; the OpenAI-compatible adapter serves
live use and is deliberately untested. Only ``apply_response`` ever writes
to the notebook.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from typing import Optional

from .errors import (
    AuthError,
    BackendError,
    InvariantViolation,
    RateLimitError,
    TransportError,
    UnknownCellError,
)
from .notebook import Notebook, generate_cell_id, new_cell_dict
from .prompts import diff_changed_lines

#: Environment variable holding the API key for live backends.
API_KEY_ENV = "CELLGRAPH_API_KEY"

DEFAULT_MODEL = "gpt-4o-mini"


@dataclass
class LlmRequest:
    model: str
    system_text: str
    user_text: str
    attachments: tuple[tuple[str, str], ...] = ()
    temperature: float = 0.0


@dataclass
class LlmResponse:
    text: str
    usage: Optional[tuple[int, int]] = None  # (prompt_tokens, completion_tokens)
    latency_ms: float = 0.0

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "usage": (
                {"prompt_tokens": self.usage[0], "completion_tokens": self.usage[1]}
                if self.usage
                else None
            ),
            "latency_ms": self.latency_ms,
        }


def request_hash(system_text: str, user_text: str) -> str:
    return hashlib.sha256((system_text + user_text).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Adapters


class ReplayAdapter:
    """Deterministic playback from a recording list.

    Recordings are ``[{"request_hash", "response_text", "usage"}]``. In
    strict mode (default) an unknown hash is a BackendError; non-strict
    echoes an empty response, useful for smoke runs.
    """

    def __init__(self, recordings: Optional[list[dict]] = None, strict: bool = True):
        self.strict = strict
        self._by_hash: dict[str, dict] = {}
        for rec in recordings or []:
            self._by_hash[rec["request_hash"]] = rec

    @classmethod
    def from_file(cls, path, strict: bool = True) -> "ReplayAdapter":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh), strict=strict)

    def complete(self, req: LlmRequest) -> LlmResponse:
        key = request_hash(req.system_text, req.user_text)
        rec = self._by_hash.get(key)
        if rec is None:
            if self.strict:
                raise BackendError(f"no recording for request hash {key[:12]}…", request_hash=key)
            return LlmResponse(text="")
        usage = tuple(rec["usage"]) if rec.get("usage") else None
        return LlmResponse(text=rec["response_text"], usage=usage)


def save_recordings(recordings: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(recordings, fh, indent=1)
        fh.write("\n")


class OpenAICompatAdapter:
    """Chat-completions transport for OpenAI-compatible backends."""

    def __init__(
        self,
        base_url: str = "https://api.openai.com/v1",
        api_key: Optional[str] = None,
        timeout: float = 120.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.timeout = timeout

    def complete(self, req: LlmRequest) -> LlmResponse:
        import httpx

        user_content: object = req.user_text
        if req.attachments:
            user_content = [{"type": "text", "text": req.user_text}] + [
                {"type": "image_url", "image_url": {"url": f"data:{mime};base64,{data}"}}
                for mime, data in req.attachments
            ]
        payload = {
            "model": req.model,
            "temperature": req.temperature,
            "messages": [
                {"role": "system", "content": req.system_text},
                {"role": "user", "content": user_content},
            ],
        }
        started = time.monotonic()
        try:
            response = httpx.post(
                f"{self.base_url}/chat/completions",
                json=payload,
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=self.timeout,
            )
        except httpx.HTTPError as exc:
            raise TransportError(f"transport failure: {exc}") from None
        if response.status_code in (401, 403):
            raise AuthError(f"authentication failed: {response.text[:200]}")
        if response.status_code == 429:
            raise RateLimitError(f"rate limited: {response.text[:200]}")
        if response.status_code >= 400:
            raise BackendError(f"backend error {response.status_code}: {response.text[:200]}")
        body = response.json()
        choice = body["choices"][0]["message"]["content"]
        usage = body.get("usage") or {}
        return LlmResponse(
            text=choice,
            usage=(usage.get("prompt_tokens", 0), usage.get("completion_tokens", 0))
            if usage
            else None,
            latency_ms=(time.monotonic() - started) * 1000.0,
        )


def send(req: LlmRequest, adapter) -> LlmResponse:
    """One call with a single retry on transient transport failure."""
    started = time.monotonic()
    try:
        response = adapter.complete(req)
    except TransportError:
        response = adapter.complete(req)  # auth/model errors never retry
    if not response.latency_ms:
        response.latency_ms = (time.monotonic() - started) * 1000.0
    return response


# ---------------------------------------------------------------------------
# Applying responses to cells


def apply_response(
    nb: Notebook,
    cell_id: str,
    response_text: str,
    mode: str = "replace",
    original_source: Optional[str] = None,
    span: Optional[tuple[int, int]] = None,
) -> tuple[Notebook, set[int], str]:
    """Write a response into the notebook.

    replace: the whole source, or just ``span`` when one was active;
    append: suffix with a separating newline;
    insert_raw_after: new raw cell following the target.

    Returns (notebook, changed line indices, affected cell id). Changed
    lines compare against ``original_source`` (the source at ask time;
    defaults to the current source).
    """
    cell = nb.cell_by_id(cell_id)
    if cell is None:
        raise UnknownCellError(f"no cell {cell_id!r}", cell_id=cell_id)
    baseline = original_source if original_source is not None else cell.source
    out = nb.copy()
    target = out.cell_by_id(cell_id)

    if mode == "replace":
        if span is not None:
            start, end = span
            current = target.source
            new_source = current[:start] + response_text + current[end:]
        else:
            new_source = response_text
        target.set_source(new_source)
        return out, diff_changed_lines(baseline, new_source), cell_id

    if mode == "append":
        current = target.source
        new_source = current + "\n" + response_text if current else response_text
        target.set_source(new_source)
        return out, diff_changed_lines(baseline, new_source), cell_id

    if mode == "insert_raw_after":
        new_id = generate_cell_id()
        out.insert_cell(out.index_of(cell_id) + 1, new_cell_dict("raw", response_text, cell_id=new_id))
        return out, set(), new_id

    raise InvariantViolation(f"unknown apply mode {mode!r}", mode=mode)
