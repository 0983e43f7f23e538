"""Key-value configuration for the CLI and service.

The file format is flat ``key = value`` lines (quotes optional, ``#``
comments allowed). Credentials never live here — the API key comes from the
environment variable named in :mod:`cellgraph.gateway`.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

DEFAULTS = {
    "model": "gpt-4o-mini",
    "api_base": "https://api.openai.com/v1",
    "host": "127.0.0.1",
    "port": "8000",
    "temperature": "0",
}


def load_config(path: Optional[str] = None) -> dict[str, str]:
    config = dict(DEFAULTS)
    if path is None:
        return config
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, value = stripped.partition("=")
        value = value.strip().strip("'\"")
        config[key.strip()] = value
    return config
