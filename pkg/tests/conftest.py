"""Shared builders for the test suite."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from cellgraph.notebook import Notebook, load_notebook

FIXTURES = Path(__file__).parent / "fixtures"
GOLDENS = FIXTURES / "goldens"


def cell_dict(kind: str, source: str, cell_id: str | None = None, **extra) -> dict:
    raw: dict = {
        "cell_type": kind,
        "metadata": extra.pop("metadata", {}),
        "source": source.splitlines(keepends=True) or [],
    }
    if cell_id is not None:
        raw["id"] = cell_id
    if kind == "code":
        raw["outputs"] = extra.pop("outputs", [])
        raw["execution_count"] = extra.pop("exec_count", None)
    raw.update(extra)
    return raw


def notebook_dict(cells: list[dict], metadata: dict | None = None) -> dict:
    return {
        "cells": cells,
        "metadata": metadata or {},
        "nbformat": 4,
        "nbformat_minor": 5,
    }


def make_notebook(specs: list[tuple], metadata: dict | None = None) -> Notebook:
    """specs: (kind, source) or (kind, source, cell_id) tuples."""
    cells = []
    for i, spec in enumerate(specs):
        kind, source = spec[0], spec[1]
        cell_id = spec[2] if len(spec) > 2 else f"cell{i + 1}"
        cells.append(cell_dict(kind, source, cell_id))
    return load_notebook(json.dumps(notebook_dict(cells, metadata)))


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def goldens_dir() -> Path:
    return GOLDENS
