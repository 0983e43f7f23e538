#!/usr/bin/env python3
"""Regenerate committed fixtures: golden prompt files, the scenario
notebook/kernel/recordings trio, and the persistence-suite notebooks.

Run from the repo root after any intentional template or scenario change:

    python3 scripts/gen_goldens.py
"""

from __future__ import annotations

import json
import random
import tempfile
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from starlette.testclient import TestClient  # noqa: E402

from cellgraph.cli import render_bundle_text  # noqa: E402
from cellgraph.context import TaskType  # noqa: E402
from cellgraph.prompts import PromptBundle, parse_timestamp  # noqa: E402
from cellgraph.service import Engine, create_app  # noqa: E402
from cellgraph.session import MockKernel  # noqa: E402

import appendix_combos  # noqa: E402
import scenario_data as sd  # noqa: E402
from scenario_driver import run_scenario  # noqa: E402

FIXTURES = ROOT / "tests" / "fixtures"
GOLDENS = FIXTURES / "goldens"


def write(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, bytes):
        path.write_bytes(data)
    else:
        path.write_text(data, encoding="utf-8")
    print(f"wrote {path.relative_to(ROOT)}")


def gen_scenario_fixtures() -> None:
    write(FIXTURES / "scenario.ipynb", json.dumps(sd.notebook_fixture(), indent=1) + "\n")
    write(FIXTURES / "scenario_kernel.json", json.dumps(sd.kernel_fixture(), indent=1) + "\n")

    with tempfile.TemporaryDirectory() as workdir:
        nb_path = Path(workdir) / "scenario_live.ipynb"
        nb_path.write_text(json.dumps(sd.notebook_fixture(), indent=1))
        recordings: list[dict] = []
        engine = Engine(nb_path, kernel=MockKernel(sd.kernel_fixture()), llm=None)
        with TestClient(create_app(engine)) as client:
            out = run_scenario(client, engine, nb_path, mode="record", recordings=recordings)

    write(FIXTURES / "scenario_recordings.json", json.dumps(recordings, indent=1) + "\n")
    write(FIXTURES / "cli_s2.ipynb", out["s2_notebook"])

    bundle_dict = out["s2_bundle"]
    bundle = PromptBundle(
        system_text=bundle_dict["system_text"],
        user_text=bundle_dict["user_text"],
        attachments=tuple((a["mime"], a["data"]) for a in bundle_dict["attachments"]),
        task=TaskType(bundle_dict["task"]),
        timestamp=parse_timestamp(bundle_dict["timestamp"]),
    )
    write(GOLDENS / "scenario_s2_prompt.txt", render_bundle_text(bundle))


def gen_appendix_goldens() -> None:
    for task in TaskType:
        write(GOLDENS / f"appendix_{task.value}.txt", appendix_combos.golden_text(task))


def gen_persistence_notebook() -> None:
    """A >= 20 cell notebook with foreign metadata everywhere."""
    rng = random.Random(1234)
    cells = []
    for i in range(22):
        kind = ["code", "markdown", "raw"][i % 3 if i % 7 else 0]
        if kind == "code":
            source = f"step_{i} = transform(step_{i - 1})" if i else "step_0 = load('raw.csv')"
            cell = {
                "cell_type": "code",
                "id": f"fixture-cell-{i:02d}",
                "metadata": {"tags": [f"stage-{i % 4}"], "vendor": {"pinned": bool(i % 2)}},
                "source": source.splitlines(keepends=True),
                "outputs": [
                    {
                        "output_type": "stream",
                        "name": "stdout",
                        "text": [f"row count: {rng.randint(10, 999)}\n"],
                    }
                ]
                if i % 5 == 0
                else [],
                "execution_count": i + 1 if i % 3 == 0 else None,
            }
        else:
            cell = {
                "cell_type": kind,
                "id": f"fixture-cell-{i:02d}",
                "metadata": {"editable": i % 2 == 0},
                "source": [f"note {i}: observations about stage {i % 4}\n"],
            }
        cells.append(cell)
    doc = {
        "cells": cells,
        "metadata": {
            "kernelspec": {"display_name": "Python 3", "language": "python", "name": "python3"},
            "language_info": {"name": "python", "version": "3.10.0"},
            "widgets": {"state": {"opaque-widget": {"value": 3}}},
            "cellgraph": {
                "version": 1,
                "nodes": [
                    {"cell_id": f"fixture-cell-{i:02d}", "x": float(i * 40), "y": float(i % 5) * 90, "collapsed": i % 6 == 0}
                    for i in range(22)
                ],
                "links": [
                    {"id": f"fl{i}", "src": f"fixture-cell-{i:02d}", "dst": f"fixture-cell-{i + 3:02d}"}
                    for i in range(0, 18, 3)
                ],
                "active_cell": "fixture-cell-04",
                "last_exec": {
                    "fixture-cell-00": {
                        "source_hash": "0" * 64,
                        "status": "ok",
                    }
                },
            },
        },
        "nbformat": 4,
        "nbformat_minor": 5,
    }
    write(FIXTURES / "foreign_meta.ipynb", json.dumps(doc, indent=1) + "\n")


if __name__ == "__main__":
    gen_scenario_fixtures()
    gen_appendix_goldens()
    gen_persistence_notebook()
