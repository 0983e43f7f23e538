"""Drives the full usage scenario (S1-S7) through the service API.

Two modes share every step so prompts can never drift between them:
``record`` collects (request hash -> canned response) pairs via
/assist/preview for the replay recordings file; ``replay`` sends each ask
through the gateway and asserts the canned response comes back.
"""

from __future__ import annotations

from cellgraph.context import ContextSelection, TaskType, edit_selection
from cellgraph.gateway import request_hash

import scenario_data as sd


def run_scenario(client, engine, nb_path, mode: str = "replay", recordings: list | None = None) -> dict:
    out: dict = {}

    def ask(payload: dict, canned: str) -> dict:
        payload = dict(payload, timestamp=sd.TS)
        preview = client.post("/assist/preview", json=payload)
        assert preview.status_code == 200, preview.text
        bundle = preview.json()
        if mode == "record":
            recordings.append(
                {
                    "request_hash": request_hash(bundle["system_text"], bundle["user_text"]),
                    "response_text": canned,
                    "usage": [len(bundle["user_text"]) // 4, len(canned) // 4],
                }
            )
        else:
            answer = client.post("/assist/ask", json=payload)
            assert answer.status_code == 200, answer.text
            assert answer.json()["response"]["text"] == canned
        return bundle

    def selection_payload(sel: ContextSelection, prompt: str, **flags) -> dict:
        payload = sel.to_dict()
        payload["user_prompt"] = prompt
        payload.update(flags)
        return payload

    # ---- S1: drag from the first loader into empty canvas, then link the
    # second loader into the new node ------------------------------------
    created = client.post("/nodes", json={"src": sd.C1_ID, "x": 260.0, "y": 40.0, "kind": "code"})
    assert created.status_code == 201, created.text
    c3 = created.json()["cell_id"]
    out["c3"] = c3
    assert client.post("/links", json={"src": sd.C2_ID, "dst": c3}).status_code == 201
    graph = client.get("/graph").json()
    assert {(l["src"], l["dst"]) for l in graph["links"]} == {(sd.C1_ID, c3), (sd.C2_ID, c3)}
    assert graph["active_cell"] == c3
    new_cell = client.get(f"/cells/{c3}").json()
    assert new_cell["kind"] == "code" and new_cell["source"] == ""

    # ---- S2: default suggestion is both loaders plus their variables;
    # generate the combination code and Replace -----------------------------
    suggestion = client.post("/assist/suggest", json={"active": c3}).json()
    assert suggestion["cells"] == [sd.C1_ID, sd.C2_ID]
    assert suggestion["variables"] == ["data1", "data2"]
    out["s2_notebook"] = nb_path.read_bytes()
    s2_payload = {
        "active_cell": c3,
        "task": "gen_code",
        "context_cells": suggestion["cells"],
        "context_variables": suggestion["variables"],
        "user_prompt": sd.S2_PROMPT,
    }
    out["s2_bundle"] = ask(s2_payload, sd.S2_RESPONSE)
    applied = client.post(f"/cells/{c3}/apply", json={"text": sd.S2_RESPONSE, "mode": "replace"}).json()
    assert applied["status"] == "stale"
    assert client.get(f"/cells/{c3}").json()["source"] == sd.S2_RESPONSE

    # ---- S3: exactly the three data variables appear in the index ---------
    names = [v["name"] for v in client.get("/variables").json()["variables"]]
    assert sorted(names) == ["data1", "data2", "data3"]
    run = client.post("/run-path", json={"cell_id": c3}).json()
    assert [r["cell_id"] for r in run["results"]] == [sd.C1_ID, sd.C2_ID, c3]
    assert all(r["status"] == "ok" for r in run["results"])

    # ---- S4: plot node from the combined data; explain its output
    # condensed, with the image attached -----------------------------------
    c4 = client.post("/nodes", json={"src": c3, "x": 260.0, "y": 240.0, "kind": "code"}).json()["cell_id"]
    out["c4"] = c4
    client.post(f"/cells/{c4}/apply", json={"text": sd.C4_SRC, "mode": "replace"})
    run = client.post("/run-path", json={"cell_id": c4}).json()
    assert [r["cell_id"] for r in run["results"]] == [c4]  # ancestors skipped
    suggestion = client.post("/assist/suggest", json={"active": c4}).json()
    assert suggestion["cells"] == [c3] and suggestion["variables"] == ["data3"]
    s4_payload = {
        "active_cell": c4,
        "task": "explain",
        "context_cells": suggestion["cells"],
        "context_variables": suggestion["variables"],
        "include_output": True,
        "condense": True,
        "user_prompt": sd.S4_PROMPT,
    }
    s4_bundle = ask(s4_payload, sd.S4_RESPONSE)
    assert len(s4_bundle["attachments"]) == 1
    assert s4_bundle["attachments"][0]["mime"] == "image/png"
    assert "max three sentences" in s4_bundle["system_text"]
    assert "attached as image(s)" in s4_bundle["user_text"]

    # ---- S5: keep the summary as a raw cell; second plot from the income
    # loader with the first plot added as extra context ---------------------
    c5 = client.post(f"/cells/{c4}/apply", json={"text": sd.S4_RESPONSE, "mode": "insert_raw_after"}).json()["cell_id"]
    out["c5"] = c5
    raw_cell = client.get(f"/cells/{c5}").json()
    assert raw_cell["kind"] == "raw" and raw_cell["source"] == sd.S4_RESPONSE
    assert raw_cell["order"] == client.get(f"/cells/{c4}").json()["order"] + 1

    c6 = client.post("/nodes", json={"src": sd.C2_ID, "x": 520.0, "y": 300.0, "kind": "code"}).json()["cell_id"]
    out["c6"] = c6
    suggestion = client.post("/assist/suggest", json={"active": c6}).json()
    assert suggestion["cells"] == [sd.C2_ID] and suggestion["variables"] == ["data2"]
    sel = ContextSelection(
        active_cell=c6,
        task=TaskType.GEN_CODE,
        context_cells=tuple(suggestion["cells"]),
        context_variables=tuple(suggestion["variables"]),
    )
    sel = edit_selection(sel, "add_cell", c4, engine.nb, engine.index)
    assert sel.context_cells == (sd.C2_ID, c4)
    ask(selection_payload(sel, sd.S5_PROMPT), sd.S5_RESPONSE)
    client.post(f"/cells/{c6}/apply", json={"text": sd.S5_RESPONSE, "mode": "replace"})
    run = client.post("/run-path", json={"cell_id": c6}).json()
    assert [r["cell_id"] for r in run["results"]] == [c6]  # the loader is still ok

    # ---- S6: the unconnected broken cell: no suggestions, error context,
    # variable discovered via hover ------------------------------------------
    run = client.post("/run-path", json={"cell_id": sd.CERR_ID}).json()
    assert [(r["cell_id"], r["status"]) for r in run["results"]] == [(sd.CERR_ID, "error")]
    statuses = {n["cell_id"]: n["status"] for n in client.get("/graph").json()["nodes"]}
    assert statuses[sd.CERR_ID] == "error"
    suggestion = client.post("/assist/suggest", json={"active": sd.CERR_ID}).json()
    assert suggestion["cells"] == [] and suggestion["variables"] == []
    hover = client.get(f"/cells/{sd.CERR_ID}").json()
    assert "data1" in hover["used_variables"]
    s6_payload = {
        "active_cell": sd.CERR_ID,
        "task": "fix",
        "context_variables": ["data1"],
        "include_error": True,
        "user_prompt": sd.S6_PROMPT,
    }
    s6_bundle = ask(s6_payload, sd.S6_RESPONSE)
    assert (
        "*** the error I got after executing the code: "
        f"{sd.CERR_ERROR['name']}: {sd.CERR_ERROR['message']}" in s6_bundle["user_text"]
    )
    for line in sd.CERR_ERROR["traceback"]:
        assert line in s6_bundle["user_text"]
    client.post(f"/cells/{sd.CERR_ID}/apply", json={"text": sd.S6_RESPONSE, "mode": "replace"})
    run = client.post("/run-path", json={"cell_id": sd.CERR_ID}).json()
    assert [(r["cell_id"], r["status"]) for r in run["results"]] == [(sd.CERR_ID, "ok")]

    # ---- S7: median node linked from the combined data; only the direct
    # predecessor suggested; the bin labels added by hand --------------------
    c17 = client.post("/nodes", json={"src": c3, "x": 40.0, "y": 420.0, "kind": "code"}).json()["cell_id"]
    out["c17"] = c17
    suggestion = client.post("/assist/suggest", json={"active": c17}).json()
    assert suggestion["cells"] == [c3], "only the direct predecessor is suggested"
    assert suggestion["variables"] == ["data3"]
    sel = ContextSelection(
        active_cell=c17,
        task=TaskType.GEN_CODE,
        context_cells=tuple(suggestion["cells"]),
        context_variables=tuple(suggestion["variables"]),
    )
    sel = edit_selection(sel, "add_variable", "labels", engine.nb, engine.index)
    assert sel.context_variables == ("data3", "labels")
    s7_bundle = ask(selection_payload(sel, sd.S7_PROMPT), sd.S7_RESPONSE)
    assert "labels: sequence (4 items)" in s7_bundle["user_text"]
    client.post(f"/cells/{c17}/apply", json={"text": sd.S7_RESPONSE, "mode": "replace"})
    run = client.post("/run-path", json={"cell_id": c17}).json()
    assert [r["cell_id"] for r in run["results"]] == [c17]
    assert run["results"][0]["status"] == "ok"

    # final sanity: order labels reflect the insert-after-source layout
    orders = {n["cell_id"]: n["order"] for n in client.get("/graph").json()["nodes"]}
    assert orders[sd.C1_ID] == 1 and orders[c3] == 2 and orders[c17] == 3
    assert orders[c4] == 4 and orders[c5] == 5 and orders[sd.C2_ID] == 6
    assert orders[c6] == 7 and orders[sd.CERR_ID] == 8
    return out
