"""Notebook store: lossless round trips, ids, reserved metadata."""

import json

import pytest

from cellgraph.errors import (
    DanglingRefError,
    DuplicateIdError,
    MetadataVersionError,
    ParseError,
    SchemaError,
    VersionError,
)
from cellgraph.notebook import (
    METADATA_KEY,
    ExecMeta,
    GraphMetadata,
    LinkMeta,
    NodeMeta,
    Output,
    ensure_cell_ids,
    load_notebook,
    output_to_ipynb,
    parse_ipynb_output,
    read_graph_metadata,
    save_notebook,
    source_hash,
    write_graph_metadata,
)

from conftest import cell_dict, make_notebook, notebook_dict


def test_load_minimal_empty_document():
    nb = load_notebook(json.dumps(notebook_dict([])))
    assert nb.cells == []
    assert nb.graph_meta is None


def test_load_single_cell_without_id_then_ensure_ids():
    raw = notebook_dict([{"cell_type": "code", "metadata": {}, "source": ["x = 1"], "outputs": [], "execution_count": None}])
    nb = load_notebook(json.dumps(raw))
    assert len(nb.cells) == 1
    assert nb.cells[0].id is None
    assert nb.cells[0].source == "x = 1"
    fixed = ensure_cell_ids(nb)
    cid = fixed.cells[0].id
    assert cid and len(cid) == 32 and cid == cid.lower()


def test_load_errors():
    with pytest.raises(ParseError):
        load_notebook(b"{not json")
    with pytest.raises(SchemaError):
        load_notebook(json.dumps({"nbformat": 4}))
    with pytest.raises(SchemaError):
        load_notebook(json.dumps({"cells": "nope", "nbformat": 4}))
    with pytest.raises(SchemaError):
        load_notebook(json.dumps({"cells": [], "metadata": {}}))
    with pytest.raises(VersionError):
        load_notebook(json.dumps({"cells": [], "metadata": {}, "nbformat": 3, "nbformat_minor": 0}))
    with pytest.raises(SchemaError):
        load_notebook(json.dumps(notebook_dict([{"cell_type": "mystery", "source": []}])))


def test_save_empty_notebook_emits_empty_cells_array():
    nb = load_notebook(json.dumps(notebook_dict([])))
    data = json.loads(save_notebook(nb))
    assert data["cells"] == []


def test_round_trip_is_json_equal_with_foreign_keys():
    raw = notebook_dict(
        [
            cell_dict("code", "x = 1\ny = 2\n", "aa11", metadata={"tags": ["keep"], "custom": {"deep": [1, 2]}}),
            cell_dict("markdown", "# Title\n", "bb22"),
            cell_dict("raw", "raw text", "cc33"),
        ],
        metadata={"kernelspec": {"name": "python3"}, "vendor_tool": {"opaque": True}},
    )
    raw["extra_top_level"] = {"unknown": "survives"}
    blob = json.dumps(raw)
    nb = load_notebook(blob)
    assert json.loads(save_notebook(nb)) == json.loads(blob)
    # and a second pass is byte-stable
    assert save_notebook(load_notebook(save_notebook(nb))) == save_notebook(nb)


def test_round_trip_preserves_rich_outputs():
    outputs = [
        {"output_type": "stream", "name": "stdout", "text": ["hello\n", "world\n"]},
        {
            "output_type": "execute_result",
            "data": {"text/plain": ["  a  b\n", "0 1 2"]},
            "metadata": {},
            "execution_count": 3,
        },
        {
            "output_type": "display_data",
            "data": {"image/png": "aGVsbG8="},
            "metadata": {"needs_background": "light"},
        },
        {"output_type": "error", "ename": "ValueError", "evalue": "bad", "traceback": ["tb1", "tb2"]},
    ]
    raw = notebook_dict([cell_dict("code", "plot()", "c1", outputs=outputs, exec_count=3)])
    blob = json.dumps(raw)
    nb = load_notebook(blob)
    assert json.loads(save_notebook(nb)) == json.loads(blob)
    parsed = nb.cells[0].outputs
    assert [o.kind for o in parsed] == ["stream_text", "display_table_text", "display_image", "error"]
    assert parsed[0].text == "hello\nworld\n"
    assert parsed[2].image_mime == "image/png"
    assert parsed[3].traceback == ["tb1", "tb2"]


def test_output_model_round_trip_through_ipynb_form():
    outs = [
        Output(kind="stream_text", text="line1\nline2\n"),
        Output(kind="display_image", image_data="Zm9v", image_mime="image/png"),
        Output(kind="display_table_text", text="a b c"),
        Output(kind="error", error_name="E", error_message="m", traceback=["t"]),
    ]
    for out in outs:
        back = parse_ipynb_output(output_to_ipynb(out))
        assert back == out


def test_ensure_cell_ids_idempotent_and_unique():
    nb = make_notebook([("code", "a = 1"), ("code", "b = 2"), ("markdown", "# hi")])
    again = ensure_cell_ids(nb)
    assert again == nb  # all ids already present -> unchanged

    raw = notebook_dict(
        [
            {"cell_type": "code", "metadata": {}, "source": [], "outputs": [], "execution_count": None}
            for _ in range(3)
        ]
    )
    fixed = ensure_cell_ids(load_notebook(json.dumps(raw)))
    ids = [c.id for c in fixed.cells]
    assert len(set(ids)) == 3 and all(ids)


def test_duplicate_declared_ids_rejected():
    nb = make_notebook([("code", "a = 1", "dup"), ("code", "b = 2", "dup")])
    with pytest.raises(DuplicateIdError):
        ensure_cell_ids(nb)


def test_graph_metadata_write_then_read_round_trip():
    nb = make_notebook([("code", "a = 1", "c1"), ("code", "b = 2", "c2"), ("code", "c = 3", "c3")])
    gm = GraphMetadata(
        nodes=[
            NodeMeta("c1", 10.0, 20.0, False),
            NodeMeta("c2", 30.0, 40.0, True),
            NodeMeta("c3", 0.0, 0.0, False),
        ],
        links=[LinkMeta("l1", "c1", "c3"), LinkMeta("l2", "c2", "c3")],
        active_cell="c3",
        last_exec={"c1": ExecMeta(source_hash("a = 1"), "ok")},
    )
    written = write_graph_metadata(nb, gm)
    reloaded = load_notebook(save_notebook(written))
    back = read_graph_metadata(reloaded)
    assert back == gm
    assert len(back.nodes) == 3 and len(back.links) == 2


def test_graph_metadata_schema_shape_on_disk():
    nb = make_notebook([("code", "a = 1", "c1")])
    written = write_graph_metadata(
        nb,
        GraphMetadata(nodes=[NodeMeta("c1", 1.5, 2.5, False)], links=[], active_cell=None),
    )
    data = json.loads(save_notebook(written))
    block = data["metadata"][METADATA_KEY]
    assert block["version"] == 1
    assert block["nodes"] == [{"cell_id": "c1", "x": 1.5, "y": 2.5, "collapsed": False}]
    assert block["links"] == []
    assert block["active_cell"] is None
    assert block["last_exec"] == {}


def test_empty_graph_metadata_writes_empty_arrays():
    nb = make_notebook([("code", "a = 1", "c1")])
    data = json.loads(save_notebook(write_graph_metadata(nb, GraphMetadata())))
    assert data["metadata"][METADATA_KEY]["nodes"] == []
    assert data["metadata"][METADATA_KEY]["links"] == []


def test_missing_reserved_key_reads_absent():
    nb = make_notebook([("code", "a = 1", "c1")])
    assert read_graph_metadata(nb) is None


def test_dangling_reference_reported_with_ids():
    nb = make_notebook([("code", "a = 1", "c1")])
    gm = GraphMetadata(nodes=[NodeMeta("c1"), NodeMeta("ghost")], links=[LinkMeta("l1", "c1", "ghost")])
    with pytest.raises(DanglingRefError) as err:
        write_graph_metadata(nb, gm)
    assert "ghost" in str(err.value)
    assert err.value.details["cell_ids"] == ["ghost"]

    nb2 = write_graph_metadata(nb, GraphMetadata(nodes=[NodeMeta("c1")]))
    nb2.data["metadata"][METADATA_KEY]["links"].append({"id": "lx", "src": "c1", "dst": "gone"})
    with pytest.raises(DanglingRefError):
        read_graph_metadata(nb2)
    lenient = read_graph_metadata(nb2, strict=False)
    assert lenient is not None and len(lenient.links) == 1


def test_unsupported_metadata_version():
    nb = make_notebook([("code", "a = 1", "c1")])
    nb.data["metadata"][METADATA_KEY] = {"version": 99, "nodes": [], "links": []}
    with pytest.raises(MetadataVersionError):
        read_graph_metadata(nb)


def test_source_hash_deterministic_and_sensitive():
    assert source_hash("x = 1") == source_hash("x = 1")
    assert source_hash("x = 1") != source_hash("x = 2")
    assert len(source_hash("")) == 64


def test_set_source_round_trips_as_line_list():
    nb = make_notebook([("code", "", "c1")])
    nb.cells[0].set_source("a = 1\nb = 2")
    data = json.loads(save_notebook(nb))
    assert data["cells"][0]["source"] == ["a = 1\n", "b = 2"]
    assert load_notebook(save_notebook(nb)).cells[0].source == "a = 1\nb = 2"
