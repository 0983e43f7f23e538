"""Dependency DAG: links, cycles, path execution, status colors."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellgraph.errors import (
    CycleError,
    DuplicateLinkError,
    NotCodeCellError,
    SelfLoopError,
    UnknownLinkError,
    UnknownNodeError,
)
from cellgraph.analysis import build_variable_index
from cellgraph.graph import (
    ExecStatus,
    GraphState,
    add_link,
    create_linked_node,
    delete_cell,
    execution_path,
    from_notebook,
    graph_view,
    hover_info,
    node_status,
    remove_link,
    to_dot,
    to_metadata,
)
from cellgraph.notebook import GraphMetadata, LinkMeta, NodeMeta, write_graph_metadata
from cellgraph.session import MockKernel, Session
from cellgraph.notebook import source_hash

from conftest import make_notebook
from oracles import brute_ancestors, random_dag


def build(n_cells: int, edges: list[tuple[int, int]]):
    """Notebook with cells c1..cN and a graph with 1-based index links."""
    nb = make_notebook([("code", f"v{i} = {i}", f"c{i}") for i in range(1, n_cells + 1)])
    g = from_notebook(nb)
    for src, dst in edges:
        g = add_link(g, f"c{src}", f"c{dst}")
    return nb, g


def test_add_first_link():
    nb, g = build(2, [])
    g = add_link(g, "c1", "c2")
    assert g.endpoint_pairs() == {("c1", "c2")}


def test_two_cycle_reports_path():
    nb, g = build(2, [(1, 2)])
    with pytest.raises(CycleError) as err:
        add_link(g, "c2", "c1")
    assert err.value.cycle == ["c1", "c2", "c1"]


def test_self_loop_rejected():
    nb, g = build(3, [])
    with pytest.raises(SelfLoopError):
        add_link(g, "c3", "c3")


def test_duplicate_link_rejected():
    nb, g = build(2, [(1, 2)])
    with pytest.raises(DuplicateLinkError):
        add_link(g, "c1", "c2")


def test_longer_cycle_detected():
    nb, g = build(4, [(1, 2), (2, 3), (3, 4)])
    with pytest.raises(CycleError) as err:
        add_link(g, "c4", "c1")
    assert err.value.cycle == ["c1", "c2", "c3", "c4", "c1"]


def test_unknown_endpoints():
    nb, g = build(2, [])
    with pytest.raises(UnknownNodeError):
        add_link(g, "c1", "ghost")


def test_remove_only_link():
    nb, g = build(2, [(1, 2)])
    g = remove_link(g, g.links[0].id)
    assert g.links == ()
    assert set(g.nodes) == {"c1", "c2"}


def test_remove_then_readd_isomorphic():
    nb, g = build(3, [(1, 2), (2, 3)])
    original_pairs = g.endpoint_pairs()
    target = next(l for l in g.links if (l.src, l.dst) == ("c1", "c2"))
    g2 = remove_link(g, target.id)
    g3 = add_link(g2, "c1", "c2")
    assert g3.endpoint_pairs() == original_pairs
    assert g3.nodes == g.nodes


def test_remove_unknown_link():
    nb, g = build(2, [(1, 2)])
    with pytest.raises(UnknownLinkError):
        remove_link(g, "nope")


# ---------------------------------------------------------------------------
# create_linked_node


def test_create_linked_node_inserts_after_source_and_activates():
    nb, g = build(2, [])
    g2, nb2, new_id = create_linked_node(g, nb, "c1", (250.0, 80.0))
    assert nb2.cell_ids() == ["c1", new_id, "c2"]
    assert g2.endpoint_pairs() == {("c1", new_id)}
    assert g2.active_cell == new_id
    created = nb2.cell_by_id(new_id)
    assert created.kind == "code" and created.source == ""
    assert g2.nodes[new_id].x == 250.0 and g2.nodes[new_id].y == 80.0
    # the original inputs are untouched values
    assert nb.cell_ids() == ["c1", "c2"] and g.links == ()


def test_create_from_node_with_existing_outgoing_links():
    nb, g = build(3, [(1, 2), (1, 3)])
    g2, nb2, new_id = create_linked_node(g, nb, "c1", (0.0, 0.0))
    assert ("c1", new_id) in g2.endpoint_pairs()
    assert len(g2.links) == 3


def test_create_raw_cell():
    nb, g = build(1, [])
    g2, nb2, new_id = create_linked_node(g, nb, "c1", (0.0, 0.0), kind="raw")
    assert nb2.cell_by_id(new_id).kind == "raw"


def test_create_from_unknown_node():
    nb, g = build(1, [])
    with pytest.raises(UnknownNodeError):
        create_linked_node(g, nb, "ghost", (0.0, 0.0))


# ---------------------------------------------------------------------------
# execution_path


def test_path_chain():
    nb, g = build(3, [(1, 2), (2, 3)])
    assert execution_path(g, nb, "c3") == ["c1", "c2", "c3"]


def test_path_diamond_tie_break_by_notebook_order():
    nb, g = build(4, [(1, 2), (1, 3), (2, 4), (3, 4)])
    assert execution_path(g, nb, "c4") == ["c1", "c2", "c3", "c4"]


def test_path_isolated_node():
    nb, g = build(3, [(1, 2)])
    assert execution_path(g, nb, "c3") == ["c3"]


def test_path_unknown_target():
    nb, g = build(2, [])
    with pytest.raises(UnknownNodeError):
        execution_path(g, nb, "ghost")


def test_path_downstream_direction():
    nb, g = build(4, [(1, 2), (2, 3), (2, 4)])
    assert execution_path(g, nb, "c2", direction="down") == ["c2", "c3", "c4"]


def test_path_properties_against_oracle():
    rng = random.Random(4242)
    for _ in range(40):
        n = rng.randint(1, 10)
        ids, edges = random_dag(rng, n)
        nb = make_notebook([("code", f"x{i} = {i}", cid) for i, cid in enumerate(ids)])
        g = from_notebook(nb)
        for src, dst in sorted(edges):
            g = add_link(g, src, dst)
        target = rng.choice(ids)
        path = execution_path(g, nb, target)
        expected_set = brute_ancestors(edges, target) | {target}
        assert set(path) == expected_set
        assert path[-1] == target
        position = {cid: i for i, cid in enumerate(path)}
        for src, dst in edges:
            if src in position and dst in position:
                assert position[src] < position[dst]


# ---------------------------------------------------------------------------
# node_status


def make_session_with_run(nb, cell_id, status="ok"):
    fixture = None
    if status == "error":
        fixture = {
            "cells": [
                {
                    "match": {"source_hash": nb.cell_by_id(cell_id).source_hash},
                    "status": "error",
                    "error": {"name": "Boom", "message": "bad", "traceback": ["tb"]},
                }
            ]
        }
    session = Session(MockKernel(fixture))
    session.run_cells(nb, [cell_id])
    return session


def test_status_never_run_is_stale():
    nb = make_notebook([("code", "x = 1", "c1")])
    assert node_status(nb.cells[0], Session(MockKernel())) is ExecStatus.STALE


def test_status_ok_then_edit_becomes_stale():
    nb = make_notebook([("code", "x = 1", "c1")])
    session = make_session_with_run(nb, "c1")
    assert node_status(nb.cells[0], session) is ExecStatus.OK
    nb.cells[0].set_source("x = 2")
    assert node_status(nb.cells[0], session) is ExecStatus.STALE


def test_status_error_run():
    nb = make_notebook([("code", "explode()", "c1")])
    session = make_session_with_run(nb, "c1", status="error")
    assert node_status(nb.cells[0], session) is ExecStatus.ERROR


def test_status_rejects_non_code():
    nb = make_notebook([("markdown", "# hello", "c1")])
    with pytest.raises(NotCodeCellError):
        node_status(nb.cells[0], Session(MockKernel()))


# ---------------------------------------------------------------------------
# hover_info


def test_hover_reports_error_status_and_used_variables():
    nb = make_notebook(
        [("code", "data1 = load()", "c1"), ("code", "validate(data1)", "c2")]
    )
    g = from_notebook(nb)
    index = build_variable_index(nb)
    fixture = {
        "cells": [
            {
                "match": {"source_hash": nb.cell_by_id("c2").source_hash},
                "status": "error",
                "error": {"name": "ValueError", "message": "ugh", "traceback": []},
            }
        ]
    }
    session = Session(MockKernel(fixture))
    session.run_cells(nb, ["c2"])
    info = hover_info(g, nb, index, "c2", session)
    assert info["status"] is ExecStatus.ERROR
    assert info["used_variables"] == {"data1"}


def test_hover_markdown_has_no_status():
    nb = make_notebook([("markdown", "# doc", "c1")])
    g = from_notebook(nb)
    index = build_variable_index(nb)
    info = hover_info(g, nb, index, "c1", Session(MockKernel()))
    assert info["status"] is None
    assert info["used_variables"] == set()


def test_hover_no_references():
    nb = make_notebook([("code", "pass", "c1")])
    g = from_notebook(nb)
    index = build_variable_index(nb)
    info = hover_info(g, nb, index, "c1", Session(MockKernel()))
    assert info["used_variables"] == set()


# ---------------------------------------------------------------------------
# invariants


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7)), max_size=25))
def test_acyclicity_maintained_under_random_operations(pairs):
    nb = make_notebook([("code", f"x{i} = 1", f"c{i}") for i in range(8)])
    g = from_notebook(nb)
    for a, b in pairs:
        try:
            g = add_link(g, f"c{a}", f"c{b}")
        except (SelfLoopError, CycleError, DuplicateLinkError):
            continue
        if g.links and len(g.links) % 3 == 0:  # interleave removals
            g = remove_link(g, g.links[0].id)
    # validating from scratch must find no cycle
    position = {}
    remaining = {cid: set() for cid in g.nodes}
    for link in g.links:
        remaining[link.dst].add(link.src)
    ordered = []
    while remaining:
        ready = [cid for cid, deps in remaining.items() if not deps]
        assert ready, f"cycle among {remaining}"
        for cid in ready:
            del remaining[cid]
            ordered.append(cid)
        for deps in remaining.values():
            deps.difference_update(ready)


def test_order_labels_track_insertion_and_deletion():
    nb, g = build(3, [(1, 3)])
    g2, nb2, new_id = create_linked_node(g, nb, "c1", (0, 0))
    view = graph_view(g2, nb2)
    orders = {n["cell_id"]: n["order"] for n in view["nodes"]}
    assert orders == {"c1": 1, new_id: 2, "c2": 3, "c3": 4}
    g3, nb3 = delete_cell(g2, nb2, new_id)
    orders = {n["cell_id"]: n["order"] for n in graph_view(g3, nb3)["nodes"]}
    assert orders == {"c1": 1, "c2": 2, "c3": 3}


def test_delete_cell_prunes_incident_links():
    nb, g = build(3, [(1, 2), (2, 3)])
    g2, nb2 = delete_cell(g, nb, "c2")
    assert g2.endpoint_pairs() == set()
    assert set(g2.nodes) == {"c1", "c3"}
    assert nb2.cell_ids() == ["c1", "c3"]


# ---------------------------------------------------------------------------
# persistence integration


def test_from_notebook_uses_and_prunes_metadata():
    nb = make_notebook([("code", "a = 1", "c1"), ("code", "b = 2", "c2")])
    gm = GraphMetadata(
        nodes=[NodeMeta("c1", 5.0, 6.0, True)],
        links=[LinkMeta("l1", "c1", "c2")],
        active_cell="c2",
    )
    nb = write_graph_metadata(nb, gm)
    g = from_notebook(nb)
    assert g.nodes["c1"].x == 5.0 and g.nodes["c1"].collapsed
    assert "c2" in g.nodes  # node created for the cell missing from metadata
    assert g.endpoint_pairs() == {("c1", "c2")}
    assert g.active_cell == "c2"

    # dangling refs are pruned in lenient mode
    nb.data["metadata"]["cellgraph"]["links"].append({"id": "lx", "src": "c1", "dst": "ghost"})
    pruned = from_notebook(nb, prune=True)
    assert pruned.endpoint_pairs() == {("c1", "c2")}


def test_from_notebook_rejects_cyclic_metadata():
    nb = make_notebook([("code", "a = 1", "c1"), ("code", "b = 2", "c2")])
    gm = GraphMetadata(
        nodes=[NodeMeta("c1"), NodeMeta("c2")],
        links=[LinkMeta("l1", "c1", "c2"), LinkMeta("l2", "c2", "c1")],
    )
    nb.data["metadata"]["cellgraph"] = gm.to_dict()
    with pytest.raises(CycleError):
        from_notebook(nb)


def test_to_metadata_round_trip_through_graph():
    nb, g = build(3, [(1, 2), (1, 3)])
    meta = to_metadata(g, {})
    nb2 = write_graph_metadata(nb, meta)
    g2 = from_notebook(nb2)
    assert g2.endpoint_pairs() == g.endpoint_pairs()
    assert g2.nodes == g.nodes


def test_dot_export_counts():
    nb, g = build(4, [(1, 2), (1, 3), (2, 4), (3, 4)])
    dot = to_dot(g, nb, Session(MockKernel()))
    assert dot.count(" -> ") == 4
    assert dot.count("[label=") == 4
    assert dot.startswith("digraph")


def test_graph_view_shape():
    nb, g = build(2, [(1, 2)])
    session = Session(MockKernel())
    index = build_variable_index(nb)
    view = graph_view(g, nb, session, index)
    node = view["nodes"][0]
    assert {"cell_id", "x", "y", "collapsed", "order", "kind", "status", "snippet", "output_preview", "active"} <= set(node)
    assert node["status"] == "stale"
    assert view["links"][0]["src"] == "c1"
