import json

import pytest

from canbone import fixtures
from canbone.errors import (
    DisconnectedGraph,
    DuplicateAddress,
    DuplicatePort,
    UnattachedEcu,
    UnknownEcu,
    UnreachableNode,
)
from canbone.matrix import parse_matrix
from canbone.topology import (
    Link,
    Topology,
    forwarding_path,
    parse_topology,
    place,
    serialize_topology,
    source_edges,
)

C1, C2, C3, C4, C5, C6 = 0x100, 0x101, 0x200, 0x201, 0x202, 0x102


def test_df1_topology_counts(df1_topo):
    assert set(df1_topo.zones) == {"FL", "FR", "RL"}
    assert len(df1_topo.gateways) == 3
    assert df1_topo.switches == ("SW",)
    assert len(df1_topo.links) == 3  # one uplink per gateway, no hosts
    assert df1_topo.endpoints() == ("ZCFL", "ZCFR", "ZCRL")


def test_degenerate_single_zone():
    topo = parse_topology(json.dumps({
        "zones": ["Z"],
        "gateways": [{"name": "ZC", "zone": "Z"}],
        "buses": [{"zone": "Z", "bus": "Z.1", "ecus": ["X", "Y"]}],
    }))
    assert topo.switches == ()
    assert topo.links == ()
    assert topo.node_for_ecu("X") == "ZC"


def test_unknown_zone_rejected():
    with pytest.raises(UnattachedEcu):
        parse_topology(json.dumps({
            "zones": ["Z"],
            "gateways": [{"name": "ZC", "zone": "Z"}],
            "buses": [{"zone": "NOPE", "bus": "b", "ecus": ["X"]}],
        }))


def test_double_attachment_rejected():
    with pytest.raises(UnattachedEcu):
        parse_topology(json.dumps({
            "zones": ["Z"],
            "gateways": [{"name": "ZC", "zone": "Z"}],
            "buses": [
                {"zone": "Z", "bus": "b1", "ecus": ["X"]},
                {"zone": "Z", "bus": "b2", "ecus": ["X"]},
            ],
        }))


def test_disconnected_graph_rejected():
    with pytest.raises(DisconnectedGraph):
        parse_topology(json.dumps({
            "zones": ["Z1", "Z2"],
            "gateways": [{"name": "ZC1", "zone": "Z1"}, {"name": "ZC2", "zone": "Z2"}],
            "switches": ["SW"],
            "links": [{"a": "ZC1", "b": "SW"}],
            "buses": [],
        }))


def test_duplicate_address_rejected():
    with pytest.raises(DuplicateAddress):
        parse_topology(json.dumps({
            "zones": ["Z1", "Z2"],
            "gateways": [
                {"name": "ZC1", "zone": "Z1", "mac": "02:00:00:00:00:01", "ip": "10.0.0.1"},
                {"name": "ZC2", "zone": "Z2", "mac": "02:00:00:00:00:01", "ip": "10.0.0.2"},
            ],
            "switches": ["SW"],
            "links": [{"a": "ZC1", "b": "SW"}, {"a": "ZC2", "b": "SW"}],
            "buses": [],
        }))


def test_duplicate_port_rejected():
    with pytest.raises(DuplicatePort):
        Topology(
            zones=("Z1", "Z2"),
            gateways={"Z1": "ZC1", "Z2": "ZC2"},
            buses={},
            switches=("SW",),
            links=(Link("ZC1", 1, "SW", 1), Link("ZC2", 1, "SW", 1)),
        )


def test_auto_assignment_deterministic():
    doc = json.dumps({
        "zones": ["Z1", "Z2"],
        "gateways": [{"name": "ZC1", "zone": "Z1"}, {"name": "ZC2", "zone": "Z2"}],
        "switches": ["SW"],
        "links": [{"a": "ZC1", "b": "SW"}, {"a": "ZC2", "b": "SW"}],
        "buses": [{"zone": "Z1", "bus": "b", "ecus": ["X"]}],
    })
    first, second = parse_topology(doc), parse_topology(doc)
    assert first == second
    assert first.addressing["ZC1"].mac == "02:00:00:00:00:01"
    assert first.addressing["ZC2"].ip == "10.0.0.2"
    # ports assigned in file order, one per link end
    assert first.port_map["SW"][1] == ("ZC1", 1)
    assert first.port_map["SW"][2] == ("ZC2", 1)


def test_topology_round_trip(df1_topo):
    assert parse_topology(serialize_topology(df1_topo)) == df1_topo
    df2_topo = fixtures.df2_topology()
    assert parse_topology(serialize_topology(df2_topo)) == df2_topo


# --- placement ---------------------------------------------------------------

def test_df1_placement(df1_matrix, df1_topo, df1_placement):
    assert set(df1_placement.backbone) == {C1, C2, C5, C6}
    assert df1_placement.local[C3] and df1_placement.local[C4]
    # receiver C lives in the sender's own zone and is served bus-side
    assert df1_placement.source_gateway[C2] == "ZCFR"
    assert df1_placement.dest_gateways[C2] == {"ZCFL"}


def test_placement_invariants(df1_placement):
    for can_id in df1_placement.backbone:
        dests = df1_placement.dest_gateways[can_id]
        assert dests
        assert df1_placement.source_gateway[can_id] not in dests


def test_flow_zones_cover_matrix_zones(df1_matrix, df1_topo):
    touched = set()
    for flow in df1_matrix.flows:
        touched.add(df1_topo.ecu_location[flow.sender][0])
        touched.update(df1_topo.ecu_location[r][0] for r in flow.receivers)
    assert touched == {"FL", "FR", "RL"}


def test_all_local_matrix(df1_topo):
    matrix = parse_matrix(json.dumps({
        "flows": [
            {"can_id": "0x1", "sender": "A", "receivers": ["E"],
             "domain": 1, "topic": 1, "priority": 0},
        ],
    }), "json")
    placement = place(matrix, df1_topo)
    assert placement.backbone == ()


def test_place_unknown_ecu(df1_topo):
    matrix = parse_matrix(json.dumps({
        "flows": [
            {"can_id": "0x1", "sender": "GHOST", "receivers": ["A"],
             "domain": 1, "topic": 1, "priority": 0},
        ],
    }), "json")
    with pytest.raises(UnknownEcu):
        place(matrix, df1_topo)


# --- forwarding trees -----------------------------------------------------------

def test_single_switch_star(df1_topo):
    tree = forwarding_path(df1_topo, "ZCFR", ["ZCFL", "ZCRL"])
    assert len(tree) == 1
    hop = tree[0]
    assert (hop.switch, hop.in_port, hop.out_ports) == ("SW", 2, frozenset({1, 3}))


def test_point_to_point(df1_topo):
    tree = forwarding_path(df1_topo, "ZCFL", ["ZCFR"])
    assert len(tree) == 1
    assert tree[0].out_ports == frozenset({2})


def test_two_switch_chain():
    topo = fixtures.df2_topology()
    tree = forwarding_path(topo, "ZCFL", ["ZCRR"])
    assert [hop.switch for hop in tree] == ["SWF", "SWR"]


def test_forwarding_deterministic_and_acyclic():
    topo = fixtures.df2_topology()
    dests = ["ZCRR", "ZCRL", "HPC", "ZCFR"]
    first = forwarding_path(topo, "ZCFL", dests)
    second = forwarding_path(topo, "ZCFL", list(reversed(dests)))
    assert first == second
    assert len({hop.switch for hop in first}) == len(first)


def test_unreachable_node(df1_topo):
    with pytest.raises(UnreachableNode):
        forwarding_path(df1_topo, "ZCFL", ["ZCFL-missing"])


def test_source_edges(df1_topo):
    assert source_edges(df1_topo, "ZCFR", ["ZCFL"]) == ((1, "SW", 2),)
