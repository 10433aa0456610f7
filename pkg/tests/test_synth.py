import pytest

from canbone.errors import InfeasibleParams
from canbone.matrix import parse_matrix, serialize_matrix
from canbone.synth import SynthParams, synth_matrix
from canbone.topology import parse_topology, place, serialize_topology

FULL_SCALE = SynthParams(n_zones=4, n_ecus=40, n_flows=242, n_domains=5,
                          n_topics=60, max_receivers=4, local_fraction=0.2)


def test_deterministic_for_fixed_seed():
    first = synth_matrix(FULL_SCALE, 7)
    second = synth_matrix(FULL_SCALE, 7)
    assert first[0] == second[0]
    assert first[1] == second[1]
    assert len(first[0].flows) == 242


def test_different_seeds_differ():
    a, _ = synth_matrix(FULL_SCALE, 1)
    b, _ = synth_matrix(FULL_SCALE, 2)
    assert a != b


def test_minimal_case():
    params = SynthParams(1, 2, 1, 1, 1, 1, 0.0)
    matrix, topo = synth_matrix(params, 1)
    flow = matrix.flows[0]
    assert {flow.sender} | flow.receivers == {"E001", "E002"}
    assert topo.switches == ("SW1",)


@pytest.mark.parametrize("params", [
    SynthParams(2, 1, 1, 1, 1, 1, 0.0),     # fewer ECUs than zones
    SynthParams(1, 2, 1, 1, 1, 2, 0.0),     # max_receivers >= n_ecus
    SynthParams(1, 2, 0, 1, 1, 1, 0.0),     # no flows
    SynthParams(1, 2, 1, 2, 1, 1, 0.0),     # fewer topics than domains
    SynthParams(1, 2, 1, 300, 300, 1, 0.0),  # domain exceeds group range
])
def test_infeasible_params(params):
    with pytest.raises(InfeasibleParams):
        synth_matrix(params, 1)


def test_validates_under_parse_rules_for_1000_seeds():
    params = SynthParams(n_zones=3, n_ecus=9, n_flows=12, n_domains=3,
                         n_topics=6, max_receivers=3, local_fraction=0.3)
    for seed in range(1000):
        matrix, topo = synth_matrix(params, seed)
        assert parse_matrix(serialize_matrix(matrix, "json"), "json") == matrix
    # spot-check the topology side of the pair round-trips too
    matrix, topo = synth_matrix(params, 999)
    assert parse_topology(serialize_topology(topo)) == topo


def test_local_fraction_is_approximate():
    matrix, topo = synth_matrix(FULL_SCALE, 3)
    placement = place(matrix, topo)
    local = sum(1 for c in placement.local.values() if c)
    assert 0.05 * 242 <= local <= 0.4 * 242


def test_zero_local_fraction_multi_zone():
    params = SynthParams(3, 9, 30, 2, 4, 2, 0.0)
    matrix, topo = synth_matrix(params, 11)
    placement = place(matrix, topo)
    assert len(placement.backbone) == 30


def test_topics_never_span_domains():
    matrix, _ = synth_matrix(FULL_SCALE, 5)
    domains_by_topic = {}
    for flow in matrix.flows:
        domains_by_topic.setdefault(flow.topic, set()).add(flow.domain)
    assert all(len(domains) == 1 for domains in domains_by_topic.values())


def test_provided_topology_defines_population(df2_pair):
    matrix, topo = df2_pair
    assert topo.eth_hosts == ("HPC",)
    names = {ecu.name for ecu in matrix.ecus}
    assert "HPC" in names
    assert len(names) == 41  # 40 CAN ECUs + the host
    host_record = matrix.ecu_by_name["HPC"]
    assert host_record.zone == "HPC" and host_record.bus is None
