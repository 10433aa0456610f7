"""Network-flow derivation and default-drop rule synthesis.

A network flow (NF) is the point-to-multipoint Ethernet flow that carries
one or more control flows, identified by the header fields of its
embedding:

* by message: one NF per backbone control flow, matched on (multicast
  destination MAC, VLAN id),
* by domain: one NF per (source gateway, domain), matched on (source IP,
  multicast destination IP, UDP destination port),
* by topic: one NF per (source gateway, topic), same match fields.

Rule synthesis walks each NF's multicast tree and emits one match-and-
forward entry per on-tree switch, with the ingress port folded into the
match (source binding).  Anything matching no rule is dropped.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

from .codec import (
    SOMEIP_UDP_PORT,
    Strategy,
    cf_dst_mac,
    domain_group_ip,
    someip_src_port,
    topic_group_ip,
)
from .matrix import CommMatrix, ControlFlow
from .topology import Placement, Topology, forwarding_path

RULE_PRIORITY = 100


@dataclass(frozen=True, order=True)
class L2Key:
    """Match fields of an exposed layer-2 NF."""

    dst_mac: str
    vlan_id: int

    def match_tuple(self):
        return ("l2", self.dst_mac, self.vlan_id)

    def to_json(self) -> dict:
        return {"type": "l2", "dst_mac": self.dst_mac, "vlan_id": self.vlan_id}


@dataclass(frozen=True, order=True)
class L3Key:
    """Match fields of a SOME/IP tunnel NF.

    The source port is recorded for inspection but not matched; the source
    IP already binds the sender.
    """

    src_ip: str
    dst_ip: str
    udp_src_port: int
    udp_dst_port: int

    def match_tuple(self):
        return ("l3", self.src_ip, self.dst_ip, self.udp_dst_port)

    def to_json(self) -> dict:
        return {
            "type": "l3",
            "src_ip": self.src_ip,
            "dst_ip": self.dst_ip,
            "udp_src_port": self.udp_src_port,
            "udp_dst_port": self.udp_dst_port,
        }


MatchKey = L2Key | L3Key


@dataclass(frozen=True)
class NetworkFlow:
    key: MatchKey
    source: str
    dests: frozenset[str]
    carried: frozenset[int]
    ingress_binding: frozenset[tuple[str, int]]

    def sort_key(self):
        return (self.source, self.key.match_tuple(), tuple(sorted(self.carried)))

    def to_json(self) -> dict:
        return {
            "key": self.key.to_json(),
            "source": self.source,
            "dests": sorted(self.dests),
            "carried": [f"0x{c:X}" for c in sorted(self.carried)],
            "ingress_binding": [
                {"switch": sw, "in_port": port} for sw, port in sorted(self.ingress_binding)
            ],
        }


@dataclass(frozen=True)
class FlowRule:
    """One match-and-forward entry of a switch table."""

    switch: str
    priority: int
    key: MatchKey
    in_port: int
    out_ports: frozenset[int]

    def matches(self, fields, in_port: int) -> bool:
        return in_port == self.in_port and fields == self.key.match_tuple()

    def sort_key(self):
        return (self.switch, self.key.match_tuple(), self.in_port)

    def to_json(self) -> dict:
        return {
            "switch": self.switch,
            "priority": self.priority,
            "match": {**self.key.to_json(), "in_port": self.in_port},
            "out_ports": sorted(self.out_ports),
        }


@dataclass(frozen=True)
class NfStats:
    """Shape of an NF set: how many flows, how widely they fan out."""

    n_nfs: int
    n_nfs_multi: int
    min_cfs: int
    avg_cfs: float
    max_cfs: int
    dest_histogram: Mapping[int, int]

    def to_json(self) -> dict:
        return {
            "n_nfs": self.n_nfs,
            "n_nfs_multi": self.n_nfs_multi,
            "min_cfs": self.min_cfs,
            "avg_cfs": self.avg_cfs,
            "max_cfs": self.max_cfs,
            "dest_histogram": {str(k): v for k, v in sorted(self.dest_histogram.items())},
        }


def emission_key(cf: ControlFlow, strategy: Strategy | str, src_node: str, topo: Topology) -> MatchKey:
    """Header key this flow would get when emitted by src_node.

    Pure in (flow metadata, strategy, sender), which makes 'permitted'
    computable without touching a wire.
    """
    strategy = Strategy(strategy)
    if strategy is Strategy.MESSAGE:
        return L2Key(dst_mac=cf_dst_mac(cf.can_id), vlan_id=cf.domain)
    src_ip = topo.addressing[src_node].ip
    if strategy is Strategy.DOMAIN:
        dst_ip = domain_group_ip(cf.domain)
    else:
        dst_ip = topic_group_ip(cf.topic)
    return L3Key(
        src_ip=src_ip,
        dst_ip=dst_ip,
        udp_src_port=someip_src_port(cf.domain),
        udp_dst_port=SOMEIP_UDP_PORT,
    )


def ingress_binding(topo: Topology, source: str) -> frozenset[tuple[str, int]]:
    """Switch-side (switch, in_port) pairs where this source attaches."""
    return frozenset(
        (peer, peer_port)
        for peer, _, peer_port in topo.adjacency.get(source, ())
        if peer in topo.switch_set
    )


def derive_nfs(
    matrix: CommMatrix,
    topo: Topology,
    placement: Placement,
    strategy: Strategy | str,
) -> tuple[NetworkFlow, ...]:
    """Derive the NF set carrying all backbone control flows."""
    strategy = Strategy(strategy)
    backbone = [matrix.by_can_id[c] for c in placement.backbone]
    groups: dict[tuple, list[ControlFlow]] = {}
    for cf in backbone:
        source = placement.source_gateway[cf.can_id]
        if strategy is Strategy.MESSAGE:
            group = (source, cf.can_id)
        elif strategy is Strategy.DOMAIN:
            group = (source, cf.domain)
        else:
            group = (source, cf.topic)
        groups.setdefault(group, []).append(cf)

    nfs = []
    for (source, _), cfs in groups.items():
        dests = frozenset().union(*(placement.dest_gateways[cf.can_id] for cf in cfs))
        key = emission_key(cfs[0], strategy, source, topo)
        if isinstance(key, L3Key) and strategy is Strategy.TOPIC:
            # a topic may span domains; record the lowest member's socket
            key = L3Key(
                src_ip=key.src_ip,
                dst_ip=key.dst_ip,
                udp_src_port=someip_src_port(min(cf.domain for cf in cfs)),
                udp_dst_port=SOMEIP_UDP_PORT,
            )
        nfs.append(NetworkFlow(
            key=key,
            source=source,
            dests=dests,
            carried=frozenset(cf.can_id for cf in cfs),
            ingress_binding=ingress_binding(topo, source),
        ))
    return tuple(sorted(nfs, key=NetworkFlow.sort_key))


def nf_stats(nfs: Iterable[NetworkFlow]) -> NfStats:
    """Counts and the destination fan-out histogram of an NF set."""
    sizes = [len(nf.carried) for nf in nfs]
    histogram: dict[int, int] = {}
    for nf in nfs:
        histogram[len(nf.dests)] = histogram.get(len(nf.dests), 0) + 1
    if not sizes:
        return NfStats(0, 0, 0, 0.0, 0, {})
    return NfStats(
        n_nfs=len(sizes),
        n_nfs_multi=sum(1 for s in sizes if s > 1),
        min_cfs=min(sizes),
        avg_cfs=sum(sizes) / len(sizes),
        max_cfs=max(sizes),
        dest_histogram=histogram,
    )


def synthesize_rules(
    nfs: Iterable[NetworkFlow], topo: Topology
) -> dict[str, tuple[FlowRule, ...]]:
    """Per-switch rule tables realizing every NF's multicast tree.

    The fabric is default-drop: a switch without a matching entry discards
    the packet, and every entry also pins the ingress port, so only the
    true source's attachment can feed an NF.
    """
    tables: dict[str, list[FlowRule]] = {}
    for nf in sorted(nfs, key=NetworkFlow.sort_key):
        for hop in forwarding_path(topo, nf.source, nf.dests):
            tables.setdefault(hop.switch, []).append(FlowRule(
                switch=hop.switch,
                priority=RULE_PRIORITY,
                key=nf.key,
                in_port=hop.in_port,
                out_ports=hop.out_ports,
            ))
    return {
        switch: tuple(sorted(rules, key=FlowRule.sort_key))
        for switch, rules in sorted(tables.items())
    }


def nfs_to_json(strategy: Strategy | str, nfs: Iterable[NetworkFlow]) -> dict:
    return {
        "strategy": Strategy(strategy).value,
        "nfs": [nf.to_json() for nf in sorted(nfs, key=NetworkFlow.sort_key)],
    }


def rules_to_json(strategy: Strategy | str, tables: Mapping[str, tuple[FlowRule, ...]]) -> dict:
    return {
        "strategy": Strategy(strategy).value,
        "tables": {
            switch: [rule.to_json() for rule in rules]
            for switch, rules in sorted(tables.items())
        },
    }
