"""Zone topology: gateways, CAN buses, switches, Ethernet hosts, links.

Zone controllers bridge the CAN buses of one physical vehicle zone onto the
switched Ethernet backbone.  Ethernet-native hosts (e.g. an HPC) are treated
as gateways with zero CAN buses: a control flow may name a host directly,
and the host's "zone" is the host itself.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING, Iterable, Mapping

from .errors import (
    DisconnectedGraph,
    DuplicateAddress,
    DuplicatePort,
    MalformedRecord,
    UnattachedEcu,
    UnknownEcu,
    UnknownNode,
    UnreachableNode,
)

if TYPE_CHECKING:  # pragma: no cover
    from .matrix import CommMatrix


@dataclass(frozen=True, order=True)
class Link:
    """Undirected edge between two backbone nodes, with a port at each end."""

    a: str
    a_port: int
    b: str
    b_port: int


@dataclass(frozen=True, order=True)
class NodeAddr:
    mac: str
    ip: str


def auto_addr(index: int) -> NodeAddr:
    """Deterministic locally-administered address for the index-th node."""
    if not 1 <= index <= 254:
        raise MalformedRecord(f"cannot auto-address node index {index}")
    return NodeAddr(mac=f"02:00:00:00:00:{index:02x}", ip=f"10.0.0.{index}")


@dataclass(frozen=True)
class Topology:
    zones: tuple[str, ...]
    gateways: Mapping[str, str]                    # zone -> gateway node
    buses: Mapping[tuple[str, str], frozenset[str]]  # (zone, bus) -> ECUs
    eth_hosts: tuple[str, ...] = ()
    switches: tuple[str, ...] = ()
    links: tuple[Link, ...] = ()
    addressing: Mapping[str, NodeAddr] = None  # filled in __post_init__ if None

    def __post_init__(self):
        object.__setattr__(self, "zones", tuple(self.zones))
        object.__setattr__(self, "eth_hosts", tuple(self.eth_hosts))
        object.__setattr__(self, "switches", tuple(self.switches))
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "gateways", dict(self.gateways))
        object.__setattr__(
            self, "buses", {key: frozenset(ecus) for key, ecus in dict(self.buses).items()}
        )
        if self.addressing is None:
            object.__setattr__(self, "addressing", {})
        else:
            object.__setattr__(self, "addressing", dict(self.addressing))
        self._fill_addressing()
        self._validate()

    def _fill_addressing(self):
        addressing = dict(self.addressing)
        used_macs = {a.mac for a in addressing.values()}
        used_ips = {a.ip for a in addressing.values()}
        index = 1
        for node in self.endpoints():
            if node in addressing:
                continue
            addr = auto_addr(index)
            while addr.mac in used_macs or addr.ip in used_ips:
                index += 1
                addr = auto_addr(index)
            addressing[node] = addr
            used_macs.add(addr.mac)
            used_ips.add(addr.ip)
            index += 1
        object.__setattr__(self, "addressing", addressing)

    def _validate(self):
        if len(set(self.zones)) != len(self.zones):
            raise MalformedRecord("duplicate zone label")
        for zone in self.zones:
            if zone not in self.gateways:
                raise MalformedRecord(f"zone {zone} has no gateway")
        for zone in self.gateways:
            if zone not in self.zones:
                raise MalformedRecord(f"gateway declared for unknown zone {zone}")
        names = list(self.gateways.values()) + list(self.eth_hosts) + list(self.switches)
        if len(set(names)) != len(names):
            raise MalformedRecord("gateway/host/switch names must be disjoint")
        node_set = set(names)

        seen_ecus: dict[str, tuple[str, str]] = {}
        for (zone, bus), ecus in self.buses.items():
            if zone not in self.zones:
                raise UnattachedEcu(next(iter(ecus), "?"), f"bus {bus} references unknown zone {zone}")
            for ecu in ecus:
                if ecu in seen_ecus:
                    raise UnattachedEcu(ecu, f"attached to both {seen_ecus[ecu]} and {(zone, bus)}")
                seen_ecus[ecu] = (zone, bus)

        ports: dict[str, set[int]] = {}
        for link in self.links:
            for node, port in ((link.a, link.a_port), (link.b, link.b_port)):
                if node not in node_set:
                    raise UnknownNode(node)
                if port in ports.setdefault(node, set()):
                    raise DuplicatePort(f"{node} port {port} used by two links")
                ports[node].add(port)

        macs: set[str] = set()
        ips: set[str] = set()
        for node, addr in self.addressing.items():
            if addr.mac in macs or addr.ip in ips:
                raise DuplicateAddress(f"address of {node} already in use")
            macs.add(addr.mac)
            ips.add(addr.ip)

        if len(node_set) > 1:
            start = min(node_set)
            seen = {start}
            queue = deque([start])
            while queue:
                node = queue.popleft()
                for peer, _, _ in self.adjacency.get(node, ()):
                    if peer not in seen:
                        seen.add(peer)
                        queue.append(peer)
            if seen != node_set:
                missing = sorted(node_set - seen)
                raise DisconnectedGraph(f"nodes unreachable from {start}: {', '.join(missing)}")

    # --- lookups ----------------------------------------------------------

    @cached_property
    def adjacency(self) -> Mapping[str, tuple[tuple[str, int, int], ...]]:
        """node -> sorted (peer, own_port, peer_port) triples."""
        table: dict[str, list[tuple[str, int, int]]] = {}
        for link in self.links:
            table.setdefault(link.a, []).append((link.b, link.a_port, link.b_port))
            table.setdefault(link.b, []).append((link.a, link.b_port, link.a_port))
        return {node: tuple(sorted(peers)) for node, peers in table.items()}

    @cached_property
    def port_map(self) -> Mapping[str, Mapping[int, tuple[str, int]]]:
        """node -> port -> (peer, peer_port)."""
        table: dict[str, dict[int, tuple[str, int]]] = {}
        for node, peers in self.adjacency.items():
            table[node] = {own: (peer, theirs) for peer, own, theirs in peers}
        return table

    @cached_property
    def ecu_location(self) -> Mapping[str, tuple[str, str]]:
        table: dict[str, tuple[str, str]] = {}
        for (zone, bus), ecus in self.buses.items():
            for ecu in ecus:
                table[ecu] = (zone, bus)
        return table

    @cached_property
    def zone_of_gateway(self) -> Mapping[str, str]:
        return {gw: zone for zone, gw in self.gateways.items()}

    @cached_property
    def switch_set(self) -> frozenset[str]:
        return frozenset(self.switches)

    def endpoints(self) -> tuple[str, ...]:
        """All gateway and host nodes, sorted."""
        return tuple(sorted(list(self.gateways.values()) + list(self.eth_hosts)))

    def node_for_ecu(self, ecu: str) -> str:
        """Backbone node owning this ECU: its zone gateway, or the host itself."""
        loc = self.ecu_location.get(ecu)
        if loc is not None:
            return self.gateways[loc[0]]
        if ecu in self.eth_hosts:
            return ecu
        raise UnknownEcu(ecu)

    def zone_buses(self, gateway: str) -> tuple[tuple[str, str], ...]:
        zone = self.zone_of_gateway.get(gateway)
        if zone is None:
            return ()
        return tuple(sorted(key for key in self.buses if key[0] == zone))


# --- parsing / serialization ----------------------------------------------

def parse_topology(text: str) -> Topology:
    """Parse the JSON topology schema; ports and addresses are assigned
    deterministically when omitted."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    if not isinstance(doc, dict):
        raise MalformedRecord("top-level object expected")

    zones = tuple(str(z) for z in doc.get("zones", []))
    gateways: dict[str, str] = {}
    addressing: dict[str, NodeAddr] = {}
    for entry in doc.get("gateways", []):
        if not isinstance(entry, dict) or "name" not in entry or "zone" not in entry:
            raise MalformedRecord("gateway entries need name and zone")
        gateways[str(entry["zone"])] = str(entry["name"])
        if "mac" in entry and "ip" in entry:
            addressing[str(entry["name"])] = NodeAddr(mac=str(entry["mac"]), ip=str(entry["ip"]))

    hosts: list[str] = []
    for entry in doc.get("eth_hosts", []):
        if isinstance(entry, str):
            hosts.append(entry)
            continue
        if not isinstance(entry, dict) or "name" not in entry:
            raise MalformedRecord("eth_host entries need a name")
        hosts.append(str(entry["name"]))
        if "mac" in entry and "ip" in entry:
            addressing[str(entry["name"])] = NodeAddr(mac=str(entry["mac"]), ip=str(entry["ip"]))

    switches = tuple(str(s) for s in doc.get("switches", []))

    next_port: dict[str, int] = {}
    links: list[Link] = []
    for entry in doc.get("links", []):
        if not isinstance(entry, dict) or "a" not in entry or "b" not in entry:
            raise MalformedRecord("link entries need endpoints a and b")
        a, b = str(entry["a"]), str(entry["b"])
        a_port = entry.get("a_port")
        b_port = entry.get("b_port")
        if a_port is None:
            a_port = next_port.get(a, 1)
        if b_port is None:
            b_port = next_port.get(b, 1)
        next_port[a] = max(next_port.get(a, 1), int(a_port) + 1)
        next_port[b] = max(next_port.get(b, 1), int(b_port) + 1)
        links.append(Link(a=a, a_port=int(a_port), b=b, b_port=int(b_port)))

    buses: dict[tuple[str, str], frozenset[str]] = {}
    for entry in doc.get("buses", []):
        if not isinstance(entry, dict) or "zone" not in entry or "bus" not in entry:
            raise MalformedRecord("bus entries need zone and bus")
        key = (str(entry["zone"]), str(entry["bus"]))
        buses[key] = frozenset(str(e) for e in entry.get("ecus", []))

    return Topology(
        zones=zones,
        gateways=gateways,
        buses=buses,
        eth_hosts=tuple(hosts),
        switches=switches,
        links=tuple(links),
        addressing=addressing,
    )


def serialize_topology(topo: Topology) -> str:
    doc = {
        "zones": list(topo.zones),
        "gateways": [
            {
                "name": topo.gateways[zone],
                "zone": zone,
                "mac": topo.addressing[topo.gateways[zone]].mac,
                "ip": topo.addressing[topo.gateways[zone]].ip,
            }
            for zone in topo.zones
        ],
        "eth_hosts": [
            {"name": host, "mac": topo.addressing[host].mac, "ip": topo.addressing[host].ip}
            for host in topo.eth_hosts
        ],
        "switches": list(topo.switches),
        "links": [
            {"a": l.a, "a_port": l.a_port, "b": l.b, "b_port": l.b_port} for l in topo.links
        ],
        "buses": [
            {"zone": zone, "bus": bus, "ecus": sorted(ecus)}
            for (zone, bus), ecus in sorted(topo.buses.items())
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# --- placement --------------------------------------------------------------

@dataclass(frozen=True)
class Placement:
    """Where each control flow enters and leaves the Ethernet backbone.

    Local flows (sender and all receivers in one zone) never touch the
    backbone and have an empty destination set.
    """

    source_gateway: Mapping[int, str]
    dest_gateways: Mapping[int, frozenset[str]]
    local: Mapping[int, bool]

    @cached_property
    def backbone(self) -> tuple[int, ...]:
        return tuple(sorted(can_id for can_id, loc in self.local.items() if not loc))


def place(matrix: "CommMatrix", topo: Topology) -> Placement:
    """Place every flow of the matrix onto the topology."""
    source: dict[int, str] = {}
    dests: dict[int, frozenset[str]] = {}
    local: dict[int, bool] = {}
    for flow in matrix.flows:
        src_node = topo.node_for_ecu(flow.sender)
        dest_nodes = frozenset(topo.node_for_ecu(r) for r in flow.receivers) - {src_node}
        source[flow.can_id] = src_node
        dests[flow.can_id] = dest_nodes
        local[flow.can_id] = not dest_nodes
    return Placement(source_gateway=source, dest_gateways=dests, local=local)


# --- multicast forwarding trees ---------------------------------------------

@dataclass(frozen=True)
class TreeHop:
    """Per-switch segment of a multicast tree."""

    switch: str
    in_port: int
    out_ports: frozenset[int]

    def sort_key(self):
        return (self.switch, self.in_port, tuple(sorted(self.out_ports)))


def _shortest_path_parents(topo: Topology, source: str) -> dict[str, tuple[str, int, int]]:
    """BFS parents from source; packets transit only switch nodes.

    Returns node -> (parent, parent_port, own_port); ties broken by the
    lexicographically smallest (parent, ports) so trees are reproducible.
    """
    if source not in topo.adjacency and source not in set(topo.endpoints()) | topo.switch_set:
        raise UnknownNode(source)
    dist: dict[str, int] = {source: 0}
    frontier = [source]
    while frontier:
        nxt = []
        for node in sorted(frontier):
            if node != source and node not in topo.switch_set:
                continue  # endpoints do not forward
            for peer, _, _ in topo.adjacency.get(node, ()):
                if peer not in dist:
                    dist[peer] = dist[node] + 1
                    nxt.append(peer)
        frontier = nxt
    parents: dict[str, tuple[str, int, int]] = {}
    for node, d in dist.items():
        if node == source:
            continue
        candidates = [
            (peer, peer_port, own_port)
            for peer, own_port, peer_port in topo.adjacency.get(node, ())
            if dist.get(peer) == d - 1 and (peer == source or peer in topo.switch_set)
        ]
        parents[node] = min(candidates)
    return parents


def _tree_edges(topo: Topology, source: str, dests: Iterable[str]):
    """Edges of the multicast tree as parent -> {(parent_port, child, child_port)}."""
    parents = _shortest_path_parents(topo, source)
    children: dict[str, set[tuple[int, str, int]]] = {}
    for dest in dests:
        if dest == source:
            continue
        if dest not in parents:
            raise UnreachableNode(dest)
        node = dest
        while node != source:
            parent, parent_port, own_port = parents[node]
            children.setdefault(parent, set()).add((parent_port, node, own_port))
            node = parent
    return children


def forwarding_path(topo: Topology, source: str, dests: Iterable[str]) -> tuple[TreeHop, ...]:
    """Shortest-path multicast tree from source covering every destination.

    Hop count decides; ties go to the lowest node label.  The result lists
    one (switch, in_port, out_ports) entry per switch on the tree.
    """
    children = _tree_edges(topo, source, dests)
    parents = _shortest_path_parents(topo, source)
    hops = []
    for node, out_edges in children.items():
        if node == source:
            continue
        _, _, in_port = parents[node]
        hops.append(TreeHop(
            switch=node,
            in_port=in_port,
            out_ports=frozenset(port for port, _, _ in out_edges),
        ))
    return tuple(sorted(hops, key=TreeHop.sort_key))


def source_edges(topo: Topology, source: str, dests: Iterable[str]) -> tuple[tuple[int, str, int], ...]:
    """First hops of the multicast tree: (source_port, next_node, next_in_port)."""
    children = _tree_edges(topo, source, dests)
    return tuple(sorted(children.get(source, ())))
