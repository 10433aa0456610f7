"""Deterministic forwarding simulation over the synthesized rule tables.

The simulator replays CAN traffic through the full pipeline: bus reception
at a zone controller, CAN-side bridging within the zone, embedding onto the
backbone, default-drop switch matching, and egress back onto CAN buses.
``inject`` drives the same matching machinery with a spoofed packet and no
log side effects, which is how the permitted set is probed.

There is no queuing or latency model; events are ordered by trace
timestamp (ties by input order) and transit takes zero time.  Reachability
is what the security metrics need, not timing.
"""

from __future__ import annotations

import re
from collections import Counter, deque
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping

from .codec import (
    ETHERTYPE_CAN,
    CanFrame,
    Strategy,
    decode_l2,
    decode_someip,
    encode_l2,
    encode_someip,
    extract_match_fields,
)
from .errors import (
    CodecError,
    GroupNotIpRepresentable,
    MalformedTraceLine,
    UnknownCf,
    UnknownNode,
    UnmappedBus,
)
from .matrix import CommMatrix, ControlFlow
from .separation import FlowRule, NetworkFlow, derive_nfs, synthesize_rules
from .topology import Topology, place, source_edges


class DropReason(str, Enum):
    UNKNOWN_CF = "UnknownCf"
    WRONG_BUS_FOR_SENDER = "WrongBusForSender"
    NO_NF = "NoNf"
    NO_RULE = "NoRule"
    DECODE_ERROR = "DecodeError"


@dataclass(frozen=True)
class Drop:
    reason: DropReason
    node: str
    detail: str = ""


@dataclass(frozen=True)
class EncodedPacket:
    data: bytes
    can_id: int
    src_node: str
    nf: NetworkFlow


@dataclass(frozen=True)
class EgressResult:
    """Outcome of decoding one backbone packet at a gateway or host."""

    can_id: int
    frame: CanFrame
    deliveries: tuple[tuple[str, CanFrame], ...]  # (bus label, frame) re-emissions
    receivers: frozenset[str]
    filtered: bool  # True when CAN-side filtering suppressed every bus


@dataclass(frozen=True)
class SimEvent:
    seq: int
    time_us: int
    kind: str
    node: str
    can_id: int | None = None
    info: str = ""

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            "time_us": self.time_us,
            "kind": self.kind,
            "node": self.node,
            "can_id": None if self.can_id is None else f"0x{self.can_id:X}",
            "info": self.info,
        }


class DeliveryLog:
    """Counters and event trail of one simulation run.

    Bytes on each link equal the summed wire sizes of the packets that
    traversed it, and every emitted branch ends in exactly one delivery or
    drop, so ``branches == deliveries + sum(drops)``.
    """

    def __init__(self):
        self.emissions = 0
        self.branches = 0
        self.deliveries = 0
        self.drops: Counter[str] = Counter()
        self.received_pairs: dict[tuple[str, str], set[int]] = {}
        self.cf_sources: dict[int, set[str]] = {}
        self.cf_backbone_packets: Counter[int] = Counter()
        self.cf_gateways: dict[int, set[str]] = {}
        self.cf_receivers: dict[int, set[str]] = {}
        self.cf_bus_emissions: Counter[int] = Counter()
        self.link_packets: Counter[tuple[str, str]] = Counter()
        self.link_bytes: Counter[tuple[str, str]] = Counter()
        self.events: list[SimEvent] = []
        self._seq = 0

    def add_event(self, time_us: int, kind: str, node: str, can_id: int | None = None, info: str = ""):
        self.events.append(SimEvent(self._seq, time_us, kind, node, can_id, info))
        self._seq += 1

    def add_drop(self, reason: DropReason, node: str, time_us: int, can_id: int | None = None, info: str = ""):
        self.drops[reason.value] += 1
        self.add_event(time_us, "drop", node, can_id, info or reason.value)

    def count_link(self, a: str, b: str, size: int):
        key = (a, b) if a <= b else (b, a)
        self.link_packets[key] += 1
        self.link_bytes[key] += size

    def pair_received(self, src: str, dst: str, can_id: int):
        self.received_pairs.setdefault((src, dst), set()).add(can_id)

    def to_json_obj(self) -> dict:
        cf_ids = sorted(
            set(self.cf_sources) | set(self.cf_backbone_packets)
            | set(self.cf_gateways) | set(self.cf_receivers) | set(self.cf_bus_emissions)
        )
        return {
            "emissions": self.emissions,
            "branches": self.branches,
            "deliveries": self.deliveries,
            "drops": {reason: count for reason, count in sorted(self.drops.items())},
            "received_pairs": {
                f"{src}|{dst}": [f"0x{c:X}" for c in sorted(ids)]
                for (src, dst), ids in sorted(self.received_pairs.items())
            },
            "cf_records": {
                f"0x{c:X}": {
                    "sources": sorted(self.cf_sources.get(c, ())),
                    "backbone_packets": self.cf_backbone_packets.get(c, 0),
                    "gateways_reached": sorted(self.cf_gateways.get(c, ())),
                    "receivers_delivered": sorted(self.cf_receivers.get(c, ())),
                    "bus_emissions": self.cf_bus_emissions.get(c, 0),
                }
                for c in cf_ids
            },
            "link_packets": {f"{a}|{b}": n for (a, b), n in sorted(self.link_packets.items())},
            "link_bytes": {f"{a}|{b}": n for (a, b), n in sorted(self.link_bytes.items())},
            "events": [event.to_json() for event in self.events],
        }


# --- trace parsing -----------------------------------------------------------

_TRACE_LINE = re.compile(
    r"^\((?P<sec>\d+)\.(?P<usec>\d{1,6})\)\s+(?P<bus>\S+)\s+"
    r"(?P<id>[0-9A-Fa-f]{1,8})#(?P<data>[0-9A-Fa-f]*)\s*$"
)


@dataclass(frozen=True)
class TraceRecord:
    time_us: int
    bus_name: str
    can_id: int
    extended: bool
    data: bytes
    line: int


def parse_trace(text: str) -> tuple[TraceRecord, ...]:
    """Parse candump-style lines: ``(<sec.usec>) <bus> <hex id>#<hex data>``."""
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        match = _TRACE_LINE.match(line)
        if match is None:
            raise MalformedTraceLine(lineno)
        usec = int(match["usec"].ljust(6, "0"))
        data_hex = match["data"]
        if len(data_hex) % 2:
            raise MalformedTraceLine(lineno, "odd number of data digits")
        data = bytes.fromhex(data_hex)
        if len(data) > 8:
            raise MalformedTraceLine(lineno, "more than 8 data bytes")
        records.append(TraceRecord(
            time_us=int(match["sec"]) * 1_000_000 + usec,
            bus_name=match["bus"],
            can_id=int(match["id"], 16),
            extended=len(match["id"]) > 3,
            data=data,
            line=lineno,
        ))
    return tuple(records)


def _validate_bus_map(bus_map: Mapping[str, Mapping[str, str]], topo: Topology) -> dict[str, tuple[str, str]]:
    mapping = {}
    for name, entry in bus_map.items():
        gw = entry.get("gateway")
        bus = entry.get("bus")
        zone = topo.zone_of_gateway.get(gw)
        if zone is None:
            raise UnmappedBus(name, f"{gw} is not a gateway")
        if (zone, bus) not in topo.buses:
            raise UnmappedBus(name, f"gateway {gw} has no bus {bus}")
        mapping[name] = (gw, bus)
    return mapping


# --- encoding at the network edge ---------------------------------------------

def craft_packet(node: str, cf: ControlFlow, strategy: Strategy | str, topo: Topology,
                 frame: CanFrame | None = None) -> bytes:
    """The exact bytes this flow gets when emitted by ``node`` — no check
    that an NF exists, which is the point: this is what a spoofer sends."""
    strategy = Strategy(strategy)
    if frame is None:
        frame = CanFrame(cf.can_id, cf.extended, bytes(cf.payload_len))
    addr = topo.addressing[node]
    if strategy is Strategy.MESSAGE:
        return encode_l2(frame, domain=cf.domain, priority=cf.priority, src_mac=addr.mac)
    return encode_someip(
        frame,
        src_mac=addr.mac,
        src_ip=addr.ip,
        domain=cf.domain,
        priority=cf.priority,
        grouping=strategy,
        topic=cf.topic,
    )


def nf_lookup_index(nfs: Iterable[NetworkFlow], matrix: CommMatrix,
                    strategy: Strategy | str) -> dict[tuple[str, int], NetworkFlow]:
    """(source node, group id) -> NF; the group id is the CAN id, domain, or
    topic depending on the strategy."""
    strategy = Strategy(strategy)
    index: dict[tuple[str, int], NetworkFlow] = {}
    for nf in nfs:
        if strategy is Strategy.MESSAGE:
            for can_id in nf.carried:
                index[(nf.source, can_id)] = nf
        else:
            sample = matrix.by_can_id[next(iter(nf.carried))]
            group = sample.domain if strategy is Strategy.DOMAIN else sample.topic
            index[(nf.source, group)] = nf
    return index


def _group_id(cf: ControlFlow, strategy: Strategy) -> int:
    if strategy is Strategy.MESSAGE:
        return cf.can_id
    return cf.domain if strategy is Strategy.DOMAIN else cf.topic


def _encode_at(node: str, cf: ControlFlow, frame: CanFrame, strategy: Strategy,
               index: Mapping[tuple[str, int], NetworkFlow], topo: Topology) -> EncodedPacket | Drop:
    nf = index.get((node, _group_id(cf, strategy)))
    if nf is None:
        return Drop(DropReason.NO_NF, node, f"no NF at {node} for 0x{cf.can_id:X}")
    return EncodedPacket(
        data=craft_packet(node, cf, strategy, topo, frame),
        can_id=cf.can_id,
        src_node=node,
        nf=nf,
    )


def gateway_ingress(gw: str, bus: str, frame: CanFrame, strategy: Strategy | str,
                    nfs: Iterable[NetworkFlow], matrix: CommMatrix, topo: Topology,
                    strict_ingress: bool = False) -> EncodedPacket | Drop:
    """CAN-to-Ethernet edge: embed a bus frame into the NF that carries it
    at this gateway, or say why not (always a Drop, never an exception)."""
    strategy = Strategy(strategy)
    cf = matrix.by_can_id.get(frame.can_id)
    if cf is None:
        return Drop(DropReason.UNKNOWN_CF, gw, f"0x{frame.can_id:X}")
    if strict_ingress:
        zone = topo.zone_of_gateway.get(gw)
        if topo.ecu_location.get(cf.sender) != (zone, bus):
            return Drop(DropReason.WRONG_BUS_FOR_SENDER, gw,
                        f"{cf.sender} is not on {gw}/{bus}")
    index = nf_lookup_index(nfs, matrix, strategy)
    return _encode_at(gw, cf, frame, strategy, index, topo)


# --- switching and egress -------------------------------------------------------

def switch_forward(switch: str, in_port: int, packet: bytes,
                   rules: Mapping[str, tuple[FlowRule, ...]]) -> frozenset[int] | Drop:
    """Exact match against the switch's table, ingress port included;
    no entry means drop."""
    fields = extract_match_fields(packet)
    if fields is not None:
        for rule in rules.get(switch, ()):
            if rule.matches(fields, in_port):
                return rule.out_ports
    return Drop(DropReason.NO_RULE, switch, f"in_port {in_port}")


def gateway_egress(gw: str, packet: bytes, matrix: CommMatrix, topo: Topology,
                   filter_mode: str = "on") -> EgressResult | Drop:
    """Ethernet-to-CAN edge: decode, then re-emit onto this node's buses.

    The flow counts as received here no matter what the CAN-side filter
    decides afterwards.
    """
    if len(packet) < 18:
        return Drop(DropReason.DECODE_ERROR, gw, "runt frame")
    ethertype = int.from_bytes(packet[16:18], "big")
    try:
        if ethertype == ETHERTYPE_CAN:
            decoded = decode_l2(packet)
        else:
            decoded = decode_someip(packet)
    except CodecError as exc:
        return Drop(DropReason.DECODE_ERROR, gw, type(exc).__name__)
    cf = matrix.by_can_id.get(decoded.can_id)
    if cf is None:
        return Drop(DropReason.UNKNOWN_CF, gw, f"0x{decoded.can_id:X}")

    if gw in topo.eth_hosts:
        receivers = frozenset({gw}) & cf.receivers
        return EgressResult(cf.can_id, decoded.frame, (), receivers, filtered=False)

    deliveries = []
    receivers: set[str] = set()
    for zone, bus in topo.zone_buses(gw):
        on_bus = cf.receivers & topo.buses[(zone, bus)]
        if filter_mode == "on" and not on_bus:
            continue
        deliveries.append((bus, decoded.frame))
        receivers.update(on_bus)
    filtered = filter_mode == "on" and not deliveries
    return EgressResult(cf.can_id, decoded.frame, tuple(deliveries), frozenset(receivers), filtered)


# --- the forwarding walk ----------------------------------------------------------

def _walk(packet: bytes, src_node: str, first_hops, rules, topo: Topology,
          matrix: CommMatrix, *, filter_mode: str = "on",
          log: DeliveryLog | None = None, time_us: int = 0,
          can_id: int | None = None) -> list[tuple[str, EgressResult]]:
    """Push one packet through the fabric; every branch ends in a delivery
    or a drop.  Returns the endpoints that decoded it."""
    reached: list[tuple[str, EgressResult]] = []
    size = len(packet)
    work: deque[tuple[str, int]] = deque()
    visited: set[tuple[str, int]] = set()

    for _, nxt, nxt_port in first_hops:
        if log:
            log.branches += 1
            log.count_link(src_node, nxt, size)
        work.append((nxt, nxt_port))

    while work:
        node, in_port = work.popleft()
        if node in topo.switch_set:
            if (node, in_port) in visited:
                if log:
                    log.add_drop(DropReason.NO_RULE, node, time_us, can_id, "forwarding loop")
                continue
            visited.add((node, in_port))
            out = switch_forward(node, in_port, packet, rules)
            if isinstance(out, Drop):
                if log:
                    log.add_drop(out.reason, node, time_us, can_id, out.detail)
                continue
            ports = sorted(out)
            if log:
                log.branches += len(ports) - 1
                log.add_event(time_us, "switch_forward", node, can_id,
                              f"in {in_port} -> out {','.join(map(str, ports))}")
            for port in ports:
                peer, peer_port = topo.port_map[node][port]
                if log:
                    log.count_link(node, peer, size)
                work.append((peer, peer_port))
        else:
            result = gateway_egress(node, packet, matrix, topo, filter_mode)
            if isinstance(result, Drop):
                if log:
                    log.add_drop(result.reason, node, time_us, can_id, result.detail)
                continue
            reached.append((node, result))
            if log:
                log.deliveries += 1
                log.add_event(time_us, "gateway_rx", node, result.can_id)
                log.pair_received(src_node, node, result.can_id)
                log.cf_gateways.setdefault(result.can_id, set()).add(node)
                log.cf_receivers.setdefault(result.can_id, set()).update(result.receivers)
                for bus, _ in result.deliveries:
                    log.cf_bus_emissions[result.can_id] += 1
                    log.add_event(time_us, "bus_tx", node, result.can_id, bus)
                if result.filtered:
                    log.add_event(time_us, "filter_drop", node, result.can_id)
    return reached


def simulate_emission(can_id: int, strategy: Strategy | str, topo: Topology,
                      matrix: CommMatrix, nfs: Iterable[NetworkFlow],
                      rules: Mapping[str, tuple[FlowRule, ...]],
                      filter_mode: str = "on",
                      log: DeliveryLog | None = None,
                      time_us: int = 0) -> list[tuple[str, EgressResult]]:
    """One legitimate emission of a flow from its true source node."""
    strategy = Strategy(strategy)
    cf = matrix.by_can_id.get(can_id)
    if cf is None:
        raise UnknownCf(can_id)
    source = topo.node_for_ecu(cf.sender)
    index = nf_lookup_index(nfs, matrix, strategy)
    frame = CanFrame(cf.can_id, cf.extended, bytes(cf.payload_len))
    encoded = _encode_at(source, cf, frame, strategy, index, topo)
    if isinstance(encoded, Drop):
        if log:
            log.add_drop(encoded.reason, encoded.node, time_us, can_id, encoded.detail)
        return []
    if log:
        log.emissions += 1
        log.cf_sources.setdefault(can_id, set()).add(source)
        log.cf_backbone_packets[can_id] += 1
        log.add_event(time_us, "embed", source, can_id)
    hops = source_edges(topo, source, encoded.nf.dests)
    return _walk(encoded.data, source, hops, rules, topo, matrix,
                 filter_mode=filter_mode, log=log, time_us=time_us, can_id=can_id)


def inject(from_node: str, can_id: int, strategy: Strategy | str,
           rules: Mapping[str, tuple[FlowRule, ...]], topo: Topology,
           matrix: CommMatrix) -> frozenset[str]:
    """Probe where one spoofed emission of a flow from this node would be
    forwarded.  Pure: no log, no state."""
    strategy = Strategy(strategy)
    cf = matrix.by_can_id.get(can_id)
    if cf is None:
        raise UnknownCf(can_id)
    if from_node not in topo.endpoints():
        raise UnknownNode(from_node)
    try:
        packet = craft_packet(from_node, cf, strategy, topo)
    except GroupNotIpRepresentable:
        return frozenset()
    hops = tuple(
        (own, peer, theirs) for peer, own, theirs in topo.adjacency.get(from_node, ())
    )
    reached = _walk(packet, from_node, hops, rules, topo, matrix, filter_mode="off")
    return frozenset(node for node, _ in reached)


# --- trace replay ------------------------------------------------------------------

def replay_trace(trace: str, bus_map: Mapping[str, Mapping[str, str]], topo: Topology,
                 matrix: CommMatrix, strategy: Strategy | str,
                 filter_mode: str = "on", strict_ingress: bool = False) -> DeliveryLog:
    """Replay a CAN trace through the fabric and account for every packet."""
    strategy = Strategy(strategy)
    records = parse_trace(trace)
    mapping = _validate_bus_map(bus_map, topo)
    placement = place(matrix, topo)
    nfs = derive_nfs(matrix, topo, placement, strategy)
    rules = synthesize_rules(nfs, topo)
    index = nf_lookup_index(nfs, matrix, strategy)
    tree_cache: dict[tuple[str, frozenset[str]], tuple] = {}
    log = DeliveryLog()

    for record in sorted(records, key=lambda r: r.time_us):
        gw, bus = mapping[record.bus_name]
        t = record.time_us
        log.add_event(t, "bus_rx", gw, record.can_id, bus)
        cf = matrix.by_can_id.get(record.can_id)
        if cf is None:
            log.add_drop(DropReason.UNKNOWN_CF, gw, t, record.can_id)
            continue
        frame = CanFrame(record.can_id, record.extended, record.data)
        zone = topo.zone_of_gateway[gw]
        if strict_ingress and topo.ecu_location.get(cf.sender) != (zone, bus):
            log.add_drop(DropReason.WRONG_BUS_FOR_SENDER, gw, t, record.can_id)
            continue

        # CAN-side bridging within the zone; receivers on the ingress bus
        # hear the frame directly.
        log.cf_sources.setdefault(cf.can_id, set()).add(gw)
        log.cf_receivers.setdefault(cf.can_id, set()).update(
            cf.receivers & topo.buses[(zone, bus)]
        )
        for z, other_bus in topo.zone_buses(gw):
            if other_bus == bus:
                continue
            on_bus = cf.receivers & topo.buses[(z, other_bus)]
            if filter_mode == "on" and not on_bus:
                continue
            log.cf_bus_emissions[cf.can_id] += 1
            log.cf_receivers.setdefault(cf.can_id, set()).update(on_bus)
            log.add_event(t, "bus_tx", gw, cf.can_id, other_bus)

        if placement.local[cf.can_id]:
            continue
        encoded = _encode_at(gw, cf, frame, strategy, index, topo)
        if isinstance(encoded, Drop):
            log.add_drop(encoded.reason, encoded.node, t, cf.can_id, encoded.detail)
            continue
        log.emissions += 1
        log.cf_backbone_packets[cf.can_id] += 1
        log.add_event(t, "embed", gw, cf.can_id)
        cache_key = (gw, encoded.nf.dests)
        if cache_key not in tree_cache:
            tree_cache[cache_key] = source_edges(topo, gw, encoded.nf.dests)
        _walk(encoded.data, gw, tree_cache[cache_key], rules, topo, matrix,
              filter_mode=filter_mode, log=log, time_us=t, can_id=cf.can_id)
    return log
