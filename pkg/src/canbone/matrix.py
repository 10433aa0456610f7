"""Vehicle communication matrices.

A matrix lists every control flow (CF) of the vehicle: one CAN id, one
sending ECU, a non-empty receiver set, and the domain/topic/priority labels
that drive separation and QoS downstream.  JSON is the canonical file
format; CSV is accepted as a convenience ingest.  All types are immutable
after construction and validate their invariants on construction.
"""

from __future__ import annotations

import csv as _csv
import io
import json
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Mapping

from .errors import (
    DomainMismatch,
    DuplicateCanId,
    EmptyReceivers,
    MalformedRecord,
    PriorityOutOfRange,
    SenderIsReceiver,
    UnknownCanId,
)

CAN_ID_BITS_STANDARD = 11
CAN_ID_BITS_EXTENDED = 29
DOMAIN_MAX = 4094  # domain labels double as VLAN ids; 0 and 4095 are reserved
TOPIC_MAX = 0xFFFF
PRIORITY_MAX = 7
PAYLOAD_MAX = 8


@dataclass(frozen=True, order=True)
class EcuRecord:
    """One ECU known to the matrix, with its placement and bus domain.

    Ethernet-native nodes (e.g. an HPC) appear with ``zone`` equal to their
    own name and no bus.  Records parsed from CSV may carry only a name.
    """

    name: str
    zone: str | None = None
    bus: str | None = None
    domain: int | None = None


@dataclass(frozen=True)
class ControlFlow:
    """One communication-matrix entry: a message stream with a single sender."""

    can_id: int
    sender: str
    receivers: frozenset[str]
    domain: int
    topic: int
    priority: int
    extended: bool = False
    payload_len: int = 8
    cycle_ms: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "receivers", frozenset(self.receivers))
        bits = CAN_ID_BITS_EXTENDED if self.extended else CAN_ID_BITS_STANDARD
        if not 0 <= self.can_id < (1 << bits):
            kind = "extended" if self.extended else "standard"
            raise MalformedRecord(f"can_id 0x{self.can_id:X} out of range for {kind} frame")
        if not self.receivers:
            raise EmptyReceivers(self.can_id)
        if self.sender in self.receivers:
            raise SenderIsReceiver(self.can_id)
        if not 0 <= self.priority <= PRIORITY_MAX:
            raise PriorityOutOfRange(self.can_id)
        if not 1 <= self.domain <= DOMAIN_MAX:
            raise MalformedRecord(f"0x{self.can_id:X}: domain {self.domain} outside 1..{DOMAIN_MAX}")
        if not 1 <= self.topic <= TOPIC_MAX:
            raise MalformedRecord(f"0x{self.can_id:X}: topic {self.topic} outside 1..{TOPIC_MAX}")
        if not 0 <= self.payload_len <= PAYLOAD_MAX:
            raise MalformedRecord(f"0x{self.can_id:X}: payload_len {self.payload_len} outside 0..8")
        if self.cycle_ms is not None and self.cycle_ms <= 0:
            raise MalformedRecord(f"0x{self.can_id:X}: cycle_ms must be positive")


@dataclass(frozen=True)
class CommMatrix:
    """The vehicle-wide set of control flows plus the ECUs they reference."""

    flows: tuple[ControlFlow, ...]
    ecus: tuple[EcuRecord, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "flows", tuple(self.flows))
        object.__setattr__(self, "ecus", tuple(self.ecus))
        seen_ids: set[int] = set()
        for flow in self.flows:
            if flow.can_id in seen_ids:
                raise DuplicateCanId(flow.can_id)
            seen_ids.add(flow.can_id)
        seen_names: set[str] = set()
        for ecu in self.ecus:
            if ecu.name in seen_names:
                raise MalformedRecord(f"ECU {ecu.name} listed twice")
            seen_names.add(ecu.name)
        by_name = {ecu.name: ecu for ecu in self.ecus}
        for flow in self.flows:
            record = by_name.get(flow.sender)
            if record is not None and record.domain is not None and record.domain != flow.domain:
                raise DomainMismatch(flow.can_id, flow.sender)

    @cached_property
    def by_can_id(self) -> Mapping[int, ControlFlow]:
        return {flow.can_id: flow for flow in self.flows}

    @cached_property
    def ecu_by_name(self) -> Mapping[str, EcuRecord]:
        return {ecu.name: ecu for ecu in self.ecus}

    @property
    def domains(self) -> frozenset[int]:
        return frozenset(flow.domain for flow in self.flows)

    @property
    def topics(self) -> frozenset[int]:
        return frozenset(flow.topic for flow in self.flows)

    def ecu_names(self) -> frozenset[str]:
        """Every ECU referenced by a flow or declared in the ECU list."""
        names = {ecu.name for ecu in self.ecus}
        for flow in self.flows:
            names.add(flow.sender)
            names.update(flow.receivers)
        return frozenset(names)


# --- parsing / serialization ----------------------------------------------

def _parse_can_id(value, context: str) -> int:
    if isinstance(value, bool):
        raise MalformedRecord(f"{context}: can_id must be an integer or hex string")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        try:
            return int(value, 0)
        except ValueError:
            raise MalformedRecord(f"{context}: bad can_id {value!r}") from None
    raise MalformedRecord(f"{context}: bad can_id {value!r}")


def _opt_int(value, context: str) -> int | None:
    if value is None or value == "":
        return None
    try:
        return int(value)
    except (TypeError, ValueError):
        raise MalformedRecord(f"{context}: expected integer, got {value!r}") from None


def _flow_from_json(obj, index: int) -> ControlFlow:
    context = f"flow #{index}"
    if not isinstance(obj, dict):
        raise MalformedRecord(f"{context}: expected object")
    for key in ("can_id", "sender", "receivers", "domain", "topic", "priority"):
        if key not in obj:
            raise MalformedRecord(f"{context}: missing field {key}")
    receivers = obj["receivers"]
    if not isinstance(receivers, list) or not all(isinstance(r, str) for r in receivers):
        raise MalformedRecord(f"{context}: receivers must be a list of names")
    cycle = _opt_int(obj.get("cycle_ms"), context)
    try:
        return ControlFlow(
            can_id=_parse_can_id(obj["can_id"], context),
            sender=str(obj["sender"]),
            receivers=frozenset(receivers),
            domain=int(obj["domain"]),
            topic=int(obj["topic"]),
            priority=int(obj["priority"]),
            extended=bool(obj.get("extended", False)),
            payload_len=int(obj.get("payload_len", 8)),
            cycle_ms=cycle,
        )
    except (TypeError, ValueError):
        raise MalformedRecord(f"{context}: field with wrong type") from None


def _ecu_from_json(obj, index: int) -> EcuRecord:
    context = f"ecu #{index}"
    if not isinstance(obj, dict) or "name" not in obj:
        raise MalformedRecord(f"{context}: expected object with a name")
    return EcuRecord(
        name=str(obj["name"]),
        zone=obj.get("zone"),
        bus=obj.get("bus"),
        domain=_opt_int(obj.get("domain"), context),
    )


def parse_matrix(text: str, fmt: str = "json") -> CommMatrix:
    """Parse a communication matrix from JSON (canonical) or CSV text.

    Raises a validation error and returns no partial result if any record
    is malformed or any matrix invariant is violated.
    """
    if fmt == "json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
        if not isinstance(doc, dict) or "flows" not in doc:
            raise MalformedRecord("top-level object with a 'flows' list expected")
        ecus = tuple(_ecu_from_json(e, i) for i, e in enumerate(doc.get("ecus", [])))
        flows = tuple(_flow_from_json(f, i) for i, f in enumerate(doc["flows"]))
        return CommMatrix(flows=flows, ecus=ecus)
    if fmt == "csv":
        return _parse_matrix_csv(text)
    raise MalformedRecord(f"unknown matrix format {fmt!r}")


def _parse_bool(value: str, line: int) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes"):
        return True
    if lowered in ("0", "false", "no", ""):
        return False
    raise MalformedRecord(f"bad boolean {value!r}", line=line)


def _parse_matrix_csv(text: str) -> CommMatrix:
    ecus: list[EcuRecord] = []
    flows: list[ControlFlow] = []
    reader = _csv.reader(io.StringIO(text))
    for lineno, row in enumerate(reader, start=1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if row[0].strip() == "ecu":
            if len(row) != 5:
                raise MalformedRecord("ecu line needs name,zone,bus,domain", line=lineno)
            _, name, zone, bus, domain = (f.strip() for f in row)
            ecus.append(EcuRecord(
                name=name,
                zone=zone or None,
                bus=bus or None,
                domain=_opt_int(domain, f"line {lineno}"),
            ))
            continue
        if len(row) < 7 or len(row) > 9:
            raise MalformedRecord("flow line needs 7..9 fields", line=lineno)
        fields = [f.strip() for f in row] + [""] * (9 - len(row))
        try:
            flows.append(ControlFlow(
                can_id=_parse_can_id(fields[0], f"line {lineno}"),
                extended=_parse_bool(fields[1], lineno),
                sender=fields[2],
                receivers=frozenset(r for r in fields[3].split("|") if r),
                domain=int(fields[4]),
                topic=int(fields[5]),
                priority=int(fields[6]),
                payload_len=int(fields[7]) if fields[7] else 8,
                cycle_ms=_opt_int(fields[8], f"line {lineno}"),
            ))
        except ValueError:
            raise MalformedRecord("numeric field malformed", line=lineno) from None
    return CommMatrix(flows=tuple(flows), ecus=tuple(ecus))


def _flow_to_json(flow: ControlFlow) -> dict:
    return {
        "can_id": f"0x{flow.can_id:X}",
        "extended": flow.extended,
        "sender": flow.sender,
        "receivers": sorted(flow.receivers),
        "domain": flow.domain,
        "topic": flow.topic,
        "priority": flow.priority,
        "payload_len": flow.payload_len,
        "cycle_ms": flow.cycle_ms,
    }


def _ecu_to_json(ecu: EcuRecord) -> dict:
    return {"name": ecu.name, "zone": ecu.zone, "bus": ecu.bus, "domain": ecu.domain}


def serialize_matrix(matrix: CommMatrix, fmt: str = "json") -> str:
    """Serialize a matrix; ``parse_matrix`` inverts this exactly for both formats."""
    if fmt == "json":
        doc = {
            "ecus": [_ecu_to_json(e) for e in matrix.ecus],
            "flows": [_flow_to_json(f) for f in matrix.flows],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        out = io.StringIO()
        writer = _csv.writer(out, lineterminator="\n")
        for ecu in matrix.ecus:
            writer.writerow([
                "ecu", ecu.name, ecu.zone or "", ecu.bus or "",
                "" if ecu.domain is None else ecu.domain,
            ])
        for flow in matrix.flows:
            writer.writerow([
                f"0x{flow.can_id:X}",
                "1" if flow.extended else "0",
                flow.sender,
                "|".join(sorted(flow.receivers)),
                flow.domain,
                flow.topic,
                flow.priority,
                flow.payload_len,
                "" if flow.cycle_ms is None else flow.cycle_ms,
            ])
        return out.getvalue()
    raise MalformedRecord(f"unknown matrix format {fmt!r}")


def assign_topics(matrix: CommMatrix, grouping: Mapping[int, int]) -> CommMatrix:
    """Re-label topics: grouped flows share the given label, the rest get
    fresh singleton labels that no group uses."""
    known = set(matrix.by_can_id)
    for can_id in grouping:
        if can_id not in known:
            raise UnknownCanId(can_id)
    group_labels = set(grouping.values())
    fresh = 1
    new_flows = []
    for flow in matrix.flows:
        if flow.can_id in grouping:
            new_flows.append(replace(flow, topic=grouping[flow.can_id]))
            continue
        while fresh in group_labels:
            fresh += 1
        if fresh > TOPIC_MAX:
            raise MalformedRecord("ran out of fresh topic labels")
        new_flows.append(replace(flow, topic=fresh))
        fresh += 1
    return CommMatrix(flows=tuple(new_flows), ecus=matrix.ecus)
