"""Exception hierarchy shared by all canbone modules.

Every error raised by parsing, validation, derivation, or codec code is a
subclass of ``CanboneError`` so callers (notably the CLI) can convert any
failure into a machine-readable diagnostic.
"""

from __future__ import annotations


class CanboneError(Exception):
    """Base class for all package errors."""


# --- communication matrix ------------------------------------------------

class MalformedRecord(CanboneError):
    def __init__(self, detail: str, line: int | None = None):
        self.detail = detail
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{detail}")


class DuplicateCanId(CanboneError):
    def __init__(self, can_id: int):
        self.can_id = can_id
        super().__init__(f"duplicate CAN id 0x{can_id:X}")


class SenderIsReceiver(CanboneError):
    def __init__(self, can_id: int):
        self.can_id = can_id
        super().__init__(f"0x{can_id:X}: sender listed among receivers")


class EmptyReceivers(CanboneError):
    def __init__(self, can_id: int):
        self.can_id = can_id
        super().__init__(f"0x{can_id:X}: receiver set is empty")


class PriorityOutOfRange(CanboneError):
    def __init__(self, can_id: int):
        self.can_id = can_id
        super().__init__(f"0x{can_id:X}: priority outside 0..7")


class DomainMismatch(CanboneError):
    def __init__(self, can_id: int, ecu: str):
        self.can_id = can_id
        self.ecu = ecu
        super().__init__(f"0x{can_id:X}: flow domain differs from sender {ecu}'s domain")


class UnknownCanId(CanboneError):
    def __init__(self, can_id: int):
        self.can_id = can_id
        super().__init__(f"unknown CAN id 0x{can_id:X}")


class InfeasibleParams(CanboneError):
    pass


# --- topology -------------------------------------------------------------

class UnattachedEcu(CanboneError):
    def __init__(self, ecu: str, detail: str = ""):
        self.ecu = ecu
        super().__init__(f"ECU {ecu}: {detail or 'not attached to a known (zone, bus)'}")


class DisconnectedGraph(CanboneError):
    pass


class DuplicateAddress(CanboneError):
    pass


class DuplicatePort(CanboneError):
    pass


class UnknownEcu(CanboneError):
    def __init__(self, ecu: str):
        self.ecu = ecu
        super().__init__(f"unknown ECU {ecu}")


class UnknownNode(CanboneError):
    def __init__(self, node: str):
        self.node = node
        super().__init__(f"unknown node {node}")


class UnreachableNode(CanboneError):
    def __init__(self, node: str):
        self.node = node
        super().__init__(f"node {node} unreachable from source")


class EcuPlacementConflict(CanboneError):
    def __init__(self, ecu: str, detail: str):
        self.ecu = ecu
        super().__init__(f"ECU {ecu}: {detail}")


# --- codec ----------------------------------------------------------------

class CodecError(CanboneError):
    pass


class DomainNotVlanRepresentable(CodecError):
    def __init__(self, domain: int):
        self.domain = domain
        super().__init__(f"domain {domain} does not fit a 12-bit VLAN id (1..4094)")


class GroupNotIpRepresentable(CodecError):
    def __init__(self, detail: str):
        super().__init__(detail)


class BadEtherType(CodecError):
    pass


class MacIdMismatch(CodecError):
    pass


class TruncatedFrame(CodecError):
    pass


class BadLength(CodecError):
    pass


class BadChecksum(CodecError):
    pass


class FcsMismatch(CodecError):
    pass


class MalformedSomeIp(CodecError):
    pass


class BadGroupAddress(CodecError):
    pass


# --- fabric ---------------------------------------------------------------

class MalformedTraceLine(CanboneError):
    def __init__(self, line: int, detail: str = ""):
        self.line = line
        super().__init__(f"trace line {line}: {detail or 'not a candump record'}")


class UnmappedBus(CanboneError):
    def __init__(self, bus: str, detail: str = ""):
        self.bus = bus
        super().__init__(f"trace bus {bus}: {detail or 'no mapping to a (gateway, bus)'}")


class UnknownCf(CanboneError):
    def __init__(self, can_id: int):
        self.can_id = can_id
        super().__init__(f"CAN id 0x{can_id:X} not in the communication matrix")
