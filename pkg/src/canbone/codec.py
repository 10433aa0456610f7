"""Bit-exact wire codecs for the two CAN-in-Ethernet embeddings.

Exposed layer-2 embedding (used by by-message separation)::

    dst MAC   6B  03:00:<can_id big-endian, 4B>  (multicast, locally administered)
    src MAC   6B  sending gateway
    802.1Q    4B  TPID 0x8100, PCP = CF priority, VID = CF domain
    EtherType 2B  0x88B5 (local experimental, marks embedded CAN)
    payload       can_id 4B big-endian (bit 31 = extended flag)
                  + dlc 1B + data + zero pad to the 42-byte tagged minimum
    FCS       4B  CRC-32

Hidden SOME/IP tunnel embedding (used by by-domain / by-topic separation)::

    Ethernet + 802.1Q (PCP mirrors the DSCP class), EtherType 0x0800
    IPv4   20B  DSCP = priority << 3, dst 239.0.0.<domain> or 239.1.<topic>
    UDP     8B  src 30490 + domain, dst 30490, checksum over pseudo-header
    SOME/IP 16B message_id = can_id (bit 31 = extended flag), length =
                8 + payload, request_id 0, versions 1/1, type 0x02, code 0
    payload     dlc 1B + data
    FCS     4B

Both codecs produce frames of 64..1518 bytes on the wire; nothing ever
fragments.  Header fields are pure functions of (flow metadata, strategy,
sending node), which is what lets the fabric match them.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from enum import Enum

from .errors import (
    BadChecksum,
    BadEtherType,
    BadGroupAddress,
    BadLength,
    DomainNotVlanRepresentable,
    FcsMismatch,
    GroupNotIpRepresentable,
    MacIdMismatch,
    MalformedSomeIp,
    TruncatedFrame,
)

ETHERTYPE_VLAN = 0x8100
ETHERTYPE_CAN = 0x88B5
ETHERTYPE_IPV4 = 0x0800

ETH_TAGGED_HEADER = 18       # dst + src MAC + 802.1Q tag + EtherType
ETH_MIN_TAGGED_PAYLOAD = 42  # keeps tagged frames at the 64-byte minimum
ETH_FCS = 4
WIRE_MIN = 64
WIRE_MAX = 1518

SOMEIP_UDP_PORT = 30490
SOMEIP_HEADER = 16
SOMEIP_LENGTH_COVERS = 8     # request_id..return_code counted by the length field
SOMEIP_PROTOCOL_VERSION = 1
SOMEIP_INTERFACE_VERSION = 1
SOMEIP_TYPE_NOTIFICATION = 0x02

IPV4_HEADER = 20
IPV4_TTL = 1                 # backbone-local multicast never leaves the vehicle
UDP_HEADER = 8

CAN_ID_MASK = (1 << 29) - 1
EXTENDED_FLAG = 1 << 31

DOMAIN_GROUP_PREFIX = "239.0.0."   # /24: one group address per domain
TOPIC_GROUP_PREFIX = "239.1."      # /16: one group address per topic


class Strategy(str, Enum):
    """Integration strategy; message uses the exposed L2 embedding, the
    other two tunnel through SOME/IP."""

    MESSAGE = "message"
    DOMAIN = "domain"
    TOPIC = "topic"

    @property
    def hidden(self) -> bool:
        return self is not Strategy.MESSAGE


@dataclass(frozen=True)
class CanFrame:
    """Classic CAN frame; dlc always equals len(data)."""

    can_id: int
    extended: bool
    data: bytes

    def __post_init__(self):
        object.__setattr__(self, "data", bytes(self.data))
        limit = (1 << 29) if self.extended else (1 << 11)
        if not 0 <= self.can_id < limit:
            raise BadLength(f"can_id 0x{self.can_id:X} out of range")
        if len(self.data) > 8:
            raise BadLength("classic CAN carries at most 8 data bytes")

    @property
    def dlc(self) -> int:
        return len(self.data)


@dataclass(frozen=True)
class L2Decoded:
    can_id: int
    extended: bool
    domain: int
    priority: int
    frame: CanFrame


@dataclass(frozen=True)
class SomeIpDecoded:
    can_id: int
    extended: bool
    grouping: Strategy
    group_id: int
    priority: int
    domain: int
    frame: CanFrame
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int


# --- address helpers --------------------------------------------------------

def mac_to_bytes(mac: str) -> bytes:
    parts = mac.split(":")
    if len(parts) != 6:
        raise BadGroupAddress(f"bad MAC {mac!r}")
    return bytes(int(p, 16) for p in parts)


def bytes_to_mac(raw: bytes) -> str:
    return ":".join(f"{b:02x}" for b in raw)


def ip_to_bytes(ip: str) -> bytes:
    parts = ip.split(".")
    if len(parts) != 4:
        raise BadGroupAddress(f"bad IPv4 address {ip!r}")
    return bytes(int(p) for p in parts)


def bytes_to_ip(raw: bytes) -> str:
    return ".".join(str(b) for b in raw)


def cf_dst_mac(can_id: int) -> str:
    """Multicast MAC that names one control flow: 03:00 + 29-bit CAN id."""
    return bytes_to_mac(bytes([0x03, 0x00]) + struct.pack(">I", can_id & CAN_ID_MASK))


def multicast_mac_for_ip(ip: str) -> str:
    """Standard IPv4-multicast MAC mapping: 01:00:5e + low 23 address bits."""
    raw = ip_to_bytes(ip)
    low = int.from_bytes(raw, "big") & 0x7FFFFF
    return bytes_to_mac(bytes([0x01, 0x00, 0x5E]) + low.to_bytes(3, "big"))


def domain_group_ip(domain: int) -> str:
    if not 1 <= domain <= 255:
        raise GroupNotIpRepresentable(f"domain {domain} does not fit 239.0.0.0/24")
    return f"{DOMAIN_GROUP_PREFIX}{domain}"


def topic_group_ip(topic: int) -> str:
    if not 1 <= topic <= 0xFFFF:
        raise GroupNotIpRepresentable(f"topic {topic} does not fit 239.1.0.0/16")
    return f"{TOPIC_GROUP_PREFIX}{topic >> 8}.{topic & 0xFF}"


def classify_group_ip(ip: str) -> tuple[Strategy, int]:
    """The two group ranges are disjoint, so a packet names its own grouping."""
    raw = ip_to_bytes(ip)
    if raw[0] != 239:
        raise BadGroupAddress(f"{ip} is not a backbone multicast group")
    if raw[1] == 0 and raw[2] == 0 and raw[3] != 0:
        return Strategy.DOMAIN, raw[3]
    if raw[1] == 1 and (raw[2] or raw[3]):
        return Strategy.TOPIC, (raw[2] << 8) | raw[3]
    raise BadGroupAddress(f"{ip} is outside the domain and topic group ranges")


def someip_src_port(domain: int) -> int:
    return SOMEIP_UDP_PORT + domain


# --- checksums ----------------------------------------------------------------

def _ones_complement_sum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f">{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return total


def ipv4_header_checksum(header: bytes) -> int:
    return ~_ones_complement_sum(header) & 0xFFFF


def udp_checksum(src_ip: bytes, dst_ip: bytes, udp_segment: bytes) -> int:
    pseudo = src_ip + dst_ip + struct.pack(">BBH", 0, 17, len(udp_segment))
    value = ~_ones_complement_sum(pseudo + udp_segment) & 0xFFFF
    return value or 0xFFFF


def _fcs(frame: bytes) -> bytes:
    return struct.pack("<I", zlib.crc32(frame))


def _vlan_tag(priority: int, vlan_id: int) -> bytes:
    if not 1 <= vlan_id <= 4094:
        raise DomainNotVlanRepresentable(vlan_id)
    return struct.pack(">HH", ETHERTYPE_VLAN, (priority << 13) | vlan_id)


# --- exposed layer-2 embedding -------------------------------------------------

def encode_l2(frame: CanFrame, *, domain: int, priority: int, src_mac: str) -> bytes:
    """Embed one CAN frame directly in a tagged Ethernet frame."""
    header = (
        mac_to_bytes(cf_dst_mac(frame.can_id))
        + mac_to_bytes(src_mac)
        + _vlan_tag(priority, domain)
        + struct.pack(">H", ETHERTYPE_CAN)
    )
    id_field = frame.can_id | (EXTENDED_FLAG if frame.extended else 0)
    payload = struct.pack(">IB", id_field, frame.dlc) + frame.data
    payload += b"\x00" * (ETH_MIN_TAGGED_PAYLOAD - len(payload))
    body = header + payload
    return body + _fcs(body)


def decode_l2(data: bytes) -> L2Decoded:
    """Inverse of encode_l2; strips padding via the dlc field and verifies
    the MAC-encoded id against the payload id."""
    if len(data) < WIRE_MIN:
        raise TruncatedFrame(f"{len(data)} bytes, below the 64-byte minimum")
    body, fcs = data[:-ETH_FCS], data[-ETH_FCS:]
    if _fcs(body) != fcs:
        raise FcsMismatch("frame check sequence does not match")
    dst_mac = body[0:6]
    tpid, tci = struct.unpack(">HH", body[12:16])
    ethertype = struct.unpack(">H", body[16:18])[0]
    if tpid != ETHERTYPE_VLAN or ethertype != ETHERTYPE_CAN:
        raise BadEtherType(f"expected tagged EtherType 0x{ETHERTYPE_CAN:04X}")
    if dst_mac[0] != 0x03 or dst_mac[1] != 0x00:
        raise MacIdMismatch("destination MAC is not a control-flow group address")
    mac_id = struct.unpack(">I", dst_mac[2:6])[0]
    id_field, dlc = struct.unpack(">IB", body[18:23])
    can_id = id_field & CAN_ID_MASK
    extended = bool(id_field & EXTENDED_FLAG)
    if id_field & ~(CAN_ID_MASK | EXTENDED_FLAG):
        raise MacIdMismatch("reserved bits set in the embedded CAN id")
    if can_id != mac_id:
        raise MacIdMismatch(f"MAC id 0x{mac_id:X} != payload id 0x{can_id:X}")
    if dlc > 8 or 23 + dlc > len(body):
        raise TruncatedFrame(f"dlc {dlc} exceeds the embedded payload")
    frame = CanFrame(can_id=can_id, extended=extended, data=body[23:23 + dlc])
    return L2Decoded(
        can_id=can_id,
        extended=extended,
        domain=tci & 0x0FFF,
        priority=tci >> 13,
        frame=frame,
    )


# --- hidden SOME/IP tunnel embedding -------------------------------------------

def encode_someip(
    frame: CanFrame,
    *,
    src_mac: str,
    src_ip: str,
    domain: int,
    priority: int,
    grouping: Strategy,
    topic: int | None = None,
) -> bytes:
    """Tunnel one CAN frame through UDP/SOME/IP to the group of its domain
    (grouping=DOMAIN) or of its topic (grouping=TOPIC)."""
    if grouping is Strategy.DOMAIN:
        dst_ip = domain_group_ip(domain)
    elif grouping is Strategy.TOPIC:
        if topic is None:
            raise GroupNotIpRepresentable("topic grouping requires a topic label")
        dst_ip = topic_group_ip(topic)
    else:
        raise GroupNotIpRepresentable("SOME/IP tunnels carry domain or topic groups only")

    someip_payload = struct.pack(">B", frame.dlc) + frame.data
    message_id = frame.can_id | (EXTENDED_FLAG if frame.extended else 0)
    someip = struct.pack(
        ">IIIBBBB",
        message_id,
        SOMEIP_LENGTH_COVERS + len(someip_payload),
        0,  # request_id
        SOMEIP_PROTOCOL_VERSION,
        SOMEIP_INTERFACE_VERSION,
        SOMEIP_TYPE_NOTIFICATION,
        0,  # return_code E_OK
    ) + someip_payload

    src_ip_b = ip_to_bytes(src_ip)
    dst_ip_b = ip_to_bytes(dst_ip)
    udp_len = UDP_HEADER + len(someip)
    udp_wo_sum = struct.pack(">HHHH", someip_src_port(domain), SOMEIP_UDP_PORT, udp_len, 0)
    checksum = udp_checksum(src_ip_b, dst_ip_b, udp_wo_sum + someip)
    udp = udp_wo_sum[:6] + struct.pack(">H", checksum) + someip

    dscp = priority << 3
    ip_wo_sum = struct.pack(
        ">BBHHHBBH4s4s",
        0x45,
        dscp << 2,
        IPV4_HEADER + udp_len,
        0,      # identification
        0,      # flags / fragment offset
        IPV4_TTL,
        17,     # UDP
        0,      # checksum placeholder
        src_ip_b,
        dst_ip_b,
    )
    ip_sum = ipv4_header_checksum(ip_wo_sum)
    ip_header = ip_wo_sum[:10] + struct.pack(">H", ip_sum) + ip_wo_sum[12:]

    header = (
        mac_to_bytes(multicast_mac_for_ip(dst_ip))
        + mac_to_bytes(src_mac)
        + _vlan_tag(priority, domain)
        + struct.pack(">H", ETHERTYPE_IPV4)
    )
    payload = ip_header + udp
    payload += b"\x00" * (ETH_MIN_TAGGED_PAYLOAD - len(payload))
    body = header + payload
    return body + _fcs(body)


def decode_someip(data: bytes) -> SomeIpDecoded:
    """Inverse of encode_someip; verifies every length field and both
    checksums before trusting the payload."""
    if len(data) < ETH_TAGGED_HEADER + IPV4_HEADER + UDP_HEADER + SOMEIP_HEADER + 1 + ETH_FCS:
        raise TruncatedFrame(f"{len(data)} bytes cannot hold a SOME/IP tunnel frame")
    body, fcs = data[:-ETH_FCS], data[-ETH_FCS:]
    if _fcs(body) != fcs:
        raise FcsMismatch("frame check sequence does not match")
    tpid, tci = struct.unpack(">HH", body[12:16])
    ethertype = struct.unpack(">H", body[16:18])[0]
    if tpid != ETHERTYPE_VLAN or ethertype != ETHERTYPE_IPV4:
        raise BadEtherType("expected a tagged IPv4 frame")

    ip = body[18:18 + IPV4_HEADER]
    if ip[0] != 0x45:
        raise MalformedSomeIp("IPv4 without options expected")
    total_len = struct.unpack(">H", ip[2:4])[0]
    if ip[9] != 17:
        raise MalformedSomeIp("tunnel frames carry UDP")
    if total_len < IPV4_HEADER + UDP_HEADER + SOMEIP_HEADER + 1:
        raise BadLength("IPv4 total length below the tunnel minimum")
    if 18 + total_len > len(body):
        raise TruncatedFrame("IPv4 total length exceeds the frame")
    if ipv4_header_checksum(ip) != 0:
        raise BadChecksum("IPv4 header checksum mismatch")
    tos = ip[1]
    dscp = tos >> 2
    src_ip = bytes_to_ip(ip[12:16])
    dst_ip = bytes_to_ip(ip[16:20])
    grouping, group_id = classify_group_ip(dst_ip)

    udp = body[18 + IPV4_HEADER:18 + total_len]
    src_port, dst_port, udp_len, _ = struct.unpack(">HHHH", udp[:UDP_HEADER])
    if udp_len != total_len - IPV4_HEADER or udp_len != len(udp):
        raise BadLength("UDP length disagrees with the IPv4 total length")
    if udp_checksum(ip[12:16], ip[16:20], udp[:6] + b"\x00\x00" + udp[8:]) != struct.unpack(">H", udp[6:8])[0]:
        raise BadChecksum("UDP checksum mismatch")

    someip = udp[UDP_HEADER:]
    message_id, length, request_id, proto, iface, msg_type, code = struct.unpack(
        ">IIIBBBB", someip[:SOMEIP_HEADER]
    )
    if proto != SOMEIP_PROTOCOL_VERSION or iface != SOMEIP_INTERFACE_VERSION:
        raise MalformedSomeIp("unsupported SOME/IP version")
    if msg_type != SOMEIP_TYPE_NOTIFICATION or code != 0 or request_id != 0:
        raise MalformedSomeIp("tunnel frames are plain notifications")
    if length != len(someip) - SOMEIP_HEADER + SOMEIP_LENGTH_COVERS:
        raise BadLength("SOME/IP length field disagrees with the UDP payload")
    if message_id & ~(CAN_ID_MASK | EXTENDED_FLAG):
        raise MalformedSomeIp("reserved bits set in the message id")
    can_id = message_id & CAN_ID_MASK
    extended = bool(message_id & EXTENDED_FLAG)

    dlc = someip[SOMEIP_HEADER]
    if dlc > 8 or SOMEIP_HEADER + 1 + dlc != len(someip):
        raise BadLength(f"dlc {dlc} disagrees with the SOME/IP length")
    frame = CanFrame(can_id=can_id, extended=extended, data=someip[SOMEIP_HEADER + 1:])

    priority = dscp >> 3
    if dscp & 0x07 or (tci >> 13) != priority:
        raise MalformedSomeIp("DSCP and PCP must both carry the flow priority")
    return SomeIpDecoded(
        can_id=can_id,
        extended=extended,
        grouping=grouping,
        group_id=group_id,
        priority=priority,
        domain=tci & 0x0FFF,
        frame=frame,
        src_ip=src_ip,
        dst_ip=dst_ip,
        src_port=src_port,
        dst_port=dst_port,
    )


# --- shared surface -------------------------------------------------------------

def wire_overhead(strategy: Strategy | str, frame: CanFrame) -> int:
    """Exact on-wire frame size (header, payload incl. padding, FCS) for a
    one-to-one embedding of this frame under the given strategy."""
    strategy = Strategy(strategy)
    if strategy is Strategy.MESSAGE:
        content = 4 + 1 + frame.dlc
    else:
        content = IPV4_HEADER + UDP_HEADER + SOMEIP_HEADER + 1 + frame.dlc
    return ETH_TAGGED_HEADER + max(ETH_MIN_TAGGED_PAYLOAD, content) + ETH_FCS


def extract_match_fields(data: bytes):
    """Header fields a switch matches on, without payload validation.

    Returns ("l2", dst_mac, vlan_id) for embedded-CAN frames,
    ("l3", src_ip, dst_ip, udp_dst) for IPv4/UDP frames (the UDP source
    port is never matched; the source IP already binds the sender), and
    None when the frame offers nothing to match.
    """
    if len(data) < ETH_TAGGED_HEADER:
        return None
    tpid, tci = struct.unpack(">HH", data[12:16])
    if tpid != ETHERTYPE_VLAN:
        return None
    ethertype = struct.unpack(">H", data[16:18])[0]
    if ethertype == ETHERTYPE_CAN:
        return ("l2", bytes_to_mac(data[0:6]), tci & 0x0FFF)
    if ethertype == ETHERTYPE_IPV4:
        if len(data) < 18 + IPV4_HEADER + UDP_HEADER:
            return None
        ip = data[18:18 + IPV4_HEADER]
        if ip[0] != 0x45 or ip[9] != 17:
            return None
        dst_port = struct.unpack(">H", data[18 + IPV4_HEADER + 2:18 + IPV4_HEADER + 4])[0]
        return ("l3", bytes_to_ip(ip[12:16]), bytes_to_ip(ip[16:20]), dst_port)
    return None


PCAP_MAGIC = 0xA1B2C3D4


def write_pcap(fp, packets, *, timestamps=None) -> None:
    """Write encoded frames to a classic pcap stream (link type Ethernet)."""
    fp.write(struct.pack("<IHHiIII", PCAP_MAGIC, 2, 4, 0, 0, 65535, 1))
    for index, packet in enumerate(packets):
        ts = timestamps[index] if timestamps else (index, 0)
        fp.write(struct.pack("<IIII", ts[0], ts[1], len(packet), len(packet)))
        fp.write(packet)
