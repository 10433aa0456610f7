"""canbone: CAN control flows on a software-defined Ethernet backbone.

Models a zonal in-vehicle network whose zone controllers gateway CAN
traffic onto a switched, SDN-managed Ethernet fabric; derives the network
flows and default-drop rule tables for three separation strategies (by
message, by domain, by topic); and quantifies the security impact via
legitimate / received / oversupplied / permitted / forbidden flow sets,
trace replay, and attack-reachability probes.
"""

from .codec import (
    CanFrame,
    Strategy,
    decode_l2,
    decode_someip,
    encode_l2,
    encode_someip,
    wire_overhead,
    write_pcap,
)
from .errors import CanboneError
from .fabric import (
    DeliveryLog,
    Drop,
    DropReason,
    gateway_egress,
    gateway_ingress,
    inject,
    parse_trace,
    replay_trace,
    switch_forward,
)
from .matrix import (
    CommMatrix,
    ControlFlow,
    EcuRecord,
    assign_topics,
    parse_matrix,
    serialize_matrix,
)
from .metrics import (
    AttackReport,
    PairMetrics,
    RelationTable,
    attack_reachability,
    share_buckets,
    legitimate_set,
    monotonicity_report,
    oracle_check,
    permitted_set,
    received_set,
    relation_table,
)
from .separation import (
    FlowRule,
    L2Key,
    L3Key,
    NetworkFlow,
    NfStats,
    derive_nfs,
    emission_key,
    nf_stats,
    synthesize_rules,
)
from .synth import SynthParams, synth_matrix
from .topology import (
    Link,
    Placement,
    Topology,
    forwarding_path,
    parse_topology,
    place,
    serialize_topology,
)

__version__ = "0.1.0"
