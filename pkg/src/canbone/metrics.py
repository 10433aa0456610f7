"""Security metrics over gateway pairs, plus the attack case study.

For every ordered (source, destination) pair of backbone endpoints, each
backbone control flow is classified as:

* legitimate — the matrix specifies it between these two nodes,
* received — the NF carrying it actually delivers it to the destination,
* oversupplied — received but not legitimate (tunnel surplus),
* permitted — the fabric would forward it if the source spoofed it,
* forbidden — the fabric drops it no matter what.

The universe ("maximum") is the backbone flow set; local flows never enter
any metric.  ``oracle_check`` rebuilds the whole table from brute-force
simulation (all legitimate emissions plus all injections) and compares it
with the static computation.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping

from .codec import Strategy
from .errors import UnknownCf, UnknownNode
from .fabric import inject, simulate_emission
from .matrix import CommMatrix
from .separation import NetworkFlow, derive_nfs, emission_key, synthesize_rules
from .topology import Placement, Topology, place

ORACLE_DEFAULT_BOUND = 200


@dataclass(frozen=True)
class PairMetrics:
    """Classification of every backbone flow for one ordered node pair."""

    src: str
    dst: str
    maximum: int
    legitimate: frozenset[int]
    received: frozenset[int]
    oversupplied: frozenset[int]
    permitted: frozenset[int]
    forbidden: frozenset[int]

    def counts(self) -> dict[str, int]:
        return {
            "maximum": self.maximum,
            "legitimate": len(self.legitimate),
            "received": len(self.received),
            "oversupplied": len(self.oversupplied),
            "permitted": len(self.permitted),
            "forbidden": len(self.forbidden),
        }

    def to_json(self) -> dict:
        def ids(values):
            return [f"0x{c:X}" for c in sorted(values)]
        return {
            "src": self.src,
            "dst": self.dst,
            "maximum": self.maximum,
            "legitimate": ids(self.legitimate),
            "received": ids(self.received),
            "oversupplied": ids(self.oversupplied),
            "permitted": ids(self.permitted),
            "forbidden": ids(self.forbidden),
            "counts": self.counts(),
            "shares": dict(zip(
                ("legitimate", "oversupplied", "permitted_excess", "forbidden"),
                share_buckets(self),
            )),
        }


@dataclass(frozen=True)
class TotalRow:
    """Count totals over several pairs (one destination, or the network)."""

    dst: str
    src: str
    maximum: int
    legitimate: int
    received: int
    oversupplied: int
    permitted: int
    forbidden: int

    def counts(self) -> dict[str, int]:
        return {
            "maximum": self.maximum,
            "legitimate": self.legitimate,
            "received": self.received,
            "oversupplied": self.oversupplied,
            "permitted": self.permitted,
            "forbidden": self.forbidden,
        }

    def to_json(self) -> dict:
        return {
            "src": self.src,
            "dst": self.dst,
            **self.counts(),
            "shares": dict(zip(
                ("legitimate", "oversupplied", "permitted_excess", "forbidden"),
                share_buckets(self),
            )),
        }


@dataclass(frozen=True)
class RelationTable:
    strategy: Strategy
    endpoints: tuple[str, ...]
    backbone_size: int
    pairs: tuple[PairMetrics, ...]
    dest_totals: tuple[TotalRow, ...]
    network_total: TotalRow

    def pair(self, src: str, dst: str) -> PairMetrics:
        for pm in self.pairs:
            if pm.src == src and pm.dst == dst:
                return pm
        raise UnknownNode(f"{src}->{dst}")

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "endpoints": list(self.endpoints),
            "backbone_size": self.backbone_size,
            "pairs": [pm.to_json() for pm in self.pairs],
            "dest_totals": [row.to_json() for row in self.dest_totals],
            "network_total": self.network_total.to_json(),
        }


# --- per-pair flow sets ------------------------------------------------------

def legitimate_set(matrix: CommMatrix, placement: Placement, src: str, dst: str) -> frozenset[int]:
    """Backbone flows the matrix specifies from src to dst."""
    return frozenset(
        can_id for can_id in placement.backbone
        if placement.source_gateway[can_id] == src and dst in placement.dest_gateways[can_id]
    )


def received_set(nfs: Iterable[NetworkFlow], src: str, dst: str) -> frozenset[int]:
    """Backbone flows whose carrying NF starts at src and reaches dst."""
    received: set[int] = set()
    for nf in nfs:
        if nf.source == src and dst in nf.dests:
            received.update(nf.carried)
    return frozenset(received)


def _permitted_by_src(matrix: CommMatrix, topo: Topology, placement: Placement,
                      nfs: Iterable[NetworkFlow], strategy: Strategy,
                      src: str) -> dict[int, frozenset[str]]:
    """can_id -> destinations the fabric would forward it to from src.

    A flow is admissible from src exactly when an NF originating at src has
    the same match key the flow would be emitted with there.
    """
    keyed = {nf.key.match_tuple(): nf for nf in nfs if nf.source == src}
    admissible: dict[int, frozenset[str]] = {}
    for can_id in placement.backbone:
        cf = matrix.by_can_id[can_id]
        nf = keyed.get(emission_key(cf, strategy, src, topo).match_tuple())
        if nf is not None:
            admissible[can_id] = nf.dests
    return admissible


def permitted_set(matrix: CommMatrix, topo: Topology, placement: Placement,
                  nfs: Iterable[NetworkFlow], strategy: Strategy | str,
                  src: str, dst: str) -> frozenset[int]:
    """Backbone flows the fabric would forward from src to dst if spoofed."""
    admissible = _permitted_by_src(matrix, topo, placement, tuple(nfs), Strategy(strategy), src)
    return frozenset(c for c, dests in admissible.items() if dst in dests)


# --- the relation table --------------------------------------------------------

def relation_table(matrix: CommMatrix, topo: Topology, strategy: Strategy | str,
                   placement: Placement | None = None,
                   nfs: tuple[NetworkFlow, ...] | None = None) -> RelationTable:
    """One PairMetrics per ordered endpoint pair, with per-destination and
    network totals."""
    strategy = Strategy(strategy)
    if placement is None:
        placement = place(matrix, topo)
    if nfs is None:
        nfs = derive_nfs(matrix, topo, placement, strategy)
    endpoints = topo.endpoints()
    backbone = frozenset(placement.backbone)
    maximum = len(backbone)

    received_by_src: dict[str, dict[str, set[int]]] = {e: {} for e in endpoints}
    for nf in nfs:
        for dst in nf.dests:
            received_by_src[nf.source].setdefault(dst, set()).update(nf.carried)
    admissible_by_src = {
        src: _permitted_by_src(matrix, topo, placement, nfs, strategy, src)
        for src in endpoints
    }

    pairs = []
    for dst in endpoints:
        for src in endpoints:
            if src == dst:
                continue
            legitimate = legitimate_set(matrix, placement, src, dst)
            received = frozenset(received_by_src[src].get(dst, ()))
            permitted = frozenset(
                c for c, dests in admissible_by_src[src].items() if dst in dests
            )
            pairs.append(PairMetrics(
                src=src,
                dst=dst,
                maximum=maximum,
                legitimate=legitimate,
                received=received,
                oversupplied=received - legitimate,
                permitted=permitted,
                forbidden=backbone - permitted,
            ))

    def total(rows: list[PairMetrics], dst: str, src: str) -> TotalRow:
        return TotalRow(
            dst=dst,
            src=src,
            maximum=sum(pm.maximum for pm in rows),
            legitimate=sum(len(pm.legitimate) for pm in rows),
            received=sum(len(pm.received) for pm in rows),
            oversupplied=sum(len(pm.oversupplied) for pm in rows),
            permitted=sum(len(pm.permitted) for pm in rows),
            forbidden=sum(len(pm.forbidden) for pm in rows),
        )

    dest_totals = tuple(
        total([pm for pm in pairs if pm.dst == dst], dst, "Total") for dst in endpoints
    )
    return RelationTable(
        strategy=strategy,
        endpoints=endpoints,
        backbone_size=maximum,
        pairs=tuple(pairs),
        dest_totals=dest_totals,
        network_total=total(pairs, "All", "Total"),
    )


# --- share computation (stacked percentage buckets) ------------------------------

def _bucket_counts(entry: PairMetrics | TotalRow) -> tuple[int, int, int, int, int]:
    counts = entry.counts()
    return (
        counts["maximum"],
        counts["legitimate"],
        counts["oversupplied"],
        counts["permitted"] - counts["received"],
        counts["forbidden"],
    )


def share_buckets(entry: PairMetrics | TotalRow) -> tuple[int, int, int, int]:
    """Integer percentages of (legitimate, oversupplied, permitted-excess,
    forbidden) relative to the maximum.

    Rounds half away from zero, then adjusts the largest bucket so the four
    buckets sum to exactly 100.  A zero maximum yields all zeros.
    """
    maximum, *buckets = _bucket_counts(entry)
    if maximum == 0:
        return (0, 0, 0, 0)
    raw = [Fraction(count * 100, maximum) for count in buckets]
    rounded = [int(f) + (1 if f - int(f) >= Fraction(1, 2) else 0) for f in raw]
    delta = 100 - sum(rounded)
    if delta:
        largest = max(range(4), key=lambda i: (raw[i], -i))
        rounded[largest] += delta
    return tuple(rounded)


def percent_display(count: int, maximum: int) -> int:
    """Round-half-away-from-zero percentage used in rendered tables."""
    if maximum == 0:
        return 0
    f = Fraction(count * 100, maximum)
    return int(f) + (1 if f - int(f) >= Fraction(1, 2) else 0)


# --- topic refinement / strategy monotonicity -------------------------------------

def topic_refinement_violations(matrix: CommMatrix) -> dict[int, frozenset[int]]:
    """Topics whose member flows span more than one domain."""
    domains_by_topic: dict[int, set[int]] = {}
    for flow in matrix.flows:
        domains_by_topic.setdefault(flow.topic, set()).add(flow.domain)
    return {
        topic: frozenset(domains)
        for topic, domains in sorted(domains_by_topic.items())
        if len(domains) > 1
    }


def monotonicity_report(matrix: CommMatrix, topo: Topology) -> dict:
    """Check permitted/received nesting across the three strategies.

    When every topic stays inside one domain, permitted(message) ⊆
    permitted(topic) ⊆ permitted(domain) holds per pair (received
    likewise).  Cross-domain topics break the guarantee; they are listed
    rather than silently accepted, together with any pair that violates the
    chain.
    """
    violations = topic_refinement_violations(matrix)
    placement = place(matrix, topo)
    tables = {
        s: relation_table(matrix, topo, s, placement=placement)
        for s in (Strategy.MESSAGE, Strategy.TOPIC, Strategy.DOMAIN)
    }
    pair_violations = []
    for pm_msg, pm_topic, pm_domain in zip(
        tables[Strategy.MESSAGE].pairs, tables[Strategy.TOPIC].pairs, tables[Strategy.DOMAIN].pairs
    ):
        for metric in ("permitted", "received"):
            msg = getattr(pm_msg, metric)
            topic = getattr(pm_topic, metric)
            domain = getattr(pm_domain, metric)
            if not (msg <= topic and topic <= domain):
                pair_violations.append({
                    "src": pm_msg.src,
                    "dst": pm_msg.dst,
                    "metric": metric,
                    "message_only": [f"0x{c:X}" for c in sorted(msg - topic)],
                    "topic_only": [f"0x{c:X}" for c in sorted(topic - domain)],
                })
    return {
        "topics_refine_domains": not violations,
        "cross_domain_topics": {
            str(topic): sorted(domains) for topic, domains in violations.items()
        },
        "pair_violations": pair_violations,
        "monotone": not pair_violations,
    }


# --- attack reachability -------------------------------------------------------

@dataclass(frozen=True)
class AttackReport:
    """Who could deliver one critical flow to its real receivers."""

    target_cf: int
    compromised_kind: str  # "ecu" or "gateway"
    compromised_name: str
    source_gateway: str
    dest_gateways: frozenset[str]
    bus_unpreventable: frozenset[str]
    backbone_permitted_senders: frozenset[str]
    reachable_dests: Mapping[str, frozenset[str]]
    oversupplied_receivers: frozenset[str]
    via_backbone: bool
    strict_ingress_blocks: bool

    def to_json(self) -> dict:
        return {
            "target_cf": f"0x{self.target_cf:X}",
            "compromised": {"kind": self.compromised_kind, "name": self.compromised_name},
            "source_gateway": self.source_gateway,
            "dest_gateways": sorted(self.dest_gateways),
            "bus_unpreventable": sorted(self.bus_unpreventable),
            "backbone_permitted_senders": sorted(self.backbone_permitted_senders),
            "reachable_dests": {
                node: sorted(dests) for node, dests in sorted(self.reachable_dests.items())
            },
            "oversupplied_receivers": sorted(self.oversupplied_receivers),
            "via_backbone": self.via_backbone,
            "strict_ingress_blocks": self.strict_ingress_blocks,
        }


def attack_reachability(matrix: CommMatrix, topo: Topology, strategy: Strategy | str,
                        target_cf: int, compromised: tuple[str, str]) -> AttackReport:
    """Reachability analysis for one flow under one compromised component.

    ``compromised`` is ("ecu", name) or ("gateway", name).  ECUs sharing a
    physical bus with the flow's sender (or with another receiver) can
    always deliver it, independent of the separation strategy; everything
    else must get past the backbone.
    """
    strategy = Strategy(strategy)
    cf = matrix.by_can_id.get(target_cf)
    if cf is None:
        raise UnknownCf(target_cf)
    kind, name = compromised
    placement = place(matrix, topo)
    nfs = derive_nfs(matrix, topo, placement, strategy)
    rules = synthesize_rules(nfs, topo)

    sender_bus = topo.ecu_location.get(cf.sender)
    unpreventable: set[str] = set()
    for ecu, bus in topo.ecu_location.items():
        if ecu == cf.sender:
            continue
        if sender_bus is not None and bus == sender_bus:
            unpreventable.add(ecu)
            continue
        for receiver in cf.receivers:
            if receiver != ecu and topo.ecu_location.get(receiver) == bus:
                unpreventable.add(ecu)
                break

    reachable = {
        node: inject(node, target_cf, strategy, rules, topo, matrix)
        for node in topo.endpoints()
    }
    dest_gws = placement.dest_gateways[target_cf]
    permitted_senders = frozenset(
        node for node, dests in reachable.items() if dests & dest_gws
    )
    source_gw = placement.source_gateway[target_cf]
    oversupplied = frozenset(
        dst for dst in topo.endpoints()
        if dst != source_gw and target_cf in received_set(nfs, source_gw, dst)
    ) - dest_gws

    if kind == "ecu":
        loc = topo.ecu_location.get(name)
        if loc is None and name not in topo.eth_hosts:
            raise UnknownNode(name)
        via_gateway = topo.node_for_ecu(name)
        via_backbone = bool(reachable[via_gateway] & dest_gws)
        strict_blocks = loc is None or loc != sender_bus
    elif kind == "gateway":
        if name not in topo.endpoints():
            raise UnknownNode(name)
        via_backbone = bool(reachable[name] & dest_gws)
        strict_blocks = False  # a compromised gateway is past the CAN-side check
    else:
        raise UnknownNode(f"{kind}:{name}")

    return AttackReport(
        target_cf=target_cf,
        compromised_kind=kind,
        compromised_name=name,
        source_gateway=source_gw,
        dest_gateways=dest_gws,
        bus_unpreventable=frozenset(unpreventable),
        backbone_permitted_senders=permitted_senders,
        reachable_dests=reachable,
        oversupplied_receivers=oversupplied,
        via_backbone=via_backbone,
        strict_ingress_blocks=strict_blocks,
    )


# --- brute-force oracle -----------------------------------------------------------

@dataclass(frozen=True)
class OracleResult:
    equal: bool
    discrepancies: tuple[dict, ...]

    def to_json(self) -> dict:
        return {"equal": self.equal, "discrepancies": list(self.discrepancies)}


def oracle_check(matrix: CommMatrix, topo: Topology, strategy: Strategy | str,
                 rules=None, max_backbone: int = ORACLE_DEFAULT_BOUND) -> OracleResult:
    """Rebuild the relation table from simulation alone and compare.

    Every legitimate emission is replayed through the fabric and every
    (node, flow) injection is probed; received and permitted sets must
    match the static table exactly.  Passing a hand-corrupted rule table
    makes the discrepancy list name the missing (pair, flow) entries.
    """
    strategy = Strategy(strategy)
    placement = place(matrix, topo)
    backbone = placement.backbone
    if len(backbone) > max_backbone:
        raise ValueError(
            f"{len(backbone)} backbone flows exceed the oracle bound {max_backbone}"
        )
    nfs = derive_nfs(matrix, topo, placement, strategy)
    if rules is None:
        rules = synthesize_rules(nfs, topo)
    static = relation_table(matrix, topo, strategy, placement=placement, nfs=nfs)

    sim_received: dict[tuple[str, str], set[int]] = {}
    for can_id in backbone:
        source = placement.source_gateway[can_id]
        for node, _ in simulate_emission(can_id, strategy, topo, matrix, nfs, rules):
            sim_received.setdefault((source, node), set()).add(can_id)

    sim_permitted: dict[tuple[str, str], set[int]] = {}
    for node in topo.endpoints():
        for can_id in backbone:
            for dst in inject(node, can_id, strategy, rules, topo, matrix):
                sim_permitted.setdefault((node, dst), set()).add(can_id)

    discrepancies = []
    for pm in static.pairs:
        pair = (pm.src, pm.dst)
        for metric, static_set, sim_set in (
            ("received", pm.received, frozenset(sim_received.get(pair, ()))),
            ("permitted", pm.permitted, frozenset(sim_permitted.get(pair, ()))),
        ):
            for can_id in sorted(static_set ^ sim_set):
                discrepancies.append({
                    "src": pm.src,
                    "dst": pm.dst,
                    "metric": metric,
                    "can_id": f"0x{can_id:X}",
                    "static": can_id in static_set,
                    "simulated": can_id in sim_set,
                })
    return OracleResult(equal=not discrepancies, discrepancies=tuple(discrepancies))


# --- rendering ---------------------------------------------------------------------

_COLUMNS = ("Received", "Oversupplied", "Permitted")


def render_relation_markdown(tables: Mapping[str, RelationTable]) -> str:
    """Markdown table: one Received/Oversupplied/Permitted column group per
    strategy, every cell as ``count (pct%)`` of the pair maximum."""
    strategies = list(tables)
    header = ["Dest.", "Src.", "Maximum", "Legitimate"]
    for strategy in strategies:
        prefix = f"{strategy.capitalize()}: " if len(strategies) > 1 else ""
        header.extend(prefix + column for column in _COLUMNS)
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join([" --- "] * len(header)) + "|",
    ]

    first = tables[strategies[0]]

    def cell(count: int, maximum: int) -> str:
        return f"{count} ({percent_display(count, maximum)}%)"

    def row(dst: str, src: str, rows_by_strategy) -> str:
        base = rows_by_strategy[strategies[0]]
        counts = base.counts()
        fields = [dst, src, str(counts["maximum"]), cell(counts["legitimate"], counts["maximum"])]
        for strategy in strategies:
            counts = rows_by_strategy[strategy].counts()
            fields.extend([
                cell(counts["received"], counts["maximum"]),
                cell(counts["oversupplied"], counts["maximum"]),
                cell(counts["permitted"], counts["maximum"]),
            ])
        return "| " + " | ".join(fields) + " |"

    for dst in first.endpoints:
        for src in first.endpoints:
            if src == dst:
                continue
            lines.append(row(dst, src, {s: tables[s].pair(src, dst) for s in strategies}))
        dest_rows = {
            s: next(r for r in tables[s].dest_totals if r.dst == dst) for s in strategies
        }
        lines.append(row(dst, "**Total**", dest_rows))
    lines.append(row("**All**", "**Total**", {s: tables[s].network_total for s in strategies}))
    return "\n".join(lines) + "\n"


def render_relation_csv(tables: Mapping[str, RelationTable]) -> str:
    lines = [
        "strategy,dst,src,maximum,legitimate,received,oversupplied,permitted,forbidden,"
        "share_legitimate,share_oversupplied,share_permitted_excess,share_forbidden"
    ]
    for strategy, table in tables.items():
        rows: list[PairMetrics | TotalRow] = list(table.pairs)
        rows.extend(table.dest_totals)
        rows.append(table.network_total)
        for row in rows:
            counts = row.counts()
            shares = share_buckets(row)
            lines.append(",".join([
                strategy, row.dst, row.src,
                str(counts["maximum"]), str(counts["legitimate"]), str(counts["received"]),
                str(counts["oversupplied"]), str(counts["permitted"]), str(counts["forbidden"]),
                str(shares[0]), str(shares[1]), str(shares[2]), str(shares[3]),
            ]))
    return "\n".join(lines) + "\n"


def render_shares_markdown(tables: Mapping[str, RelationTable]) -> str:
    """Markdown table of the four stacked share buckets, in percent of the
    pair maximum: legitimate / oversupplied / permitted-excess / forbidden."""
    strategies = list(tables)
    header = ["Dest.", "Src."]
    for strategy in strategies:
        prefix = f"{strategy.capitalize()}: " if len(strategies) > 1 else ""
        header.extend(prefix + name for name in ("Leg%", "Over%", "PermX%", "Forb%"))
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join([" --- "] * len(header)) + "|",
    ]

    def row(dst: str, src: str, rows_by_strategy) -> str:
        fields = [dst, src]
        for strategy in strategies:
            fields.extend(str(v) for v in share_buckets(rows_by_strategy[strategy]))
        return "| " + " | ".join(fields) + " |"

    first = tables[strategies[0]]
    for dst in first.endpoints:
        for src in first.endpoints:
            if src == dst:
                continue
            lines.append(row(dst, src, {s: tables[s].pair(src, dst) for s in strategies}))
        dest_rows = {
            s: next(r for r in tables[s].dest_totals if r.dst == dst) for s in strategies
        }
        lines.append(row(dst, "**Total**", dest_rows))
    lines.append(row("**All**", "**Total**", {s: tables[s].network_total for s in strategies}))
    return "\n".join(lines) + "\n"
