"""Seeded generator for test-scale matrices and matching zone topologies.

Real vehicle matrices are proprietary, so analyses run on deterministic
synthetic stand-ins: pick a seed, get the same matrix and topology every
time.  Generated topics always stay inside one domain, which keeps the
strategy-nesting properties provable on generated inputs; cross-domain
topic counterexamples are built explicitly via ``assign_topics``.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .errors import InfeasibleParams
from .matrix import CommMatrix, ControlFlow, EcuRecord
from .topology import Link, Topology

SOMEIP_DOMAIN_LIMIT = 255  # generated domains must fit the 239.0.0.0/24 group range
CYCLE_CHOICES = (10, 20, 50, 100, 200, 500, 1000)


@dataclass(frozen=True)
class SynthParams:
    n_zones: int
    n_ecus: int
    n_flows: int
    n_domains: int
    n_topics: int
    max_receivers: int
    local_fraction: float


def _check_params(p: SynthParams) -> None:
    if p.n_zones < 1:
        raise InfeasibleParams("need at least one zone")
    if p.n_ecus < p.n_zones:
        raise InfeasibleParams(f"{p.n_ecus} ECUs cannot populate {p.n_zones} zones")
    if p.n_flows < 1:
        raise InfeasibleParams("need at least one flow")
    if p.max_receivers < 1:
        raise InfeasibleParams("need max_receivers >= 1")
    if p.max_receivers >= p.n_ecus:
        raise InfeasibleParams(
            f"max_receivers {p.max_receivers} needs more than {p.n_ecus} ECUs"
        )
    if not 1 <= p.n_domains <= SOMEIP_DOMAIN_LIMIT:
        raise InfeasibleParams(f"domains must stay within 1..{SOMEIP_DOMAIN_LIMIT}")
    if p.n_topics < p.n_domains or p.n_topics > 0xFFFF:
        raise InfeasibleParams("need at least one topic per domain")
    if not 0.0 <= p.local_fraction <= 1.0:
        raise InfeasibleParams("local_fraction must be within 0..1")


def _build_topology(p: SynthParams) -> tuple[Topology, dict[str, list[str]]]:
    zones = [f"Z{i + 1}" for i in range(p.n_zones)]
    gateways = {zone: f"ZC{zone}" for zone in zones}

    ecus_by_zone: dict[str, list[str]] = {zone: [] for zone in zones}
    for i in range(p.n_ecus):
        zone = zones[i % p.n_zones]
        ecus_by_zone[zone].append(f"E{i + 1:03d}")

    buses: dict[tuple[str, str], frozenset[str]] = {}
    for zone, ecus in ecus_by_zone.items():
        for chunk_start in range(0, len(ecus), 4):
            bus = f"{zone}.{chunk_start // 4 + 1}"
            buses[(zone, bus)] = frozenset(ecus[chunk_start:chunk_start + 4])

    if p.n_zones <= 2:
        switches = ("SW1",)
    else:
        switches = ("SW1", "SW2")
    links = []
    for i, zone in enumerate(zones):
        switch = switches[0] if i < (len(zones) + 1) // 2 else switches[-1]
        port = sum(1 for l in links if switch in (l.a, l.b)) + 1
        links.append(Link(a=gateways[zone], a_port=1, b=switch, b_port=port))
    if len(switches) == 2:
        p1 = sum(1 for l in links if switches[0] in (l.a, l.b)) + 1
        p2 = sum(1 for l in links if switches[1] in (l.a, l.b)) + 1
        links.append(Link(a=switches[0], a_port=p1, b=switches[1], b_port=p2))

    topo = Topology(
        zones=tuple(zones),
        gateways=gateways,
        buses=buses,
        eth_hosts=(),
        switches=switches,
        links=tuple(links),
    )
    return topo, ecus_by_zone


def _zone_pools(topo: Topology) -> dict[str, list[str]]:
    """Endpoint-name pools per zone; hosts form their own single-member zone."""
    pools: dict[str, list[str]] = {zone: [] for zone in topo.zones}
    for (zone, _), ecus in sorted(topo.buses.items()):
        pools[zone].extend(sorted(ecus))
    for zone in pools:
        pools[zone] = sorted(set(pools[zone]))
    for host in topo.eth_hosts:
        pools[host] = [host]
    return pools


def synth_matrix(params: SynthParams, seed: int,
                 topo: Topology | None = None) -> tuple[CommMatrix, Topology]:
    """Generate a (matrix, topology) pair; identical output for a fixed seed.

    When a topology is supplied, its buses and hosts define the ECU
    population and only the matrix is generated.
    """
    _check_params(params)
    rng = random.Random(seed)
    if topo is None:
        topo, _ = _build_topology(params)
    pools = _zone_pools(topo)
    all_ecus = sorted(name for pool in pools.values() for name in pool)
    if len(all_ecus) <= params.max_receivers:
        raise InfeasibleParams("topology hosts too few ECUs for max_receivers")

    zone_of = {name: zone for zone, pool in pools.items() for name in pool}
    ecu_domain = {name: rng.randint(1, params.n_domains) for name in all_ecus}
    topics_by_domain = {
        d: [t for t in range(1, params.n_topics + 1) if (t - 1) % params.n_domains == d - 1]
        for d in range(1, params.n_domains + 1)
    }

    multi_zone = len(pools) > 1
    flows = []
    for i in range(params.n_flows):
        can_id = 0x100 + i
        sender = rng.choice(all_ecus)
        zone = zone_of[sender]
        zone_mates = [e for e in pools[zone] if e != sender]
        others = [e for e in all_ecus if e != sender]
        outside = [e for e in others if zone_of[e] != zone]

        want_local = rng.random() < params.local_fraction and zone_mates
        if want_local:
            k = rng.randint(1, min(params.max_receivers, len(zone_mates)))
            receivers = rng.sample(zone_mates, k)
        else:
            k = rng.randint(1, params.max_receivers)
            receivers = rng.sample(others, k)
            if multi_zone and outside and not any(zone_of[r] != zone for r in receivers):
                receivers[rng.randrange(len(receivers))] = rng.choice(outside)

        domain = ecu_domain[sender]
        flows.append(ControlFlow(
            can_id=can_id,
            extended=can_id >= (1 << 11),
            sender=sender,
            receivers=frozenset(receivers),
            domain=domain,
            topic=rng.choice(topics_by_domain[domain]),
            priority=rng.randint(0, 7),
            payload_len=8,
            cycle_ms=rng.choice(CYCLE_CHOICES),
        ))

    ecu_records = []
    for name in all_ecus:
        loc = topo.ecu_location.get(name)
        ecu_records.append(EcuRecord(
            name=name,
            zone=loc[0] if loc else name,
            bus=loc[1] if loc else None,
            domain=ecu_domain[name],
        ))
    return CommMatrix(flows=tuple(flows), ecus=tuple(ecu_records)), topo
