"""Command-line front end.

One binary, subcommand style, configured by flags only so every run is
reproducible.  Exit codes: 0 ok, 1 input error, 2 oracle or invariant
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .codec import Strategy
from .errors import CanboneError, UnknownEcu
from .fabric import replay_trace
from .matrix import CommMatrix, parse_matrix, serialize_matrix
from .metrics import (
    attack_reachability,
    monotonicity_report,
    oracle_check,
    relation_table,
    render_relation_csv,
    render_relation_markdown,
    render_shares_markdown,
)
from .separation import derive_nfs, nf_stats, nfs_to_json, rules_to_json, synthesize_rules
from .synth import SynthParams, synth_matrix
from .topology import Topology, parse_topology, place, serialize_topology

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_ORACLE = 2

ALL_STRATEGIES = (Strategy.MESSAGE, Strategy.DOMAIN, Strategy.TOPIC)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)


def _load_matrix(path: str) -> CommMatrix:
    text = Path(path).read_text(encoding="utf-8")
    fmt = "csv" if path.endswith(".csv") else "json"
    return parse_matrix(text, fmt)


def _load_topology(path: str) -> Topology:
    return parse_topology(Path(path).read_text(encoding="utf-8"))


def _strategies(value: str) -> tuple[Strategy, ...]:
    if value == "all":
        return ALL_STRATEGIES
    return (Strategy(value),)


def _parse_can_id(value: str) -> int:
    return int(value, 0)


# --- subcommands -------------------------------------------------------------

def cmd_validate(args) -> int:
    diagnostics = []
    matrix = topo = None
    try:
        matrix = _load_matrix(args.matrix)
    except (CanboneError, OSError) as exc:
        diagnostics.append({"error": type(exc).__name__, "detail": str(exc)})
    try:
        topo = _load_topology(args.topology)
    except (CanboneError, OSError) as exc:
        diagnostics.append({"error": type(exc).__name__, "detail": str(exc)})
    if matrix is not None and topo is not None:
        for name in sorted(matrix.ecu_names()):
            try:
                topo.node_for_ecu(name)
            except UnknownEcu as exc:
                diagnostics.append({"error": "UnknownEcu", "detail": str(exc)})
                continue
            record = matrix.ecu_by_name.get(name)
            if record is None or record.zone is None:
                continue
            loc = topo.ecu_location.get(name)
            if loc is not None and (record.zone, record.bus) != loc:
                diagnostics.append({
                    "error": "EcuPlacementConflict",
                    "detail": f"{name}: matrix says {(record.zone, record.bus)}, topology says {loc}",
                })
            if loc is None and record.zone != name:
                diagnostics.append({
                    "error": "EcuPlacementConflict",
                    "detail": f"{name}: host ECUs must use their own name as zone",
                })
    if diagnostics:
        sys.stderr.write(_dump(diagnostics))
        return EXIT_INPUT
    sys.stdout.write("ok\n")
    return EXIT_OK


def cmd_derive(args) -> int:
    matrix = _load_matrix(args.matrix)
    topo = _load_topology(args.topology)
    placement = place(matrix, topo)
    out = {}
    for strategy in _strategies(args.strategy):
        nfs = derive_nfs(matrix, topo, placement, strategy)
        out[strategy.value] = nfs_to_json(strategy, nfs)
    _emit(_dump(out if args.strategy == "all" else out[args.strategy]), args.out)
    return EXIT_OK


def cmd_rules(args) -> int:
    matrix = _load_matrix(args.matrix)
    topo = _load_topology(args.topology)
    placement = place(matrix, topo)
    out = {}
    for strategy in _strategies(args.strategy):
        nfs = derive_nfs(matrix, topo, placement, strategy)
        out[strategy.value] = rules_to_json(strategy, synthesize_rules(nfs, topo))
    _emit(_dump(out if args.strategy == "all" else out[args.strategy]), args.out)
    return EXIT_OK


def cmd_analyze(args) -> int:
    matrix = _load_matrix(args.matrix)
    topo = _load_topology(args.topology)
    placement = place(matrix, topo)
    strategies = _strategies(args.strategy)
    tables = {}
    stats = {}
    for strategy in strategies:
        nfs = derive_nfs(matrix, topo, placement, strategy)
        tables[strategy.value] = relation_table(matrix, topo, strategy,
                                                placement=placement, nfs=nfs)
        stats[strategy.value] = nf_stats(nfs)

    if args.format == "md":
        lines = []
        for name in tables:
            lines.append(f"## Network flows ({name})\n")
            s = stats[name]
            lines.append(f"- NFs: {s.n_nfs} ({s.n_nfs_multi} carrying more than one flow)")
            lines.append(f"- flows per NF: min {s.min_cfs} / avg {s.avg_cfs:.2f} / max {s.max_cfs}")
            histogram = ", ".join(f"{k} dest: {v}" for k, v in sorted(s.dest_histogram.items()))
            lines.append(f"- destinations reached: {histogram or 'none'}\n")
        lines.append("## Communication relations\n")
        lines.append(render_relation_markdown(tables))
        lines.append("## Share buckets (% of maximum)\n")
        lines.append(render_shares_markdown(tables))
        text = "\n".join(lines)
    elif args.format == "csv":
        text = render_relation_csv(tables)
    else:
        doc = {
            "strategies": {
                name: {
                    "nf_stats": stats[name].to_json(),
                    "relation_table": tables[name].to_json(),
                }
                for name in tables
            }
        }
        if args.strategy == "all":
            doc["monotonicity"] = monotonicity_report(matrix, topo)
        text = _dump(doc)
    _emit(text, args.out)
    return EXIT_OK


def cmd_replay(args) -> int:
    matrix = _load_matrix(args.matrix)
    topo = _load_topology(args.topology)
    trace = Path(args.trace).read_text(encoding="utf-8")
    bus_map = json.loads(Path(args.bus_map).read_text(encoding="utf-8"))
    log = replay_trace(trace, bus_map, topo, matrix, Strategy(args.strategy),
                       filter_mode=args.filter, strict_ingress=args.strict_ingress)
    _emit(_dump(log.to_json_obj()), args.out)
    return EXIT_OK


def cmd_attack(args) -> int:
    matrix = _load_matrix(args.matrix)
    topo = _load_topology(args.topology)
    kind, _, name = args.compromise.partition(":")
    kind = {"gw": "gateway", "gateway": "gateway", "ecu": "ecu"}.get(kind)
    if kind is None or not name:
        raise CanboneError(f"--compromise takes ecu:<name> or gw:<name>, got {args.compromise!r}")
    reports = {}
    for strategy in _strategies(args.strategy):
        report = attack_reachability(matrix, topo, strategy, _parse_can_id(args.cf), (kind, name))
        reports[strategy.value] = report.to_json()
    _emit(_dump(reports if args.strategy == "all" else reports[args.strategy]), args.out)
    return EXIT_OK


def cmd_synth(args) -> int:
    params = SynthParams(
        n_zones=args.zones,
        n_ecus=args.ecus,
        n_flows=args.cfs,
        n_domains=args.domains,
        n_topics=args.topics,
        max_receivers=args.max_receivers,
        local_fraction=args.local_fraction,
    )
    matrix, topo = synth_matrix(params, args.seed)
    matrix_text = serialize_matrix(matrix, "json")
    topo_text = serialize_topology(topo)
    if args.out_matrix or args.out_topology:
        if args.out_matrix:
            Path(args.out_matrix).write_text(matrix_text, encoding="utf-8", newline="\n")
        if args.out_topology:
            Path(args.out_topology).write_text(topo_text, encoding="utf-8", newline="\n")
        return EXIT_OK
    sys.stdout.write(_dump({
        "matrix": json.loads(matrix_text),
        "topology": json.loads(topo_text),
    }))
    return EXIT_OK


def cmd_oracle(args) -> int:
    matrix = _load_matrix(args.matrix)
    topo = _load_topology(args.topology)
    results = {}
    failed = False
    for strategy in _strategies(args.strategy):
        result = oracle_check(matrix, topo, strategy, max_backbone=args.bound)
        results[strategy.value] = result.to_json()
        failed = failed or not result.equal
    _emit(_dump(results if args.strategy == "all" else results[args.strategy]), args.out)
    return EXIT_ORACLE if failed else EXIT_OK


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="canbone",
        description="Embed CAN control flows in a software-defined Ethernet "
                    "backbone and quantify what each separation strategy "
                    "lets through.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_io(p, strategy=True, with_all=True, fmt=False):
        p.add_argument("--matrix", required=True, help="communication matrix (.json or .csv)")
        p.add_argument("--topology", required=True, help="topology file (.json)")
        if strategy:
            choices = ["message", "domain", "topic"] + (["all"] if with_all else [])
            p.add_argument("--strategy", default="message", choices=choices)
        if fmt:
            p.add_argument("--format", default="json", choices=["json", "csv", "md"])
        p.add_argument("--out", default=None, help="output path (default: stdout)")

    p = sub.add_parser("validate", help="parse and cross-validate matrix + topology")
    p.add_argument("--matrix", required=True)
    p.add_argument("--topology", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("derive", help="derive network flows per strategy")
    add_io(p)
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("rules", help="synthesize per-switch flow rules")
    add_io(p)
    p.set_defaults(func=cmd_rules)

    p = sub.add_parser("analyze", help="NF statistics, relation table, share buckets")
    add_io(p, fmt=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("replay", help="replay a candump trace through the fabric")
    add_io(p, with_all=False)
    p.add_argument("--trace", required=True, help="candump-style trace file")
    p.add_argument("--bus-map", required=True, help="JSON: trace bus -> {gateway, bus}")
    p.add_argument("--filter", default="on", choices=["on", "off"],
                   help="CAN-side filtering at gateway egress")
    p.add_argument("--strict-ingress", action="store_true",
                   help="drop frames whose matrix sender is not on the ingress bus")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("attack", help="reachability of one flow under a compromise")
    add_io(p)
    p.add_argument("--cf", required=True, help="target CAN id (e.g. 0x100)")
    p.add_argument("--compromise", required=True, help="ecu:<name> or gw:<name>")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("synth", help="generate a seeded matrix + topology pair")
    p.add_argument("--zones", type=int, default=4)
    p.add_argument("--ecus", type=int, default=40)
    p.add_argument("--cfs", type=int, default=242)
    p.add_argument("--domains", type=int, default=5)
    p.add_argument("--topics", type=int, default=60)
    p.add_argument("--max-receivers", type=int, default=4)
    p.add_argument("--local-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-matrix", default=None)
    p.add_argument("--out-topology", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("oracle", help="compare the static table against simulation")
    add_io(p)
    p.add_argument("--bound", type=int, default=200,
                   help="max backbone flows the brute force will accept")
    p.set_defaults(func=cmd_oracle)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CanboneError as exc:
        sys.stderr.write(_dump([{"error": type(exc).__name__, "detail": str(exc)}]))
        return EXIT_INPUT
    except OSError as exc:
        sys.stderr.write(_dump([{"error": "IOError", "detail": str(exc)}]))
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
