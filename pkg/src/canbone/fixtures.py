"""Bundled fixtures.

DF1 is a minimal three-zone network exercising every separation edge case:
backbone and local flows, a receiver in the sender's own zone, shared and
singleton topics.  DF2 mirrors a realistic four-zone backbone with an HPC
host and a two-switch chain; its matrix comes from the seeded synthesizer,
so it is identical on every run.
"""

from __future__ import annotations

from importlib import resources

from .matrix import CommMatrix, parse_matrix
from .synth import SynthParams, synth_matrix
from .topology import Topology, parse_topology

DF2_SEED = 7
DF2_PARAMS = SynthParams(
    n_zones=4,
    n_ecus=40,
    n_flows=242,
    n_domains=5,
    n_topics=60,
    max_receivers=4,
    local_fraction=0.2,
)


def _data_text(name: str) -> str:
    return resources.files("canbone.data").joinpath(name).read_text(encoding="utf-8")


def df1_matrix_text() -> str:
    return _data_text("df1_matrix.json")


def df1_topology_text() -> str:
    return _data_text("df1_topology.json")


def df2_topology_text() -> str:
    return _data_text("df2_topology.json")


def df1_matrix() -> CommMatrix:
    return parse_matrix(df1_matrix_text(), "json")


def df1_topology() -> Topology:
    return parse_topology(df1_topology_text())


def df2_topology() -> Topology:
    return parse_topology(df2_topology_text())


def df2() -> tuple[CommMatrix, Topology]:
    return synth_matrix(DF2_PARAMS, DF2_SEED, topo=df2_topology())
