"""Shared fixtures: small topology builders and the example fabric."""

from __future__ import annotations

from pathlib import Path

import pytest

from qnetsim.bus import Bus
from qnetsim.control_plane import QnetServer, SdnAgent, make_actor, run_discovery
from qnetsim.engine import Engine
from qnetsim.topology import (
    Endpoint,
    FeatureSet,
    FiberLink,
    Node,
    NodeKind,
    Port,
    Topology,
    load_topology,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def make_link(link_id: str, a: tuple[str, str], b: tuple[str, str], *,
              length_km: float = 1.0, atten: dict | None = None,
              total: int = 8, pdl: float = 0.0, pmd: float = 0.0) -> FiberLink:
    return FiberLink(
        id=link_id, a=Endpoint(*a), b=Endpoint(*b), length_km=length_km,
        attenuation_db_per_km=atten if atten is not None else {"O": 0.43, "C": 0.25},
        total_wavelengths=total, pdl_db=pdl, pmd_ps_per_sqrt_km=pmd,
    )


def star_nodes(n_wavelengths: int = 2, band: str = "C") -> list[Node]:
    """EPS and two Q-nodes hanging off one switch, tags all mutual."""
    return [
        Node("sw", NodeKind.SWITCH, "FNAL",
             ports=(Port("p1", "eps:out"), Port("p2", "q1:in"), Port("p3", "q2:in")),
             features=FeatureSet(port_count=8), insertion_loss_db=0.5),
        Node("eps", NodeKind.EPS, "FNAL", ports=(Port("out", "sw:p1"),),
             features=FeatureSet(pair_rate_cps=1e5, wavelengths=n_wavelengths, band=band),
             insertion_loss_db=0.3),
        Node("q1", NodeKind.QNODE, "FNAL", ports=(Port("in", "sw:p2"),),
             insertion_loss_db=0.2),
        Node("q2", NodeKind.QNODE, "FNAL", ports=(Port("in", "sw:p3"),),
             insertion_loss_db=0.2),
    ]


def star_topology(n_wavelengths: int = 2, band: str = "C", total: int = 8) -> Topology:
    topo = Topology()
    for node in star_nodes(n_wavelengths, band):
        topo.nodes[node.id] = node
    for link in (
        make_link("l-eps", ("sw", "p1"), ("eps", "out"), total=total),
        make_link("l-q1", ("sw", "p2"), ("q1", "in"), total=total),
        make_link("l-q2", ("sw", "p3"), ("q2", "in"), total=total),
    ):
        topo.links[link.id] = link
    return topo


def control_plane_for(nodes: list[Node], plant: list[FiberLink] | None = None):
    """Engine + bus + server + actors + agent, discovery already run."""
    engine = Engine()
    bus = Bus(engine)
    server = QnetServer(bus, engine)
    actors = [make_actor(n, bus, engine) for n in nodes]
    agent = SdnAgent(bus, engine, plant=plant)
    topo = run_discovery(bus, actors, agent, server)
    return engine, bus, server, agent, actors, topo


@pytest.fixture
def metro4_text() -> str:
    return (CONFIGS / "topology-metro4.yaml").read_text()


@pytest.fixture
def metro4(metro4_text) -> Topology:
    return load_topology(metro4_text)
