"""Shortest-path routing and first-fit wavelength assignment.

Path computation is pure over a topology snapshot; allocation commits
channels atomically (all legs or none) through the topology's mutation
interface.  Edge weights combine span attenuation, endpoint insertion
loss, and optional PDL/PMD penalties.  Ties between equal-weight paths
break on the lexicographically smallest link-id sequence, which keeps
every route deterministic for a given topology state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from heapq import heappop, heappush

from .topology import (
    BANDS,
    FiberLink,
    Node,
    Topology,
    WavelengthChannel,
    eps_channel_pairs,
)


class RwaError(Exception):
    """Routing or assignment failure; nothing has been committed."""


class NoPathError(RwaError):
    pass


class BlockedError(RwaError):
    """No wavelength is free on every hop simultaneously."""


class NoFreePairError(RwaError):
    """Every signal/idler pair of the EPS is in use or blocked."""


@dataclass(frozen=True)
class Coefficients:
    """Weights for the optional PDL/PMD terms of the edge metric."""

    alpha_pdl: float = 0.0
    alpha_pmd: float = 0.0


@dataclass(frozen=True)
class LightPath:
    request_id: str
    hops: tuple[str, ...]
    channel: WavelengthChannel
    total_weight: float
    total_loss_db: float


@dataclass(frozen=True)
class EntanglementRoute:
    route_id: str
    eps: str
    pair_index: int
    leg_a: LightPath
    leg_b: LightPath
    clock_paths: tuple[LightPath, ...] = ()

    def light_paths(self) -> tuple[LightPath, ...]:
        return (self.leg_a, self.leg_b) + self.clock_paths


def edge_weight(link: FiberLink, band: str, endpoint_nodes: tuple[Node, Node],
                coefficients: Coefficients = Coefficients()) -> float:
    """dB-equivalent cost of one fiber span for the given band."""
    atten = link.attenuation_db_per_km[band]
    insertion = sum(n.insertion_loss_db for n in endpoint_nodes)
    return (
        link.length_km * atten
        + insertion
        + coefficients.alpha_pdl * link.pdl_db
        + coefficients.alpha_pmd * link.pmd_ps_per_sqrt_km * math.sqrt(link.length_km)
    )


def shortest_path(topology: Topology, src: str, dst: str, band: str,
                  coefficients: Coefficients = Coefficients()) -> list[str]:
    """Minimum-weight path as an ordered list of link ids.

    Dijkstra over the undirected multigraph, restricted to links that carry
    the band.  The heap key is (weight, link-id sequence), so among
    equal-weight paths the lexicographically smallest id sequence wins.
    """
    if src == dst:
        raise RwaError(f"src and dst must differ, got {src!r} twice")
    topology.node(src)
    topology.node(dst)

    settled: set[str] = set()
    heap: list[tuple[float, tuple[str, ...], str]] = [(0.0, (), src)]
    while heap:
        weight, path, node = heappop(heap)
        if node in settled:
            continue
        settled.add(node)
        if node == dst:
            return list(path)
        for link, peer in topology.neighbors(node):
            if peer in settled or band not in link.bands:
                continue
            w = edge_weight(link, band, (topology.node(node), topology.node(peer)), coefficients)
            heappush(heap, (weight + w, path + (link.id,), peer))
    raise NoPathError(f"no {band}-band path from {src!r} to {dst!r}")


def path_nodes(topology: Topology, start: str, hops: list[str] | tuple[str, ...]) -> list[str]:
    """Node sequence visited by a hop list starting at `start`."""
    nodes = [start]
    for link_id in hops:
        link = topology.link(link_id)
        nodes.append(link.other_end(nodes[-1]).node)
    return nodes


def path_loss_db(topology: Topology, start: str, hops: list[str] | tuple[str, ...],
                 band: str) -> float:
    """Current end-to-end loss: span attenuation plus traversed-node insertion losses.

    Includes fault-injected excess loss, so re-evaluating after a fault
    reflects the degraded budget.
    """
    loss = 0.0
    for link_id in hops:
        link = topology.link(link_id)
        loss += link.length_km * link.attenuation_db_per_km[band] + link.extra_loss_db
    for node_id in path_nodes(topology, start, hops):
        loss += topology.node(node_id).insertion_loss_db
    return loss


def path_weight(topology: Topology, start: str, hops: list[str] | tuple[str, ...], band: str,
                coefficients: Coefficients = Coefficients()) -> float:
    weight = 0.0
    node = start
    for link_id in hops:
        link = topology.link(link_id)
        peer = link.other_end(node).node
        weight += edge_weight(link, band, (topology.node(node), topology.node(peer)), coefficients)
        node = peer
    return weight


_Provisional = dict[str, set[WavelengthChannel]]


def _channel_free(topology: Topology, link_id: str, channel: WavelengthChannel,
                  provisional: _Provisional | None = None) -> bool:
    link = topology.link(link_id)
    if channel.band not in link.bands or channel.index >= link.total_wavelengths:
        return False
    if channel in link.occupied:
        return False
    if provisional and channel in provisional.get(link_id, ()):
        return False
    return True


def assign_first_fit(topology: Topology, hops: list[str] | tuple[str, ...], band: str,
                     provisional: _Provisional | None = None) -> WavelengthChannel:
    """Smallest channel of the band free on every hop."""
    if not hops:
        raise RwaError("cannot assign a channel to an empty hop list")
    limit = min(topology.link(h).total_wavelengths for h in hops)
    for index in range(limit):
        channel = WavelengthChannel(band=band, index=index)
        if all(_channel_free(topology, h, channel, provisional) for h in hops):
            return channel
    raise BlockedError(f"no free {band}-band channel on all of {list(hops)}")


def _claim(provisional: _Provisional, hops: tuple[str, ...], channel: WavelengthChannel):
    for h in hops:
        provisional.setdefault(h, set()).add(channel)


def _other_band(band: str) -> str:
    return BANDS[1] if band == BANDS[0] else BANDS[0]


def _build_leg(topology: Topology, request_id: str, start: str, hops: list[str],
               channel: WavelengthChannel, band: str, coefficients: Coefficients) -> LightPath:
    return LightPath(
        request_id=request_id,
        hops=tuple(hops),
        channel=channel,
        total_weight=path_weight(topology, start, hops, band, coefficients),
        total_loss_db=path_loss_db(topology, start, hops, band),
    )


def _plan_route(topology: Topology, eps_id: str, qnode1: str, qnode2: str,
                coefficients: Coefficients, request_id: str,
                provisional: _Provisional,
                leg_b_dst: str | None = None,
                include_clock: bool = False) -> EntanglementRoute:
    """Choose a free signal/idler pair and channels for both legs (no commit).

    Claims its picks in `provisional` so several planned routes within one
    atomic transaction cannot collide.
    """
    eps = topology.node(eps_id)
    band = eps.features.band
    hops_a = shortest_path(topology, eps_id, qnode1, band, coefficients)
    hops_b = shortest_path(topology, eps_id, leg_b_dst or qnode2, band, coefficients)

    in_use = topology.eps_pairs_in_use.get(eps_id, set())
    chosen = None
    for pair_index, (signal, idler) in enumerate(eps_channel_pairs(eps.features)):
        if pair_index in in_use:
            continue
        if all(_channel_free(topology, h, signal, provisional) for h in hops_a) and \
           all(_channel_free(topology, h, idler, provisional) for h in hops_b):
            chosen = (pair_index, signal, idler)
            break
    if chosen is None:
        raise NoFreePairError(f"no free signal/idler pair on EPS {eps_id!r} for this route")
    pair_index, signal, idler = chosen
    _claim(provisional, tuple(hops_a), signal)
    _claim(provisional, tuple(hops_b), idler)

    leg_a = _build_leg(topology, request_id, eps_id, hops_a, signal, band, coefficients)
    leg_b = _build_leg(topology, request_id, eps_id, hops_b, idler, band, coefficients)

    clock_paths: list[LightPath] = []
    if include_clock:
        # Clock pulses ride the opposite band over the same fiber paths.
        clock_band = _other_band(band)
        for hops in (hops_a, hops_b):
            channel = assign_first_fit(topology, hops, clock_band, provisional)
            _claim(provisional, tuple(hops), channel)
            clock_paths.append(
                _build_leg(topology, request_id, eps_id, hops, channel, clock_band, coefficients))

    return EntanglementRoute(
        route_id=request_id,
        eps=eps_id,
        pair_index=pair_index,
        leg_a=leg_a,
        leg_b=leg_b,
        clock_paths=tuple(clock_paths),
    )


def _commit(topology: Topology, routes: list[EntanglementRoute]) -> None:
    for route in routes:
        for leg in route.light_paths():
            for hop in leg.hops:
                topology.occupy(hop, leg.channel)
        topology.claim_eps_pair(route.eps, route.pair_index)
        topology.register_route(route.route_id)


def _next_route_id(topology: Topology, request_id: str) -> str:
    topology.route_seq += 1
    base = request_id or "route"
    return f"{base}#{topology.route_seq}"


def route_entanglement(topology: Topology, eps: str, qnode1: str, qnode2: str,
                       coefficients: Coefficients = Coefficients(),
                       request_id: str = "",
                       include_clock: bool = False) -> EntanglementRoute:
    """Route one EPS to two Q-nodes on a single signal/idler pair, atomically."""
    route_id = _next_route_id(topology, request_id)
    provisional: _Provisional = {}
    route = _plan_route(topology, eps, qnode1, qnode2, coefficients, route_id,
                        provisional, include_clock=include_clock)
    _commit(topology, [route])
    return route


def route_bsm(topology: Topology, eps1: str, eps2: str, bsm: str, qnode1: str, qnode2: str,
              coefficients: Coefficients = Coefficients(),
              request_id: str = "",
              include_clock: bool = False) -> tuple[EntanglementRoute, EntanglementRoute]:
    """Route two EPSs so their idlers meet at a BSM node; atomic across all four legs."""
    provisional: _Provisional = {}
    seq = _next_route_id(topology, request_id)
    route1 = _plan_route(topology, eps1, qnode1, qnode2, coefficients, f"{seq}/a",
                         provisional, leg_b_dst=bsm, include_clock=include_clock)
    route2 = _plan_route(topology, eps2, qnode2, qnode1, coefficients, f"{seq}/b",
                         provisional, leg_b_dst=bsm, include_clock=include_clock)
    _commit(topology, [route1, route2])
    return route1, route2


def release_route(topology: Topology, route: EntanglementRoute) -> None:
    """Free every channel of the route. Double release is an error."""
    topology.unregister_route(route.route_id)
    for leg in route.light_paths():
        for hop in leg.hops:
            topology.release(hop, leg.channel)
    topology.release_eps_pair(route.eps, route.pair_index)
