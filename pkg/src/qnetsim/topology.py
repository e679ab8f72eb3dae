"""Typed graph model of the optical quantum-network fabric.

Nodes are Q-nodes, entangled-photon sources (EPS), Bell-state-measurement
nodes, and all-optical switches; links are fiber spans with per-band
attenuation and a wavelength-channel grid.  The module owns the YAML
configuration format, validation, and channel occupancy bookkeeping.
Mutations go through the Topology object and bump its version counter;
path computation works on snapshots and never mutates.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import yaml

BANDS = ("O", "C")


class TopologyError(Exception):
    """Configuration or consistency error; message carries a document path."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class NodeKind(enum.Enum):
    QNODE = "QNode"
    EPS = "EPS"
    BSM = "BSMNode"
    SWITCH = "OpticalSwitch"


@dataclass(frozen=True, order=True)
class WavelengthChannel:
    """One grid slot. Total order: all O-band channels before C-band, then by index."""

    band_order: int = field(init=False, repr=False)
    band: str = "O"
    index: int = 0

    def __post_init__(self):
        if self.band not in BANDS:
            raise ValueError(f"unknown band {self.band!r}")
        if self.index < 0:
            raise ValueError("channel index must be >= 0")
        object.__setattr__(self, "band_order", BANDS.index(self.band))

    def __str__(self):
        return f"{self.band}:{self.index}"


@dataclass(frozen=True)
class Port:
    id: str
    tag: str = ""  # "<node>:<port>" naming the fibered remote end, or empty


@dataclass(frozen=True)
class FeatureSet:
    """Per-kind capabilities. Unused fields stay at their defaults."""

    pair_rate_cps: float = 0.0  # EPS
    wavelengths: int = 0  # EPS: even channel count N
    band: str = "C"  # EPS emission band
    detector: str = ""  # QNode: detector profile reference
    port_count: int = 0  # OpticalSwitch


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind
    site: str
    ports: tuple[Port, ...] = ()
    features: FeatureSet = field(default_factory=FeatureSet)
    insertion_loss_db: float = 0.0

    def port(self, port_id: str) -> Port:
        for p in self.ports:
            if p.id == port_id:
                return p
        raise TopologyError(f"node {self.id!r} has no port {port_id!r}")


@dataclass(frozen=True)
class Endpoint:
    node: str
    port: str


@dataclass
class FiberLink:
    """Fiber span between two (node, port) endpoints.

    The channel grid is ``total_wavelengths`` slots in each band listed in
    ``attenuation_db_per_km``; ``occupied`` tracks live allocations and
    ``extra_loss_db`` carries fault-injected excess loss (runtime only,
    never serialized).
    """

    id: str
    a: Endpoint
    b: Endpoint
    length_km: float
    attenuation_db_per_km: dict[str, float]
    total_wavelengths: int
    pdl_db: float = 0.0
    pmd_ps_per_sqrt_km: float = 0.0
    occupied: set[WavelengthChannel] = field(default_factory=set)
    extra_loss_db: float = 0.0

    @property
    def bands(self) -> tuple[str, ...]:
        return tuple(b for b in BANDS if b in self.attenuation_db_per_km)

    def grid(self) -> list[WavelengthChannel]:
        """All channels this link supports, in first-fit order."""
        return [
            WavelengthChannel(band=b, index=i)
            for b in self.bands
            for i in range(self.total_wavelengths)
        ]

    def other_end(self, node_id: str) -> Endpoint:
        if self.a.node == node_id:
            return self.b
        if self.b.node == node_id:
            return self.a
        raise TopologyError(f"link {self.id!r} is not incident to node {node_id!r}")


@dataclass
class Topology:
    """Mutable network state: nodes, links, occupancy, and EPS pair bookkeeping.

    version strictly increases on every mutation; reads never change it.
    """

    nodes: dict[str, Node] = field(default_factory=dict)
    links: dict[str, FiberLink] = field(default_factory=dict)
    version: int = 1
    eps_pairs_in_use: dict[str, set[int]] = field(default_factory=dict)
    active_routes: set[str] = field(default_factory=set)
    route_seq: int = 0

    # -- queries ------------------------------------------------------------

    def node(self, node_id: str) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise TopologyError(f"unknown node {node_id!r}") from None

    def link(self, link_id: str) -> FiberLink:
        try:
            return self.links[link_id]
        except KeyError:
            raise TopologyError(f"unknown link {link_id!r}") from None

    def neighbors(self, node_id: str) -> list[tuple[FiberLink, str]]:
        """All incident (link, peer-node) pairs; parallel links appear once each."""
        self.node(node_id)
        out = []
        for link in self.links.values():
            if link.a.node == node_id:
                out.append((link, link.b.node))
            elif link.b.node == node_id:
                out.append((link, link.a.node))
        return out

    def available_channels(self, link_id: str) -> list[WavelengthChannel]:
        """Free channels of the link's grid, in first-fit order."""
        link = self.link(link_id)
        return [ch for ch in link.grid() if ch not in link.occupied]

    def total_occupancy(self) -> int:
        return sum(len(link.occupied) for link in self.links.values())

    def occupancy_snapshot(self) -> dict[str, frozenset[WavelengthChannel]]:
        return {lid: frozenset(link.occupied) for lid, link in self.links.items()}

    # -- mutations ----------------------------------------------------------

    def _bump(self):
        self.version += 1

    def occupy(self, link_id: str, channel: WavelengthChannel) -> None:
        link = self.link(link_id)
        if channel.band not in link.bands or channel.index >= link.total_wavelengths:
            raise TopologyError(f"channel {channel} outside grid of link {link_id!r}")
        if channel in link.occupied:
            raise TopologyError(f"channel {channel} already occupied on link {link_id!r}")
        link.occupied.add(channel)
        self._bump()

    def release(self, link_id: str, channel: WavelengthChannel) -> None:
        link = self.link(link_id)
        if channel not in link.occupied:
            raise TopologyError(f"channel {channel} not occupied on link {link_id!r}")
        link.occupied.remove(channel)
        self._bump()

    def claim_eps_pair(self, eps_id: str, pair_index: int) -> None:
        in_use = self.eps_pairs_in_use.setdefault(eps_id, set())
        if pair_index in in_use:
            raise TopologyError(f"EPS {eps_id!r} pair {pair_index} already in use")
        in_use.add(pair_index)
        self._bump()

    def release_eps_pair(self, eps_id: str, pair_index: int) -> None:
        in_use = self.eps_pairs_in_use.get(eps_id, set())
        if pair_index not in in_use:
            raise TopologyError(f"EPS {eps_id!r} pair {pair_index} not in use")
        in_use.remove(pair_index)
        self._bump()

    def register_route(self, route_id: str) -> None:
        if route_id in self.active_routes:
            raise TopologyError(f"route {route_id!r} already active")
        self.active_routes.add(route_id)
        self._bump()

    def unregister_route(self, route_id: str) -> None:
        if route_id not in self.active_routes:
            raise TopologyError(f"unknown or already-released route {route_id!r}")
        self.active_routes.remove(route_id)
        self._bump()

    def add_node(self, node: Node) -> None:
        if node.id in self.nodes:
            raise TopologyError(f"duplicate node id {node.id!r}")
        self.nodes[node.id] = node
        self._bump()

    def remove_link(self, link_id: str) -> None:
        self.link(link_id)
        del self.links[link_id]
        self._bump()

    def add_link(self, link: FiberLink) -> None:
        if link.id in self.links:
            raise TopologyError(f"duplicate link id {link.id!r}")
        used = {(l.a.node, l.a.port) for l in self.links.values()}
        used |= {(l.b.node, l.b.port) for l in self.links.values()}
        for end in (link.a, link.b):
            self.node(end.node).port(end.port)
            if (end.node, end.port) in used:
                raise TopologyError(f"port {end.node}:{end.port} already used by another link")
        self.links[link.id] = link
        self._bump()


# -- channel pairing ---------------------------------------------------------


def eps_channel_pairs(features: FeatureSet) -> list[tuple[WavelengthChannel, WavelengthChannel]]:
    """Signal/idler channel pairs of an EPS: channel k pairs with N-1-k.

    The pairing is symmetric about the grid center, so the N/2 pairs
    partition the N channels.
    """
    n = features.wavelengths
    if n < 2 or n % 2 != 0:
        raise TopologyError(f"EPS wavelength count must be even and >= 2, got {n}")
    band = features.band
    return [
        (WavelengthChannel(band=band, index=k), WavelengthChannel(band=band, index=n - 1 - k))
        for k in range(n // 2)
    ]


# -- configuration format -----------------------------------------------------

_NODE_KEYS = {"id", "kind", "site", "insertion_loss_db", "ports", "features"}
_LINK_KEYS = {
    "id", "a", "b", "length_km", "attenuation_db_per_km",
    "total_wavelengths", "pdl_db", "pmd_ps_per_sqrt_km",
}
_KINDS = {k.value: k for k in NodeKind}


def _require(cond: bool, message: str, path: str):
    if not cond:
        raise TopologyError(message, path)


def _parse_endpoint(raw, path: str) -> Endpoint:
    _require(isinstance(raw, dict), "endpoint must be a map {node, port}", path)
    _require("node" in raw and "port" in raw, "endpoint needs 'node' and 'port'", path)
    return Endpoint(node=str(raw["node"]), port=str(raw["port"]))


def _parse_node(raw, path: str) -> Node:
    _require(isinstance(raw, dict), "node entry must be a map", path)
    unknown = set(raw) - _NODE_KEYS
    _require(not unknown, f"unknown node field(s) {sorted(unknown)}", path)
    for key in ("id", "kind", "site"):
        _require(key in raw, f"missing required field '{key}'", path)
    kind_raw = str(raw["kind"])
    _require(kind_raw in _KINDS, f"unknown node kind {kind_raw!r}", f"{path}.kind")
    kind = _KINDS[kind_raw]

    ports = []
    seen_ports = set()
    for i, praw in enumerate(raw.get("ports", []) or []):
        ppath = f"{path}.ports[{i}]"
        _require(isinstance(praw, dict) and "id" in praw, "port needs an 'id'", ppath)
        pid = str(praw["id"])
        _require(pid not in seen_ports, f"duplicate port id {pid!r}", ppath)
        seen_ports.add(pid)
        ports.append(Port(id=pid, tag=str(praw.get("tag", "") or "")))

    fraw = raw.get("features", {}) or {}
    _require(isinstance(fraw, dict), "features must be a map", f"{path}.features")
    features = FeatureSet(
        pair_rate_cps=float(fraw.get("pair_rate_cps", 0.0)),
        wavelengths=int(fraw.get("wavelengths", 0)),
        band=str(fraw.get("band", "C")),
        detector=str(fraw.get("detector", "")),
        port_count=int(fraw.get("port_count", 0)),
    )
    if kind is NodeKind.EPS:
        n = features.wavelengths
        _require(n >= 2 and n % 2 == 0,
                 f"EPS wavelength count must be even and >= 2, got {n}", f"{path}.features.wavelengths")
    _require(features.band in BANDS, f"unknown band {features.band!r}", f"{path}.features.band")

    return Node(
        id=str(raw["id"]),
        kind=kind,
        site=str(raw["site"]),
        ports=tuple(ports),
        features=features,
        insertion_loss_db=float(raw.get("insertion_loss_db", 0.0)),
    )


def _parse_link(raw, path: str) -> FiberLink:
    _require(isinstance(raw, dict), "link entry must be a map", path)
    unknown = set(raw) - _LINK_KEYS
    _require(not unknown, f"unknown link field(s) {sorted(unknown)}", path)
    for key in ("id", "a", "b", "length_km", "attenuation_db_per_km", "total_wavelengths"):
        _require(key in raw, f"missing required field '{key}'", path)

    atten_raw = raw["attenuation_db_per_km"]
    _require(isinstance(atten_raw, dict) and atten_raw,
             "attenuation_db_per_km must be a non-empty map of band -> dB/km",
             f"{path}.attenuation_db_per_km")
    atten = {}
    for band, value in atten_raw.items():
        _require(str(band) in BANDS, f"unknown band {band!r}", f"{path}.attenuation_db_per_km")
        v = float(value)
        _require(v >= 0.0, "attenuation must be >= 0", f"{path}.attenuation_db_per_km.{band}")
        atten[str(band)] = v

    length = float(raw["length_km"])
    _require(length > 0.0, "length_km must be > 0", f"{path}.length_km")
    total = int(raw["total_wavelengths"])
    _require(total >= 1, "total_wavelengths must be >= 1", f"{path}.total_wavelengths")

    return FiberLink(
        id=str(raw["id"]),
        a=_parse_endpoint(raw["a"], f"{path}.a"),
        b=_parse_endpoint(raw["b"], f"{path}.b"),
        length_km=length,
        attenuation_db_per_km=atten,
        total_wavelengths=total,
        pdl_db=float(raw.get("pdl_db", 0.0)),
        pmd_ps_per_sqrt_km=float(raw.get("pmd_ps_per_sqrt_km", 0.0)),
    )


def parse_tag(tag: str) -> Endpoint:
    """Parse a port tag '<node>:<port>' into an endpoint."""
    node, sep, port = tag.partition(":")
    if not sep or not node or not port:
        raise TopologyError(f"malformed port tag {tag!r} (expected 'node:port')")
    return Endpoint(node=node, port=port)


def load_topology(document: str) -> Topology:
    """Parse and validate a topology document; returns a Topology at version 1.

    Raises TopologyError with a path into the document on schema violations,
    duplicate ids, dangling references, and broken port tags.
    """
    try:
        raw = yaml.safe_load(document)
    except yaml.YAMLError as exc:
        raise TopologyError(f"not valid YAML: {exc}") from exc
    if raw is None:
        raw = {}
    _require(isinstance(raw, dict), "top level must be a map with 'nodes' and 'links'", "$")
    unknown = set(raw) - {"nodes", "links"}
    _require(not unknown, f"unknown top-level key(s) {sorted(unknown)}", "$")

    nodes: dict[str, Node] = {}
    for i, nraw in enumerate(raw.get("nodes", []) or []):
        node = _parse_node(nraw, f"$.nodes[{i}]")
        _require(node.id not in nodes, f"duplicate node id {node.id!r}", f"$.nodes[{i}].id")
        nodes[node.id] = node

    links: dict[str, FiberLink] = {}
    used_ports: dict[tuple[str, str], str] = {}
    for i, lraw in enumerate(raw.get("links", []) or []):
        link = _parse_link(lraw, f"$.links[{i}]")
        _require(link.id not in links, f"duplicate link id {link.id!r}", f"$.links[{i}].id")
        for side, end in (("a", link.a), ("b", link.b)):
            epath = f"$.links[{i}].{side}"
            _require(end.node in nodes, f"link references missing node {end.node!r}", epath)
            try:
                nodes[end.node].port(end.port)
            except TopologyError as exc:
                raise TopologyError(str(exc), epath) from None
            key = (end.node, end.port)
            _require(key not in used_ports,
                     f"port {end.node}:{end.port} already used by link {used_ports.get(key)!r}",
                     epath)
            used_ports[key] = link.id
        _require(link.a.node != link.b.node, "self-loop links are not allowed", f"$.links[{i}]")
        links[link.id] = link

    for node in nodes.values():
        for port in node.ports:
            if not port.tag:
                continue
            path = f"$.nodes[{node.id}].ports[{port.id}].tag"
            try:
                end = parse_tag(port.tag)
            except TopologyError as exc:
                raise TopologyError(str(exc), path) from None
            _require(end.node in nodes, f"tag references missing node {end.node!r}", path)
            try:
                nodes[end.node].port(end.port)
            except TopologyError as exc:
                raise TopologyError(str(exc), path) from None

    return Topology(nodes=nodes, links=links, version=1)


def locate_path_line(document: str, path: str) -> int | None:
    """Resolve an error path like '$.links[0].a' to a 1-based line number.

    Segments index sequences either by position or, for id-addressed paths
    like '$.nodes[eps-nu]', by matching the element's 'id' field.
    """
    import re

    if not path or path == "$":
        return 1
    try:
        root = yaml.compose(document)
    except yaml.YAMLError:
        return None
    node = root
    for segment in path.lstrip("$.").split("."):
        match = re.fullmatch(r"([^\[\]]+)(?:\[([^\]]+)\])?", segment)
        if match is None or node is None:
            return None
        key, selector = match.group(1), match.group(2)
        if not isinstance(node, yaml.MappingNode):
            return None
        node = next((v for k, v in node.value
                     if isinstance(k, yaml.ScalarNode) and k.value == key), None)
        if selector is not None:
            if not isinstance(node, yaml.SequenceNode):
                return None
            if selector.isdigit():
                index = int(selector)
                node = node.value[index] if index < len(node.value) else None
            else:
                node = next(
                    (item for item in node.value if isinstance(item, yaml.MappingNode)
                     and any(isinstance(k, yaml.ScalarNode) and k.value == "id"
                             and isinstance(v, yaml.ScalarNode) and v.value == selector
                             for k, v in item.value)), None)
    return None if node is None else node.start_mark.line + 1


def serialize_topology(topology: Topology) -> str:
    """Render the configuration back to YAML (runtime state is not serialized)."""
    doc = {
        "nodes": [
            {
                "id": n.id,
                "kind": n.kind.value,
                "site": n.site,
                "insertion_loss_db": n.insertion_loss_db,
                "ports": [{"id": p.id, "tag": p.tag} for p in n.ports],
                "features": _features_doc(n),
            }
            for n in topology.nodes.values()
        ],
        "links": [
            {
                "id": l.id,
                "a": {"node": l.a.node, "port": l.a.port},
                "b": {"node": l.b.node, "port": l.b.port},
                "length_km": l.length_km,
                "attenuation_db_per_km": dict(l.attenuation_db_per_km),
                "total_wavelengths": l.total_wavelengths,
                "pdl_db": l.pdl_db,
                "pmd_ps_per_sqrt_km": l.pmd_ps_per_sqrt_km,
            }
            for l in topology.links.values()
        ],
    }
    return yaml.safe_dump(doc, sort_keys=False)


def _features_doc(node: Node) -> dict:
    f = node.features
    if node.kind is NodeKind.EPS:
        return {"pair_rate_cps": f.pair_rate_cps, "wavelengths": f.wavelengths, "band": f.band}
    if node.kind is NodeKind.SWITCH:
        return {"port_count": f.port_count}
    return {"detector": f.detector}  # Q-nodes and BSM nodes both carry detectors
