"""Control-plane entities and protocols: server, SDN agent, resources.

The server orchestrates discovery (resources register, the agent confirms
their claimed connectivity, a verified topology graph comes out) and the
entanglement-request lifecycle (analyze, route, verify paths, calibrate,
gate on READY signals, distribute, store measurements).  Everything talks
over the topic bus; handler execution is serialized by the event engine,
so per-request state never sees concurrent mutation.

The SDN controller southbound is an interface with a simulated
implementation; switch-rule updates are modeled as always succeeding while
the agent is up.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable

from .bus import Bus, BusMessage
from .engine import Engine, Event
from .phys import DetectorParams
from .rwa import (
    BlockedError,
    Coefficients,
    EntanglementRoute,
    NoPathError,
    RwaError,
    path_loss_db,
    path_nodes,
    route_bsm,
    route_entanglement,
    shortest_path,
)
from .topology import (
    FiberLink,
    Node,
    NodeKind,
    Topology,
    TopologyError,
    eps_channel_pairs,
    parse_tag,
)

log = logging.getLogger("qnetsim.control_plane")

# Bus topic grammar (normative).
TOPIC_REGISTER = "qnet/register"
TOPIC_TOPOLOGY_REQUEST = "qnet/topology/request"
TOPIC_TOPOLOGY_RESPONSE = "qnet/topology/response"
TOPIC_TOPOLOGY_CHANGE = "qnet/topology/change"
TOPIC_VERIFY_REQ = "qnet/verify/req"
TOPIC_VERIFY_RESP = "qnet/verify/resp"


def request_topic(request_id: str, phase: str) -> str:
    return f"qnet/req/{request_id}/{phase}"


class Kind:
    """Protocol message kinds; request kinds mirror the topic's last segment."""

    REGISTER = "register"
    TOPOLOGY_REQUEST = "topology_request"
    TOPOLOGY_RESPONSE = "topology_response"
    TOPOLOGY_CHANGE = "topology_change"
    VERIFY_REQUEST = "verify_request"
    VERIFY_RESPONSE = "verify_response"
    SUBMIT = "submit"
    ANALYZE = "analyze"
    PATHS = "paths"
    VERIFY = "verify"
    CALIBRATE = "calibrate"
    READY = "ready"
    START = "start"
    MEASUREMENT = "measurement"
    END = "end"
    STOP = "stop"
    STORED = "stored"


class ResourceState(enum.Enum):
    REGISTERED = "Registered"
    VERIFIED = "Verified"
    LOST = "Lost"


class RequestState(enum.Enum):
    SUBMITTED = "Submitted"
    ANALYZING = "Analyzing"
    PATHS_ESTABLISHED = "PathsEstablished"
    VERIFYING = "Verifying"
    CALIBRATING = "Calibrating"
    READY = "Ready"
    DISTRIBUTING = "Distributing"
    RECALIBRATING = "Recalibrating"
    COMPLETED = "Completed"
    FAILED = "Failed"


S = RequestState
ALLOWED_TRANSITIONS: dict[RequestState, frozenset[RequestState]] = {
    S.SUBMITTED: frozenset({S.ANALYZING, S.FAILED}),
    S.ANALYZING: frozenset({S.PATHS_ESTABLISHED, S.FAILED}),
    S.PATHS_ESTABLISHED: frozenset({S.VERIFYING, S.FAILED}),
    S.VERIFYING: frozenset({S.CALIBRATING, S.FAILED}),
    S.CALIBRATING: frozenset({S.READY, S.FAILED}),
    S.READY: frozenset({S.DISTRIBUTING, S.FAILED}),
    S.DISTRIBUTING: frozenset({S.RECALIBRATING, S.COMPLETED, S.FAILED}),
    S.RECALIBRATING: frozenset({S.DISTRIBUTING, S.FAILED}),
    S.COMPLETED: frozenset(),
    S.FAILED: frozenset(),
}

TERMINAL_STATES = frozenset({S.COMPLETED, S.FAILED})


class ProtocolError(Exception):
    pass


class DiscoveryError(ProtocolError):
    pass


class AgentUnreachable(ProtocolError):
    pass


@dataclass(frozen=True)
class Requirements:
    qubit_type: str = "TimeBin"  # TimeBin | Polarization
    rate: float = 1.0  # pairs/s
    duration: float = 1.0  # s
    via_bsm: bool = False

    def __post_init__(self):
        if self.qubit_type not in ("TimeBin", "Polarization"):
            raise ValueError(f"unknown qubit_type {self.qubit_type!r}")
        if self.rate <= 0 or self.duration <= 0:
            raise ValueError("rate and duration must be > 0")


@dataclass
class ResourceRecord:
    id: str
    kind: NodeKind
    features: dict
    connectivity: list[str]
    state: ResourceState = ResourceState.REGISTERED
    diagnostic: str = ""


@dataclass
class RequestRecord:
    id: str
    user: str
    qnode_a: str
    qnode_b: str
    requirements: Requirements
    state: RequestState = RequestState.SUBMITTED
    failure_reason: str = ""
    routes: list[EntanglementRoute] = field(default_factory=list)
    measurements: list[dict] = field(default_factory=list)
    transitions: list[dict] = field(default_factory=list)
    submitted_at: float = 0.0
    terminal_at: float | None = None
    released: bool = False
    data_loss: bool = False
    record_id: str | None = None

    @property
    def route(self) -> EntanglementRoute | None:
        return self.routes[0] if self.routes else None

    @property
    def terminal(self) -> bool:
        return self.state in TERMINAL_STATES


@dataclass
class ReadyLedger:
    request_id: str
    expected: frozenset[str]
    received: set[str] = field(default_factory=set)

    @property
    def complete(self) -> bool:
        return self.received == self.expected


@dataclass(frozen=True)
class ServerConfig:
    verify_tolerance_db: float = 1.0
    recal_period_s: float = 30.0
    ready_timeout_s: float = 10.0
    batch_interval_s: float = 1.0
    calibration_attempts: int = 3
    queue_requests: bool = False
    include_clock: bool = False
    coefficients: Coefficients = Coefficients()
    default_detector: DetectorParams = DetectorParams(efficiency=0.8, dark_rate_cps=100.0,
                                                      jitter_ps=50.0)


class MeasurementStore:
    """Record persistence behind the server; in-memory by default."""

    def __init__(self):
        self._records: dict[str, dict] = {}
        self._seq = 0

    def save(self, record: dict) -> str:
        self._seq += 1
        record_id = f"rec-{self._seq:04d}"
        self._records[record_id] = dict(record, record_id=record_id)
        return record_id

    def get(self, record_id: str) -> dict:
        return self._records[record_id]

    def ids(self) -> list[str]:
        return sorted(self._records)


# -- resource actors -----------------------------------------------------------

Calibrator = Callable[[str, Callable[[bool], None]], None]


def _instant_calibration(request_id: str, done: Callable[[bool], None]) -> None:
    done(True)


class ResourceActor:
    """A quantum network resource: loads its config and registers over the bus."""

    def __init__(self, node: Node, bus: Bus, engine: Engine,
                 calibrator: Calibrator | None = None):
        self.node = node
        self.bus = bus
        self.engine = engine
        self.calibrator = calibrator or _instant_calibration
        self.config_loaded = False
        self.up = True
        self.participating: dict[str, dict] = {}
        self._subscribe()

    @property
    def id(self) -> str:
        return self.node.id

    def _subscribe(self):
        self.bus.subscribe("qnet/req/+/paths", self._on_paths)
        self.bus.subscribe("qnet/req/+/calibrate", self._on_calibrate)
        self.bus.subscribe("qnet/req/+/start", self._on_start)
        self.bus.subscribe("qnet/req/+/stop", self._on_stop)

    def load_config(self):
        self.config_loaded = True

    def connectivity(self) -> list[str]:
        return [f"{p.id}={p.tag}" for p in self.node.ports if p.tag]

    def register(self):
        if not self.config_loaded:
            raise ProtocolError(f"resource {self.id} registering before loading its config")
        self.bus.publish(
            TOPIC_REGISTER, sender=self.id, kind=Kind.REGISTER,
            payload={
                "id": self.id,
                "kind": self.node.kind.value,
                "features": {
                    "pair_rate_cps": self.node.features.pair_rate_cps,
                    "wavelengths": self.node.features.wavelengths,
                    "band": self.node.features.band,
                    "detector": self.node.features.detector,
                    "port_count": self.node.features.port_count,
                },
                "connectivity": self.connectivity(),
            })

    # -- request participation ------------------------------------------------

    def _role_in(self, payload: dict) -> str | None:
        raise NotImplementedError

    def _on_paths(self, msg: BusMessage):
        if not self.up:
            return
        role = self._role_in(msg.payload)
        if role is None:
            return
        self.participating[msg.correlation_id] = {
            "role": role,
            "rate": float(msg.payload.get("rate", 0.0)),
            "duration": float(msg.payload.get("duration", 0.0)),
            "accumulated": 0.0,
            "batch_event": None,
            "ended": False,
        }

    def _on_calibrate(self, msg: BusMessage):
        if not self.up:
            return
        state = self.participating.get(msg.correlation_id)
        if state is None:
            return
        if state["batch_event"] is not None:  # pause batching during recalibration
            state["batch_event"].cancel()
            state["batch_event"] = None
        rid = msg.correlation_id

        def done(ok: bool):
            self.bus.publish(request_topic(rid, "ready"), sender=self.id, kind=Kind.READY,
                             correlation_id=rid, payload={"ok": ok})

        self.calibrator(rid, done)

    def _on_start(self, msg: BusMessage):
        pass

    def _on_stop(self, msg: BusMessage):
        self.participating.pop(msg.correlation_id, None)


class QNodeActor(ResourceActor):
    """Endpoint that accumulates measurement records during distribution.

    Records accrue at the requested rate; once rate x duration records are
    collected the END signal goes out.  A metrics hook (installed by the
    simulator) may attach physics observables to each batch.
    """

    def __init__(self, node: Node, bus: Bus, engine: Engine,
                 calibrator: Calibrator | None = None,
                 batch_interval_s: float = 1.0,
                 metrics_fn: Callable[[str, float], dict] | None = None):
        super().__init__(node, bus, engine, calibrator)
        self.batch_interval_s = batch_interval_s
        self.metrics_fn = metrics_fn

    def _role_in(self, payload: dict) -> str | None:
        if payload.get("qnode_a") == self.id:
            return "qnode_a"
        if payload.get("qnode_b") == self.id:
            return "qnode_b"
        return None

    def _on_start(self, msg: BusMessage):
        if not self.up:
            return
        state = self.participating.get(msg.correlation_id)
        if state is None or state["ended"]:
            return
        self._schedule_batch(msg.correlation_id)

    def _schedule_batch(self, rid: str):
        state = self.participating[rid]
        state["batch_event"] = self.engine.schedule(
            self.batch_interval_s, lambda: self._batch(rid),
            kind="MeasurementBatch", target=self.id)

    def _batch(self, rid: str):
        state = self.participating.get(rid)
        if state is None or not self.up:
            return
        count = state["rate"] * self.batch_interval_s
        state["accumulated"] += count
        payload = {"count": count, "accumulated": state["accumulated"]}
        if self.metrics_fn is not None:
            payload.update(self.metrics_fn(rid, self.batch_interval_s))
        self.bus.publish(request_topic(rid, "measurement"), sender=self.id,
                         kind=Kind.MEASUREMENT, correlation_id=rid, payload=payload)
        target = state["rate"] * state["duration"]
        if state["accumulated"] >= target - 1e-9:
            state["ended"] = True
            state["batch_event"] = None
            self.bus.publish(request_topic(rid, "end"), sender=self.id, kind=Kind.END,
                             correlation_id=rid, payload={})
        else:
            self._schedule_batch(rid)


class EpsActor(ResourceActor):
    def _role_in(self, payload: dict) -> str | None:
        if payload.get("eps") == self.id or payload.get("eps2") == self.id:
            return "eps"
        return None


class BsmActor(ResourceActor):
    def _role_in(self, payload: dict) -> str | None:
        return "bsm" if payload.get("bsm") == self.id else None


class SwitchActor(ResourceActor):
    def _role_in(self, payload: dict) -> str | None:
        return None


_ACTOR_CLASSES = {
    NodeKind.QNODE: QNodeActor,
    NodeKind.EPS: EpsActor,
    NodeKind.BSM: BsmActor,
    NodeKind.SWITCH: SwitchActor,
}


def make_actor(node: Node, bus: Bus, engine: Engine, **kwargs) -> ResourceActor:
    cls = _ACTOR_CLASSES[node.kind]
    if cls is not QNodeActor:
        kwargs.pop("batch_interval_s", None)
        kwargs.pop("metrics_fn", None)
    return cls(node, bus, engine, **kwargs)


# -- SDN agent -----------------------------------------------------------------

DEFAULT_LINK_ATTEN = {"O": 0.43, "C": 0.25}
DEFAULT_LINK_WAVELENGTHS = 8


def _endpoint_key(a: tuple[str, str], b: tuple[str, str]) -> frozenset:
    return frozenset((a, b))


class SdnAgent:
    """Tracks topology through the (simulated) SDN controller southbound.

    Link discovery pairs up the tag fields of the resources' optical port
    configurations; fiber attributes come from the plant database when the
    endpoint pair is known there, else conservative defaults.
    """

    def __init__(self, bus: Bus, engine: Engine,
                 plant: list[FiberLink] | None = None, name: str = "sdn-agent"):
        self.bus = bus
        self.engine = engine
        self.name = name
        self.up = True
        self.plant: dict[frozenset, FiberLink] = {}
        for link in plant or []:
            self.plant[_endpoint_key((link.a.node, link.a.port), (link.b.node, link.b.port))] = link
        self.configs: dict[str, Node] = {}
        self.discovered: dict[frozenset, FiberLink] = {}
        bus.subscribe(TOPIC_TOPOLOGY_REQUEST, self._on_topology_request)
        bus.subscribe(TOPIC_VERIFY_REQ, self._on_verify_request)

    def read_configs(self, nodes: list[Node]) -> None:
        """Southbound sweep: read every port tag and pair mutual claims into links."""
        if not self.up:
            raise AgentUnreachable("SDN agent is unreachable")
        self.configs = {n.id: n for n in nodes}
        self.discovered = {}
        for node in nodes:
            for port in node.ports:
                if not port.tag:
                    continue
                try:
                    remote = parse_tag(port.tag)
                except TopologyError:
                    continue
                remote_node = self.configs.get(remote.node)
                if remote_node is None:
                    continue
                try:
                    remote_port = remote_node.port(remote.port)
                except TopologyError:
                    continue
                # A mutual tag must point back; an empty remote tag is accepted.
                if remote_port.tag and remote_port.tag != f"{node.id}:{port.id}":
                    continue
                key = _endpoint_key((node.id, port.id), (remote.node, remote.port))
                if key in self.discovered:
                    continue
                self.discovered[key] = self._link_for(key, (node.id, port.id),
                                                      (remote.node, remote.port))

    def _link_for(self, key: frozenset, a: tuple[str, str], b: tuple[str, str]) -> FiberLink:
        proto = self.plant.get(key)
        if proto is not None:
            return FiberLink(
                id=proto.id, a=proto.a, b=proto.b, length_km=proto.length_km,
                attenuation_db_per_km=dict(proto.attenuation_db_per_km),
                total_wavelengths=proto.total_wavelengths,
                pdl_db=proto.pdl_db, pmd_ps_per_sqrt_km=proto.pmd_ps_per_sqrt_km,
            )
        ends = sorted([a, b])
        from .topology import Endpoint
        return FiberLink(
            id=f"disc-{ends[0][0]}.{ends[0][1]}--{ends[1][0]}.{ends[1][1]}",
            a=Endpoint(*ends[0]), b=Endpoint(*ends[1]),
            length_km=1.0, attenuation_db_per_km=dict(DEFAULT_LINK_ATTEN),
            total_wavelengths=DEFAULT_LINK_WAVELENGTHS,
        )

    def confirms(self, node_id: str, connectivity: list[str]) -> tuple[bool, list[str]]:
        """Check a resource's claimed port tags against the discovered links."""
        mismatches = []
        for claim in connectivity:
            port_id, _, tag = claim.partition("=")
            try:
                remote = parse_tag(tag)
            except TopologyError:
                mismatches.append(claim)
                continue
            key = _endpoint_key((node_id, port_id), (remote.node, remote.port))
            if key not in self.discovered:
                mismatches.append(claim)
        return (not mismatches, mismatches)

    def establish_route(self, routes: list[EntanglementRoute]) -> None:
        """Push switch rules for the routes; simulated southbound always succeeds."""
        if not self.up:
            raise AgentUnreachable("SDN agent is unreachable")

    def _on_topology_request(self, msg: BusMessage):
        if not self.up:
            return
        self.bus.publish(TOPIC_TOPOLOGY_RESPONSE, sender=self.name, kind=Kind.TOPOLOGY_RESPONSE,
                         payload={"links": sorted(l.id for l in self.discovered.values())})

    def _on_verify_request(self, msg: BusMessage):
        if not self.up:
            return
        resource = msg.payload["resource"]
        ok, mismatches = self.confirms(resource, msg.payload.get("connectivity", []))
        self.bus.publish(TOPIC_VERIFY_RESP, sender=self.name, kind=Kind.VERIFY_RESPONSE,
                         payload={"resource": resource, "ok": ok, "mismatches": mismatches})

    def notify_change(self, delta: dict) -> None:
        if not self.up:
            raise AgentUnreachable("SDN agent is unreachable")
        self.bus.publish(TOPIC_TOPOLOGY_CHANGE, sender=self.name, kind=Kind.TOPOLOGY_CHANGE,
                         payload=delta)


# -- Q-NET server ----------------------------------------------------------------


class QnetServer:
    """Logically centralized orchestrator of discovery and request lifecycles."""

    def __init__(self, bus: Bus, engine: Engine, config: ServerConfig | None = None,
                 store: MeasurementStore | None = None, name: str = "qnet-server"):
        self.bus = bus
        self.engine = engine
        self.config = config or ServerConfig()
        self.store = store or MeasurementStore()
        self.name = name
        self.topology: Topology | None = None
        self.resources: dict[str, ResourceRecord] = {}
        self.requests: dict[str, RequestRecord] = {}
        self.ledgers: dict[str, ReadyLedger] = {}
        self.agent: SdnAgent | None = None
        self.physics = None  # optional scenario physics binding
        self.queue: list[str] = []
        self.transition_hooks: list[Callable[[RequestRecord], None]] = []
        self._request_seq = 0
        self._calib_attempts: dict[str, int] = {}
        self._ends: dict[str, set[str]] = {}
        self._timers: dict[tuple[str, str], Event] = {}
        self._pending_verifies: set[str] = set()
        self._discovery_done = False

        bus.subscribe(TOPIC_REGISTER, self._on_register)
        bus.subscribe(TOPIC_TOPOLOGY_RESPONSE, self._on_topology_response)
        bus.subscribe(TOPIC_VERIFY_RESP, self._on_verify_response)
        bus.subscribe(TOPIC_TOPOLOGY_CHANGE, self._on_topology_change)
        bus.subscribe("qnet/req/+/submit", self._on_submit)
        bus.subscribe("qnet/req/+/ready", self._on_ready)
        bus.subscribe("qnet/req/+/measurement", self._on_measurement)
        bus.subscribe("qnet/req/+/end", self._on_end)

    # -- discovery --------------------------------------------------------------

    def _on_register(self, msg: BusMessage):
        p = msg.payload
        self.resources[p["id"]] = ResourceRecord(
            id=p["id"], kind=NodeKind(p["kind"]), features=dict(p.get("features", {})),
            connectivity=list(p.get("connectivity", [])),
        )

    def request_topology(self):
        self.bus.publish(TOPIC_TOPOLOGY_REQUEST, sender=self.name, kind=Kind.TOPOLOGY_REQUEST)

    def _on_topology_response(self, msg: BusMessage):
        self._pending_verifies = set(self.resources)
        for rid in sorted(self.resources):
            record = self.resources[rid]
            self.bus.publish(TOPIC_VERIFY_REQ, sender=self.name, kind=Kind.VERIFY_REQUEST,
                             payload={"resource": rid, "connectivity": record.connectivity})

    def _on_verify_response(self, msg: BusMessage):
        resource = msg.payload["resource"]
        record = self.resources.get(resource)
        if record is None:
            return
        if msg.payload["ok"]:
            record.state = ResourceState.VERIFIED
        else:
            record.state = ResourceState.LOST
            record.diagnostic = f"unconfirmed connectivity: {msg.payload['mismatches']}"
            log.warning("resource %s lost: %s", resource, record.diagnostic)
        self._pending_verifies.discard(resource)
        if not self._pending_verifies:
            self._build_topology()

    def _build_topology(self):
        assert self.agent is not None
        topo = Topology()
        for rid in sorted(self.resources):
            record = self.resources[rid]
            if record.state is ResourceState.VERIFIED:
                topo.nodes[rid] = self.agent.configs[rid]
        for key in sorted(self.agent.discovered, key=lambda k: self.agent.discovered[k].id):
            link = self.agent.discovered[key]
            if link.a.node in topo.nodes and link.b.node in topo.nodes:
                topo.links[link.id] = link
        topo.version = 1
        self.topology = topo
        self._discovery_done = True

    # -- topology changes ---------------------------------------------------------

    def _on_topology_change(self, msg: BusMessage):
        if self.topology is None:
            log.warning("topology change before discovery; ignored")
            return
        delta = msg.payload
        topo = self.topology
        known_links = set(topo.links)
        known_nodes = set(topo.nodes)
        for lid in delta.get("remove_links", []):
            if lid not in known_links:
                log.warning("change rejected: unknown link %s", lid)
                return
        for nid in delta.get("remove_nodes", []):
            if nid not in known_nodes:
                log.warning("change rejected: unknown node %s", nid)
                return
        for item in delta.get("update_links", []):
            if item.get("id") not in known_links:
                log.warning("change rejected: unknown link %s", item.get("id"))
                return

        removed: set[str] = set()
        updated: set[str] = set()
        try:
            for nid in delta.get("remove_nodes", []):
                for link, _peer in topo.neighbors(nid):
                    removed.add(link.id)
                del topo.nodes[nid]
                topo._bump()
            for lid in delta.get("remove_links", []):
                removed.add(lid)
            for lid in removed:
                if lid in topo.links:
                    topo.remove_link(lid)
            for node in delta.get("add_nodes", []):
                topo.add_node(node)
                self.resources[node.id] = ResourceRecord(
                    id=node.id, kind=node.kind, features={}, connectivity=[],
                    state=ResourceState.REGISTERED)
            for link in delta.get("add_links", []):
                topo.add_link(link)
            for item in delta.get("update_links", []):
                link = topo.link(item["id"])
                link.extra_loss_db += float(item.get("extra_loss_db", 0.0))
                topo._bump()
                updated.add(link.id)
        except TopologyError:
            # Malformed additions (duplicate ids, taken ports) must not take the
            # control plane down; keep what applied and fall through to the
            # request-impact scan.
            log.exception("topology change only partially applied")

        for record in list(self.requests.values()):
            if record.terminal or not record.routes:
                continue
            hops = {h for route in record.routes for leg in route.light_paths() for h in leg.hops}
            if hops & removed:
                self._fail(record, "route_lost")
            elif hops & updated and record.state is RequestState.DISTRIBUTING:
                self._begin_recalibration(record)

    # -- request lifecycle ----------------------------------------------------------

    def submit(self, user: str, qnode_a: str, qnode_b: str, requirements: Requirements,
               request_id: str | None = None) -> RequestRecord:
        self._request_seq += 1
        rid = request_id or f"req-{self._request_seq:04d}"
        if rid in self.requests:
            raise ProtocolError(f"duplicate request id {rid!r}")
        record = RequestRecord(id=rid, user=user, qnode_a=qnode_a, qnode_b=qnode_b,
                               requirements=requirements, submitted_at=self.engine.now)
        record.transitions.append({"t": self.engine.now, "state": record.state.value, "reason": ""})
        self.requests[rid] = record
        for hook in self.transition_hooks:
            hook(record)
        self.bus.publish(request_topic(rid, "submit"), sender=f"user:{user}", kind=Kind.SUBMIT,
                         correlation_id=rid,
                         payload={"qnode_a": qnode_a, "qnode_b": qnode_b,
                                  "qubit_type": requirements.qubit_type,
                                  "rate": requirements.rate,
                                  "duration": requirements.duration})
        return record

    def _transition(self, record: RequestRecord, state: RequestState, reason: str = ""):
        if state not in ALLOWED_TRANSITIONS[record.state]:
            raise ProtocolError(f"illegal transition {record.state.value} -> {state.value} "
                                f"for request {record.id}")
        record.state = state
        record.transitions.append({"t": self.engine.now, "state": state.value, "reason": reason})
        if state in TERMINAL_STATES:
            record.terminal_at = self.engine.now
        for hook in self.transition_hooks:
            hook(record)

    def _detector_efficiency(self, qnode_id: str) -> float:
        if self.physics is not None:
            return self.physics.detector_for(qnode_id).efficiency
        return self.config.default_detector.efficiency

    def _leg_feasibility(self, eps: Node, qnode_id: str) -> tuple[list[str], float] | None:
        assert self.topology is not None
        try:
            hops = shortest_path(self.topology, eps.id, qnode_id, eps.features.band,
                                 self.config.coefficients)
        except RwaError:
            return None
        loss = path_loss_db(self.topology, eps.id, hops, eps.features.band)
        return hops, loss

    def _eps_has_free_pair(self, eps: Node) -> bool:
        in_use = self.topology.eps_pairs_in_use.get(eps.id, set()) if self.topology else set()
        return len(in_use) < len(eps_channel_pairs(eps.features))

    def _choose_eps(self, record: RequestRecord) -> str | None:
        """Feasibility filter then min summed leg loss, EPS id as tie-break."""
        assert self.topology is not None
        req = record.requirements
        candidates = []
        for eps_id in sorted(self.topology.nodes):
            eps = self.topology.nodes[eps_id]
            if eps.kind is not NodeKind.EPS or not self._eps_has_free_pair(eps):
                continue
            leg_a = self._leg_feasibility(eps, record.qnode_a)
            leg_b = self._leg_feasibility(eps, record.qnode_b)
            if leg_a is None or leg_b is None:
                continue
            t_a = 10.0 ** (-leg_a[1] / 10.0) * self._detector_efficiency(record.qnode_a)
            t_b = 10.0 ** (-leg_b[1] / 10.0) * self._detector_efficiency(record.qnode_b)
            if eps.features.pair_rate_cps * t_a * t_b < req.rate:
                continue
            candidates.append((leg_a[1] + leg_b[1], eps_id))
        if not candidates:
            return None
        return min(candidates)[1]

    def _choose_bsm_set(self, record: RequestRecord) -> tuple[str, str, str] | None:
        """Deterministic (eps1, eps2, bsm) selection for BSM-mediated requests."""
        assert self.topology is not None
        topo = self.topology
        eps_ids = [n for n in sorted(topo.nodes) if topo.nodes[n].kind is NodeKind.EPS
                   and self._eps_has_free_pair(topo.nodes[n])]
        bsm_ids = [n for n in sorted(topo.nodes) if topo.nodes[n].kind is NodeKind.BSM]
        best = None
        for bsm in bsm_ids:
            for e1 in eps_ids:
                for e2 in eps_ids:
                    if e1 == e2:
                        continue
                    legs = [
                        self._leg_feasibility(topo.nodes[e1], record.qnode_a),
                        self._leg_feasibility(topo.nodes[e1], bsm),
                        self._leg_feasibility(topo.nodes[e2], record.qnode_b),
                        self._leg_feasibility(topo.nodes[e2], bsm),
                    ]
                    if any(l is None for l in legs):
                        continue
                    score = (sum(l[1] for l in legs), e1, e2, bsm)
                    if best is None or score < best:
                        best = score
        if best is None:
            return None
        return best[1], best[2], best[3]

    def _on_submit(self, msg: BusMessage):
        record = self.requests.get(msg.correlation_id)
        if record is None or record.terminal:
            return
        self._transition(record, RequestState.ANALYZING)
        self._try_allocate(record)

    def _try_allocate(self, record: RequestRecord):
        if self.topology is None:
            return self._fail(record, "no_eps")
        for qnode in (record.qnode_a, record.qnode_b):
            res = self.resources.get(qnode)
            if qnode not in self.topology.nodes or res is None or \
                    res.state is not ResourceState.VERIFIED:
                return self._fail(record, "unverified_qnode")

        req = record.requirements
        analyze_payload: dict = {}
        try:
            if req.via_bsm:
                chosen = self._choose_bsm_set(record)
                if chosen is None:
                    return self._maybe_queue_or_fail(record)
                eps1, eps2, bsm = chosen
                routes = route_bsm(self.topology, eps1, eps2, bsm,
                                   record.qnode_a, record.qnode_b,
                                   self.config.coefficients, request_id=record.id,
                                   include_clock=self.config.include_clock)
                record.routes = list(routes)
                analyze_payload = {"eps": eps1, "eps2": eps2, "bsm": bsm}
            else:
                eps_id = self._choose_eps(record)
                if eps_id is None:
                    return self._maybe_queue_or_fail(record)
                route = route_entanglement(self.topology, eps_id,
                                           record.qnode_a, record.qnode_b,
                                           self.config.coefficients, request_id=record.id,
                                           include_clock=self.config.include_clock)
                record.routes = [route]
                analyze_payload = {"eps": eps_id}
        except (BlockedError, NoPathError, RwaError):
            return self._fail(record, "blocked")

        record.released = False
        try:
            assert self.agent is not None
            self.agent.establish_route(record.routes)
        except (AgentUnreachable, AssertionError):
            return self._fail(record, "blocked")

        rid = record.id
        self._transition(record, RequestState.PATHS_ESTABLISHED)
        self.bus.publish(request_topic(rid, "analyze"), sender=self.name, kind=Kind.ANALYZE,
                         correlation_id=rid, payload=analyze_payload)
        legs = [{"hops": list(leg.hops), "channel": str(leg.channel),
                 "loss_db": leg.total_loss_db}
                for route in record.routes for leg in route.light_paths()]
        self.bus.publish(request_topic(rid, "paths"), sender=self.name, kind=Kind.PATHS,
                         correlation_id=rid,
                         payload={**analyze_payload,
                                  "qnode_a": record.qnode_a, "qnode_b": record.qnode_b,
                                  "rate": req.rate, "duration": req.duration, "legs": legs})
        self._transition(record, RequestState.VERIFYING)
        # Probes run after the paths notification has propagated.
        self.engine.schedule(2 * self.bus.latency_s, lambda: self._verify_paths(record),
                             kind="Timer", target=rid)

    def _maybe_queue_or_fail(self, record: RequestRecord):
        if self.config.queue_requests:
            # Stays in Analyzing; retried in arrival order when resources free up.
            self.queue.append(record.id)
            return
        self._fail(record, "no_eps")

    def _verify_paths(self, record: RequestRecord):
        """Loss-budget probes in both directions along every leg."""
        if record.terminal or self.topology is None:
            return
        rid = record.id
        results = []
        for route in record.routes:
            for leg in route.light_paths():
                try:
                    measured = path_loss_db(self.topology, route.eps, leg.hops, leg.channel.band)
                except TopologyError:
                    return self._fail(record, "verification")
                results.append({"hops": list(leg.hops), "expected_db": leg.total_loss_db,
                                "measured_db": measured})
                if abs(measured - leg.total_loss_db) > self.config.verify_tolerance_db:
                    self.bus.publish(request_topic(rid, "verify"), sender=self.name,
                                     kind=Kind.VERIFY, correlation_id=rid,
                                     payload={"ok": False, "probes": results})
                    return self._fail(record, "verification")
        self.bus.publish(request_topic(rid, "verify"), sender=self.name, kind=Kind.VERIFY,
                         correlation_id=rid, payload={"ok": True, "probes": results})
        self._transition(record, RequestState.CALIBRATING)
        self._calib_attempts[rid] = 0
        self._begin_calibration(record)

    def _expected_entities(self, record: RequestRecord) -> frozenset[str]:
        expected = {record.qnode_a, record.qnode_b}
        for route in record.routes:
            expected.add(route.eps)
        if record.requirements.via_bsm and record.routes:
            # Both idler legs terminate on the BSM node.
            bsm_leg = record.routes[0].leg_b
            ends = path_nodes_of_leg(self.topology, record.routes[0].eps, bsm_leg)
            expected.add(ends[-1])
        return frozenset(expected)

    def _begin_calibration(self, record: RequestRecord):
        rid = record.id
        self._calib_attempts[rid] = self._calib_attempts.get(rid, 0) + 1
        self.ledgers[rid] = ReadyLedger(request_id=rid, expected=self._expected_entities(record))
        self.bus.publish(request_topic(rid, "calibrate"), sender=self.name, kind=Kind.CALIBRATE,
                         correlation_id=rid, payload={"attempt": self._calib_attempts[rid]})
        self._arm_timer(rid, "ready_timeout", self.config.ready_timeout_s,
                        lambda: self._ready_timeout(record))

    def _begin_recalibration(self, record: RequestRecord):
        self._transition(record, RequestState.RECALIBRATING)
        self._calib_attempts[record.id] = 0
        self._begin_calibration(record)

    def _arm_timer(self, rid: str, name: str, delay: float, fn: Callable[[], None]):
        self._cancel_timer(rid, name)
        self._timers[(rid, name)] = self.engine.schedule(delay, fn, kind="Timer", target=rid)

    def _cancel_timer(self, rid: str, name: str):
        event = self._timers.pop((rid, name), None)
        if event is not None:
            event.cancel()

    def _ready_timeout(self, record: RequestRecord):
        if record.terminal:
            return
        ledger = self.ledgers.get(record.id)
        if ledger is not None and not ledger.complete:
            self._fail(record, "timeout")

    def _on_ready(self, msg: BusMessage):
        record = self.requests.get(msg.correlation_id)
        ledger = self.ledgers.get(msg.correlation_id)
        if record is None or record.terminal or ledger is None:
            return
        if record.state not in (RequestState.CALIBRATING, RequestState.RECALIBRATING):
            return
        if msg.sender not in ledger.expected:
            log.warning("READY from non-participant %s for %s ignored", msg.sender, record.id)
            return
        if not msg.payload.get("ok", True):
            if self._calib_attempts.get(record.id, 0) >= self.config.calibration_attempts:
                return self._fail(record, "calibration")
            return self._begin_calibration(record)
        ledger.received.add(msg.sender)
        if ledger.complete:
            self._cancel_timer(record.id, "ready_timeout")
            if record.state is RequestState.CALIBRATING:
                self._transition(record, RequestState.READY)
            self._start_distribution(record)

    def _start_distribution(self, record: RequestRecord):
        rid = record.id
        self.bus.publish(request_topic(rid, "start"), sender=self.name, kind=Kind.START,
                         correlation_id=rid, payload={})
        self._transition(record, RequestState.DISTRIBUTING)
        self._ends.setdefault(rid, set())
        self._arm_timer(rid, "recal", self.config.recal_period_s,
                        lambda: self._recal_due(record))

    def _recal_due(self, record: RequestRecord):
        if record.state is RequestState.DISTRIBUTING:
            self._begin_recalibration(record)

    def _on_measurement(self, msg: BusMessage):
        record = self.requests.get(msg.correlation_id)
        if record is None or record.terminal:
            return
        if msg.sender not in (record.qnode_a, record.qnode_b):
            log.warning("measurement from non-participant %s ignored", msg.sender)
            return
        record.measurements.append({"t": self.engine.now, "sender": msg.sender, **msg.payload})

    def _on_end(self, msg: BusMessage):
        record = self.requests.get(msg.correlation_id)
        if record is None:
            return
        self.collect_end_signals(record, msg.sender)

    def collect_end_signals(self, record: RequestRecord, endpoint: str) -> None:
        """Track END signals; both Q-node ENDs stop the EPS and complete the request."""
        if record.terminal:
            return
        if endpoint not in (record.qnode_a, record.qnode_b):
            log.warning("END from non-participant %s for %s ignored", endpoint, record.id)
            return
        ends = self._ends.setdefault(record.id, set())
        ends.add(endpoint)
        if ends != {record.qnode_a, record.qnode_b}:
            return
        rid = record.id
        self.bus.publish(request_topic(rid, "stop"), sender=self.name, kind=Kind.STOP,
                         correlation_id=rid, payload={})
        self._release(record)
        self._cancel_timer(rid, "recal")
        self._cancel_timer(rid, "ready_timeout")
        self._transition(record, RequestState.COMPLETED)
        self.store_measurements(record)
        self._drain_queue()

    def _release(self, record: RequestRecord):
        if record.released or self.topology is None:
            return
        for route in record.routes:
            release_route_safe(self.topology, route)
        record.released = True

    def _fail(self, record: RequestRecord, reason: str):
        if record.state in (RequestState.DISTRIBUTING, RequestState.RECALIBRATING):
            # The EPS is live; stop it (and the Q-node batching) on the way down.
            self.bus.publish(request_topic(record.id, "stop"), sender=self.name,
                             kind=Kind.STOP, correlation_id=record.id, payload={})
        self._release(record)
        self._cancel_timer(record.id, "recal")
        self._cancel_timer(record.id, "ready_timeout")
        self._transition(record, RequestState.FAILED, reason)
        record.failure_reason = reason
        self.store_measurements(record)
        self._drain_queue()

    def _drain_queue(self):
        if not self.queue:
            return
        rid = self.queue.pop(0)
        record = self.requests.get(rid)
        if record is not None and not record.terminal:
            self._try_allocate(record)

    # -- persistence -------------------------------------------------------------

    def store_measurements(self, record: RequestRecord) -> str | None:
        """Persist the terminal record; storage failure degrades, never fails."""
        if not record.terminal:
            raise ProtocolError("cannot store a non-terminal request")
        trace = [{"t": m.t, "kind": m.kind, "sender": m.sender, "topic": m.topic}
                 for m in self.bus.log if m.correlation_id == record.id]
        measurements = [] if record.state is RequestState.FAILED else list(record.measurements)
        doc = {
            "request_id": record.id,
            "user": record.user,
            "qnode_a": record.qnode_a,
            "qnode_b": record.qnode_b,
            "state": record.state.value,
            "failure_reason": record.failure_reason,
            "transitions": list(record.transitions),
            "trace": trace,
            "measurements": measurements,
            "summary": _physics_summary(measurements),
        }
        try:
            record.record_id = self.store.save(doc)
        except Exception:  # storage failure -> degraded completion
            log.exception("measurement storage failed for %s", record.id)
            record.data_loss = True
            record.record_id = None
        self.bus.publish(request_topic(record.id, "stored"), sender=self.name, kind=Kind.STORED,
                         correlation_id=record.id,
                         payload={"record_id": record.record_id, "data_loss": record.data_loss})
        return record.record_id


def _physics_summary(measurements: list[dict]) -> dict:
    summary: dict = {"batches": len(measurements)}
    for key in ("car", "v_eff", "fidelity"):
        values = [m[key] for m in measurements if key in m and m[key] is not None]
        finite = [v for v in values if v != float("inf")]
        if finite:
            summary[f"mean_{key}"] = sum(finite) / len(finite)
            summary[f"min_{key}"] = min(finite)
    return summary


def path_nodes_of_leg(topology: Topology | None, start: str, leg) -> list[str]:
    if topology is None:
        return [start]
    return path_nodes(topology, start, leg.hops)


def release_route_safe(topology: Topology, route: EntanglementRoute) -> None:
    """Release whatever parts of a route still exist (links may have been removed)."""
    if route.route_id not in topology.active_routes:
        return
    topology.unregister_route(route.route_id)
    for leg in route.light_paths():
        for hop in leg.hops:
            link = topology.links.get(hop)
            if link is not None and leg.channel in link.occupied:
                topology.release(hop, leg.channel)
    if route.pair_index in topology.eps_pairs_in_use.get(route.eps, set()):
        topology.release_eps_pair(route.eps, route.pair_index)


# -- module-level protocol operations ---------------------------------------------


def run_discovery(bus: Bus, resources: list[ResourceActor], agent: SdnAgent,
                  server: QnetServer) -> Topology:
    """Execute the resource/topology discovery protocol end to end.

    Order: resources load configuration, the agent sweeps port tags into a
    link set, resources register, the server pulls the topology from the
    agent and has it verify every resource's claimed connectivity, then
    builds the verified topology graph.
    """
    server.agent = agent
    for resource in resources:
        resource.load_config()
    if not agent.up:
        raise DiscoveryError("SDN agent unreachable; discovery aborted")
    agent.read_configs([r.node for r in resources])
    for resource in resources:
        resource.register()
    server.request_topology()
    server.engine.run()
    if server.topology is None:
        raise DiscoveryError("discovery did not produce a topology")
    return server.topology


def notify_topology_change(agent: SdnAgent, server: QnetServer, delta: dict) -> None:
    """Asynchronous change notification from the agent, drained to completion."""
    agent.notify_change(delta)
    server.engine.run()


def handle_request(server: QnetServer, user: str, qnode_a: str, qnode_b: str,
                   requirements: Requirements, request_id: str | None = None,
                   horizon_s: float | None = None) -> RequestRecord:
    """Submit one request and drive the engine until it reaches a terminal state."""
    record = server.submit(user, qnode_a, qnode_b, requirements, request_id)
    if horizon_s is None:
        horizon_s = requirements.duration * 10 + 120.0
    guard = server.engine.now + horizon_s
    while not record.terminal and server.engine.now <= guard:
        if not server.engine.step():
            break
    return record
