"""Seeded discrete-event scenarios binding control plane, RWA, and physics.

A scenario file names a topology, physics profiles, scripted request
arrivals, drift processes, calibration servos, and faults.  Runs are
deterministic per (scenario, seed): one master seed spawns separate RNG
streams for drift, count sampling, and servo probe noise, and every event
executes in (time, insertion) order.  The output report (and its optional
CSV series) is byte-identical across repeated runs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .bus import Bus, BusMessage
from .control_plane import (
    MeasurementStore,
    QnetServer,
    RequestRecord,
    Requirements,
    ResourceActor,
    SdnAgent,
    ServerConfig,
    make_actor,
    run_discovery,
)
from .engine import Engine
from .phys import (
    ChannelPhysics,
    DetectorParams,
    PhysicsProfile,
    detection_statistics,
    hom_coincidences,
    load_profile,
    polarization_error,
    teleportation_estimate,
    visibility_from_noise,
)
from .rwa import path_loss_db
from .topology import Node, load_topology


class ScenarioError(Exception):
    pass


@dataclass
class DriftProcess:
    """Random-walk drift on one channel quantity; step sigma scales with sqrt(dt)."""

    target: str  # "<request>.leg_a" | "<request>.leg_b"
    quantity: str  # PolarizationOffset | DelayOffset
    sigma: float  # per sqrt(second)
    interval_s: float = 1.0
    start_at: float = 0.0

    def __post_init__(self):
        if self.sigma < 0 or self.interval_s <= 0:
            raise ScenarioError("drift sigma must be >= 0 and interval > 0")
        if self.quantity not in ("PolarizationOffset", "DelayOffset"):
            raise ScenarioError(f"unknown drift quantity {self.quantity!r}")

    def apply(self, channel: ChannelPhysics, rng: np.random.Generator):
        step = rng.normal(0.0, self.sigma * math.sqrt(self.interval_s))
        if self.quantity == "PolarizationOffset":
            channel.polarization_offset_rad += step
        else:
            channel.delay_offset_ps += step


@dataclass
class ServoLoop:
    """Periodic correction loop against an observable of one channel."""

    target: str
    observable: str  # HomDip | PolarizationVisibility
    period_s: float = 1.0
    gain: float = 1.0
    tolerance: float = 0.02
    probe_step_ps: float = 5.0
    probe_step_rad: float = 0.01
    baseline_counts: float = 1.0e6
    hom_visibility: float = 0.9
    coherence_time_ps: float = 50.0

    def __post_init__(self):
        if not 0.0 < self.gain <= 1.0:
            raise ScenarioError("servo gain must be in (0, 1]")
        if self.tolerance <= 0 or self.period_s <= 0:
            raise ScenarioError("servo tolerance and period must be > 0")
        if self.observable not in ("HomDip", "PolarizationVisibility"):
            raise ScenarioError(f"unknown servo observable {self.observable!r}")


def hom_servo_step(channel: ChannelPhysics, servo: ServoLoop,
                   rng: np.random.Generator | None = None) -> float:
    """One two-point HOM probe and gradient-descent move toward the dip minimum."""
    tau = channel.delay_offset_ps
    delta = servo.probe_step_ps
    c_plus = hom_coincidences(tau + delta, servo.baseline_counts,
                              servo.hom_visibility, servo.coherence_time_ps)
    c_minus = hom_coincidences(tau - delta, servo.baseline_counts,
                               servo.hom_visibility, servo.coherence_time_ps)
    if rng is not None:
        c_plus = float(rng.poisson(c_plus))
        c_minus = float(rng.poisson(c_minus))
    gradient = (c_plus - c_minus) / (2.0 * delta)
    scale = servo.coherence_time_ps ** 2 / (2.0 * servo.baseline_counts * servo.hom_visibility)
    channel.delay_offset_ps = tau - servo.gain * scale * gradient
    return channel.delay_offset_ps


def polarization_servo_step(channel: ChannelPhysics, servo: ServoLoop,
                            rng: np.random.Generator | None = None) -> float:
    """Estimate misalignment from the classical-signal visibility and rotate back."""
    theta = channel.polarization_offset_rad
    measured = polarization_error(theta)
    magnitude = math.acos(math.sqrt(min(max(measured, 0.0), 1.0)))
    if magnitude <= 1e-12:
        return theta
    probe = polarization_error(theta + servo.probe_step_rad)
    direction = 1.0 if probe > measured else -1.0
    channel.polarization_offset_rad = theta + direction * servo.gain * magnitude
    return channel.polarization_offset_rad


SERIES_COLUMNS = ("t", "request_id", "car", "car_sampled", "v_eff", "fidelity",
                  "delay_offset_ps", "polarization_offset_rad", "launch_dbm")


@dataclass
class ScenarioReport:
    doc: dict
    series: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(self.doc, sort_keys=True, indent=2) + "\n"

    def series_csv(self) -> str:
        lines = [",".join(SERIES_COLUMNS)]
        for row in self.series:
            lines.append(",".join(_csv_cell(row.get(c)) for c in SERIES_COLUMNS))
        return "\n".join(lines) + "\n"


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        return repr(value)
    return str(value)


@dataclass
class _BoundRequest:
    """Physics state of one established request: live channels and leg geometry."""

    record: RequestRecord
    profile: PhysicsProfile
    channels: dict[str, ChannelPhysics]
    legs_geometry: dict[str, tuple[str, tuple[str, ...], str]]  # leg -> (start, hops, band)
    out_channel: ChannelPhysics | None = None


class Simulation:
    """One configured scenario, runnable exactly once."""

    def __init__(self, config: dict, base_dir: Path | None = None, seed: int | None = None):
        self.config = config
        self.base_dir = base_dir or Path.cwd()
        self.seed = int(config.get("seed", 0) if seed is None else seed)
        self.duration_s = float(config.get("duration_s", 60.0))

        streams = np.random.SeedSequence(self.seed).spawn(3)
        self.rng_drift = np.random.default_rng(streams[0])
        self.rng_sampling = np.random.default_rng(streams[1])
        self.rng_servo = np.random.default_rng(streams[2])

        self.engine = Engine()
        self.bus = Bus(self.engine)
        self.store = MeasurementStore()
        self.profiles = self._load_profiles(config.get("profiles", {}) or {})
        self.topology_doc = self._load_topology_doc()
        self.base_topology = load_topology(self.topology_doc)

        server_cfg = config.get("server", {}) or {}
        self.server = QnetServer(self.bus, self.engine, ServerConfig(
            verify_tolerance_db=float(server_cfg.get("verify_tolerance_db", 1.0)),
            recal_period_s=float(server_cfg.get("recal_period_s", 30.0)),
            ready_timeout_s=float(server_cfg.get("ready_timeout_s", 10.0)),
            batch_interval_s=float(server_cfg.get("batch_interval_s", 1.0)),
            queue_requests=bool(server_cfg.get("queue_requests", False)),
            include_clock=bool(server_cfg.get("include_clock", False)),
        ), store=self.store)

        self.actors: dict[str, ResourceActor] = {}
        for node_id in self.base_topology.nodes:
            node = self.base_topology.nodes[node_id]
            self.actors[node_id] = make_actor(
                node, self.bus, self.engine,
                batch_interval_s=self.server.config.batch_interval_s,
                metrics_fn=self._metrics_factory(node),
                calibrator=self._calibrator_for(node),
            )
        self.agent = SdnAgent(self.bus, self.engine,
                              plant=list(self.base_topology.links.values()))

        self.drifts = [DriftProcess(
            target=str(d["target"]), quantity=str(d["quantity"]),
            sigma=float(d.get("sigma", 0.0)), interval_s=float(d.get("interval_s", 1.0)),
            start_at=float(d.get("at", 0.0)),
        ) for d in config.get("drifts", []) or []]
        self.servos = [ServoLoop(
            target=str(s["target"]), observable=str(s["observable"]),
            period_s=float(s.get("period_s", 1.0)), gain=float(s.get("gain", 1.0)),
            tolerance=float(s.get("tolerance", 0.02)),
            probe_step_ps=float(s.get("probe_step_ps", 5.0)),
            probe_step_rad=float(s.get("probe_step_rad", 0.01)),
            baseline_counts=float(s.get("baseline_counts", 1.0e6)),
            hom_visibility=float(s.get("hom_visibility", 0.9)),
            coherence_time_ps=float(s.get("coherence_time_ps", 50.0)),
        ) for s in config.get("servos", []) or []]
        self.faults = [dict(f) for f in config.get("faults", []) or []]

        self.bound: dict[str, _BoundRequest] = {}
        self.series: list[dict] = []
        self._ran = False
        self.bus.subscribe("qnet/req/+/paths", self._on_paths)

    # -- configuration loading --------------------------------------------------

    def _load_topology_doc(self) -> str:
        topo_ref = self.config.get("topology")
        if topo_ref is None:
            raise ScenarioError("scenario needs a 'topology' key (path or inline document)")
        if isinstance(topo_ref, dict):
            return yaml.safe_dump(topo_ref)
        path = Path(topo_ref)
        if not path.is_absolute():
            path = self.base_dir / path
        if not path.exists():
            raise ScenarioError(f"topology file not found: {path}")
        return path.read_text()

    def _load_profiles(self, refs: dict) -> dict[str, PhysicsProfile]:
        profiles = {}
        for key, ref in refs.items():
            ref_path = Path(str(ref))
            if not ref_path.is_absolute() and ref_path.suffix in (".yaml", ".yml"):
                ref_path = self.base_dir / ref_path
                profiles[key] = load_profile(str(ref_path))
            else:
                profiles[key] = load_profile(str(ref))
        return profiles

    def _profile_for(self, request_cfg: dict) -> PhysicsProfile | None:
        key = request_cfg.get("profile", "default")
        return self.profiles.get(key)

    # -- physics binding ----------------------------------------------------------

    def _metrics_factory(self, node: Node):
        def metrics(rid: str, interval_s: float) -> dict:
            return self._batch_metrics(rid, node.id, interval_s)
        return metrics

    def _detector(self, profile: PhysicsProfile, name: str) -> DetectorParams:
        return profile.detectors.get(name) or DetectorParams(efficiency=0.8,
                                                             dark_rate_cps=100.0,
                                                             jitter_ps=50.0)

    def _on_paths(self, msg: BusMessage):
        record = self.server.requests.get(msg.correlation_id)
        if record is None or not record.routes or record.terminal:
            return
        request_cfg = self._request_cfgs.get(msg.correlation_id, {})
        profile = self._profile_for(request_cfg)
        if profile is None:
            return
        topo = self.server.topology
        sig_tpl = profile.legs.get("signal") or ChannelPhysics()
        idl_tpl = profile.legs.get("idler") or ChannelPhysics()

        if record.requirements.via_bsm and len(record.routes) == 2:
            r1, r2 = record.routes
            geometry = {
                "leg_a": (r1.eps, r1.leg_b.hops, r1.leg_b.channel.band),
                "leg_b": (r2.eps, r2.leg_b.hops, r2.leg_b.channel.band),
                "out": (r2.eps, r2.leg_a.hops, r2.leg_a.channel.band),
            }
        else:
            route = record.routes[0]
            geometry = {
                "leg_a": (route.eps, route.leg_a.hops, route.leg_a.channel.band),
                "leg_b": (route.eps, route.leg_b.hops, route.leg_b.channel.band),
            }

        def channel_from(template: ChannelPhysics, leg: str) -> ChannelPhysics:
            start, hops, band = geometry[leg]
            return ChannelPhysics(
                loss_db=path_loss_db(topo, start, hops, band),
                raman_coeff=template.raman_coeff,
                polarization_offset_rad=template.polarization_offset_rad,
                delay_offset_ps=template.delay_offset_ps,
                filter_bandwidth_ghz=template.filter_bandwidth_ghz,
                coincidence_window_ns=template.coincidence_window_ns,
                classical_launch_dbm=template.classical_launch_dbm,
            )

        try:
            channels = {"leg_a": channel_from(sig_tpl, "leg_a"),
                        "leg_b": channel_from(idl_tpl, "leg_b")}
            bound = _BoundRequest(record=record, profile=profile, channels=channels,
                                  legs_geometry=geometry)
            if "out" in geometry:
                bound.out_channel = channel_from(idl_tpl, "out")
                bound.channels["out"] = bound.out_channel
        except Exception:
            # A fault tore the route down while the notification was in flight;
            # the control plane is already failing the request.
            return
        self.bound[record.id] = bound
        self._start_processes(record.id)

    def _start_processes(self, rid: str):
        for drift in self.drifts:
            target_rid, _, leg = drift.target.partition(".")
            if target_rid == rid and leg in self.bound[rid].channels:
                delay = max(drift.start_at - self.engine.now, 0.0) + drift.interval_s
                self.engine.schedule(delay, self._drift_step(drift, rid, leg),
                                     kind="DriftStep", target=drift.target)
        for servo in self.servos:
            target_rid, _, leg = servo.target.partition(".")
            if target_rid == rid and leg in self.bound[rid].channels:
                self.engine.schedule(servo.period_s, self._servo_step(servo, rid, leg),
                                     kind="ServoStep", target=servo.target)

    def _drift_step(self, drift: DriftProcess, rid: str, leg: str):
        def step():
            bound = self.bound.get(rid)
            if bound is None or bound.record.terminal:
                return
            drift.apply(bound.channels[leg], self.rng_drift)
            self.engine.schedule(drift.interval_s, step, kind="DriftStep", target=drift.target)
        return step

    def _servo_step(self, servo: ServoLoop, rid: str, leg: str):
        def step():
            bound = self.bound.get(rid)
            if bound is None or bound.record.terminal:
                return
            channel = bound.channels[leg]
            if servo.observable == "HomDip":
                hom_servo_step(channel, servo, self.rng_servo)
            else:
                polarization_servo_step(channel, servo, self.rng_servo)
            self.engine.schedule(servo.period_s, step, kind="ServoStep", target=servo.target)
        return step

    # -- calibration phase ----------------------------------------------------------

    def _request_servos(self, rid: str) -> list[tuple[ServoLoop, str]]:
        bound = self.bound.get(rid)
        if bound is None:
            return []
        pairs = []
        for servo in self.servos:
            target_rid, _, leg = servo.target.partition(".")
            if target_rid == rid and leg in bound.channels:
                pairs.append((servo, leg))
        return pairs

    def _within_tolerance(self, servo: ServoLoop, channel) -> bool:
        if servo.observable == "HomDip":
            return abs(channel.delay_offset_ps) <= servo.tolerance
        return abs(channel.polarization_offset_rad) <= servo.tolerance

    def _calibrator_for(self, node: Node):
        """The route's primary EPS drives the servo burst; everyone else is
        always ready (their local calibration has nothing to correct)."""

        def calibrate(rid: str, done) -> None:
            bound = self.bound.get(rid)
            owns = (bound is not None and bound.record.routes
                    and bound.record.routes[0].eps == node.id)
            pairs = self._request_servos(rid) if owns else []
            if not pairs:
                done(True)
                return
            budget = {"steps": 100}
            # Calibration probes run briskly regardless of the holding loop's cadence.
            step_s = min(min(s.period_s for s, _ in pairs), 1.0)

            def burst():
                current = self.bound.get(rid)
                if current is None or current.record.terminal:
                    return
                if all(self._within_tolerance(s, current.channels[leg])
                       for s, leg in pairs):
                    done(True)
                    return
                if budget["steps"] <= 0:
                    done(False)
                    return
                budget["steps"] -= 1
                for servo, leg in pairs:
                    channel = current.channels[leg]
                    if servo.observable == "HomDip":
                        hom_servo_step(channel, servo, self.rng_servo)
                    else:
                        polarization_servo_step(channel, servo, self.rng_servo)
                self.engine.schedule(step_s, burst, kind="ServoStep", target=rid)

            burst()

        return calibrate

    # -- per-batch metrics ---------------------------------------------------------

    def _refresh_losses(self, bound: _BoundRequest):
        topo = self.server.topology
        for leg, (start, hops, band) in bound.legs_geometry.items():
            try:
                bound.channels[leg].loss_db = path_loss_db(topo, start, hops, band)
            except Exception:
                pass  # link vanished; the control plane is already failing the request

    def _batch_metrics(self, rid: str, sender: str, interval_s: float) -> dict:
        bound = self.bound.get(rid)
        if bound is None or bound.record.terminal:
            return {}
        self._refresh_losses(bound)
        profile = bound.profile
        leg_a, leg_b = bound.channels["leg_a"], bound.channels["leg_b"]
        det_a = self._detector(profile, "signal")
        det_b = self._detector(profile, "idler")
        stats = detection_statistics(profile.eps, leg_a, leg_b, det_a, det_b)
        pol = polarization_error(leg_a.polarization_offset_rad) * \
            polarization_error(leg_b.polarization_offset_rad)
        v_eff = visibility_from_noise(stats, profile.intrinsic_visibility * pol)

        if bound.out_channel is not None:
            estimate = teleportation_estimate(
                profile.eps, [leg_a, leg_b, bound.out_channel],
                [det_a, det_b, self._detector(profile, "teleported")],
                profile.clock, profile.bsm_success_prob)
            fidelity = estimate.fidelity_avg
        else:
            fidelity = (1.0 + 3.0 * v_eff) / 4.0  # Werner-state bound from fringe visibility

        coinc_expected = (stats.true_coinc + stats.accidentals) * interval_s
        coinc_sampled = int(self.rng_sampling.poisson(coinc_expected))
        acc_expected = stats.accidentals * interval_s
        car_sampled = coinc_sampled / acc_expected if acc_expected > 0 else math.inf

        metrics = {
            "car": stats.car,
            "car_sampled": car_sampled,
            "v_eff": v_eff,
            "fidelity": fidelity,
            "coincidences": coinc_sampled,
            "singles_a": stats.singles_a,
            "singles_b": stats.singles_b,
        }
        if sender == bound.record.qnode_a:  # one series row per batch, not per Q-node
            self.series.append({
                "t": self.engine.now,
                "request_id": rid,
                "car": stats.car,
                "car_sampled": car_sampled,
                "v_eff": v_eff,
                "fidelity": fidelity,
                "delay_offset_ps": leg_a.delay_offset_ps - leg_b.delay_offset_ps,
                "polarization_offset_rad": leg_a.polarization_offset_rad,
                "launch_dbm": leg_a.classical_launch_dbm,
            })
        return metrics

    # -- faults ---------------------------------------------------------------------

    def inject_fault(self, at: float, fault: dict) -> None:
        if self._ran:
            raise ScenarioError("cannot add faults after the run")
        self.faults.append(dict(fault, at=at))

    def _schedule_faults(self):
        for fault in self.faults:
            at = float(fault.get("at", 0.0))
            self.engine.schedule(at, self._fault_fn(fault), kind="FaultInject",
                                 target=str(fault.get("target", "")))

    def _fault_fn(self, fault: dict):
        kind = str(fault.get("kind", ""))
        target = str(fault.get("target", ""))

        def fire():
            topo = self.server.topology
            if kind == "link_down":
                if topo is not None and target in topo.links:
                    self.agent.notify_change({"remove_links": [target]})
            elif kind == "node_down":
                actor = self.actors.get(target)
                if actor is not None:
                    actor.up = False
                if topo is not None and target in topo.nodes:
                    self.agent.notify_change({"remove_nodes": [target]})
            elif kind == "link_loss_increase":
                if topo is not None and target in topo.links:
                    self.agent.notify_change({
                        "update_links": [{"id": target,
                                          "extra_loss_db": float(fault.get("db", 0.0))}]})
            elif kind == "power_step":
                rid, _, leg = target.partition(".")
                bound = self.bound.get(rid)
                if bound is not None and leg in bound.channels:
                    channel = bound.channels[leg]
                    if "dbm" in fault:
                        channel.classical_launch_dbm = float(fault["dbm"])
                    else:
                        base = channel.classical_launch_dbm or 0.0
                        channel.classical_launch_dbm = base + float(fault.get("dbm_delta", 0.0))
            else:
                raise ScenarioError(f"unknown fault kind {kind!r}")
        return fire

    # -- run --------------------------------------------------------------------------

    @property
    def _request_cfgs(self) -> dict[str, dict]:
        cfgs = {}
        for i, r in enumerate(self.config.get("requests", []) or []):
            cfgs[str(r.get("id") or f"req-{i + 1:04d}")] = r
        return cfgs

    def start(self) -> int:
        """Run discovery and schedule the scripted arrivals/faults; returns the
        length of the discovery portion of the bus log."""
        if self._ran:
            raise ScenarioError("scenario already ran; build a new Simulation")
        self._ran = True

        run_discovery(self.bus, list(self.actors.values()), self.agent, self.server)
        discovery_trace_len = len(self.bus.log)

        for i, rcfg in enumerate(self.config.get("requests", []) or []):
            rid = str(rcfg.get("id") or f"req-{i + 1:04d}")
            requirements = Requirements(
                qubit_type=str(rcfg.get("qubit_type", "TimeBin")),
                rate=float(rcfg.get("rate", 1.0)),
                duration=float(rcfg.get("duration", 1.0)),
                via_bsm=bool(rcfg.get("via_bsm", False)),
            )
            at = float(rcfg.get("at", 0.0))
            self.engine.schedule(at, self._submit_fn(rid, rcfg, requirements),
                                 kind="Timer", target=rid)
        self._schedule_faults()
        return discovery_trace_len

    def run(self) -> ScenarioReport:
        discovery_trace_len = self.start()
        self.engine.run(until=self.duration_s)
        return self._build_report(discovery_trace_len)

    def _submit_fn(self, rid: str, rcfg: dict, requirements: Requirements):
        def submit():
            self.server.submit(
                user=str(rcfg.get("user", "operator")),
                qnode_a=str(rcfg["qnode_a"]), qnode_b=str(rcfg["qnode_b"]),
                requirements=requirements, request_id=rid)
        return submit

    def _build_report(self, discovery_trace_len: int) -> ScenarioReport:
        topo = self.server.topology
        occupancy = {}
        if topo is not None:
            occupancy = {lid: sorted(str(ch) for ch in link.occupied)
                         for lid, link in sorted(topo.links.items())}
        requests_doc = {}
        for rid in sorted(self.server.requests):
            record = self.server.requests[rid]
            requests_doc[rid] = {
                "state": record.state.value,
                "failure_reason": record.failure_reason,
                "transitions": record.transitions,
                "batches": len(record.measurements),
                "record_id": record.record_id,
            }
        trace = [{"t": m.t, "topic": m.topic, "kind": m.kind, "sender": m.sender}
                 for m in self.bus.log]

        per_request_summary = {}
        for rid in sorted(self.bound):
            rows = [r for r in self.series if r["request_id"] == rid]
            finite_car = [r["car"] for r in rows if not math.isinf(r["car"])]
            if rows:
                per_request_summary[rid] = {
                    "mean_v_eff": sum(r["v_eff"] for r in rows) / len(rows),
                    "mean_fidelity": sum(r["fidelity"] for r in rows) / len(rows),
                    "min_car": min(finite_car) if finite_car else None,
                    "batches": len(rows),
                }

        teleport = None
        for profile in self.profiles.values():
            if {"qubit", "idler", "teleported"} <= set(profile.legs):
                estimate = teleportation_estimate(
                    profile.eps,
                    [profile.legs["qubit"], profile.legs["idler"], profile.legs["teleported"]],
                    [self._detector(profile, "qubit"), self._detector(profile, "idler"),
                     self._detector(profile, "teleported")],
                    profile.clock, profile.bsm_success_prob)
                teleport = {"profile": profile.name, "rate_hz": estimate.rate_hz,
                            "fidelity_avg": estimate.fidelity_avg}
                break

        doc = {
            "seed": self.seed,
            "duration_s": self.duration_s,
            "topology_version": topo.version if topo is not None else None,
            "requests": requests_doc,
            "final_occupancy": occupancy,
            "trace": trace,
            "discovery_trace_len": discovery_trace_len,
            "series": [{k: (None if isinstance(v, float) and math.isinf(v) else v)
                        for k, v in row.items()} for row in self.series],
            "summary": {
                "outcomes": {rid: requests_doc[rid]["state"] for rid in requests_doc},
                "per_request": per_request_summary,
                "teleport": teleport,
            },
        }
        return ScenarioReport(doc=doc, series=list(self.series))


def load_scenario(path: str | Path) -> tuple[dict, Path]:
    path = Path(path)
    try:
        config = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise
    except yaml.YAMLError as exc:
        raise ScenarioError(f"scenario is not valid YAML: {exc}") from exc
    if not isinstance(config, dict):
        raise ScenarioError("scenario top level must be a map")
    return config, path.parent


def run_scenario(config: dict | str | Path, seed: int | None = None,
                 base_dir: Path | None = None) -> ScenarioReport:
    """Execute a scenario (dict or file path); deterministic per (scenario, seed)."""
    if isinstance(config, (str, Path)):
        config, base_dir = load_scenario(config)
    return Simulation(config, base_dir=base_dir, seed=seed).run()
