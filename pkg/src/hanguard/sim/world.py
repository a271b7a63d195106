"""One simulated HAN for one trial: phones, router, hosts and the links between them."""

from __future__ import annotations

import dataclasses
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

from ..control_proto import ControlMessage, Flag, FlowId, MsgType, Protocol, encode
from ..controller import Controller, ControllerConfig, DecisionRejected, EventLog, Verdict
from ..monitor import Event, Monitor, ProcfsPoll, RouterUnreachable, Strategy, TunnelProxy
from ..packets import Packet, PacketKind, Zone
from ..policy import (
    AppRecord,
    Decision,
    DeviceRecord,
    PhoneRecord,
    Policy,
    UnknownPrincipal,
    authorize,
    bind_app_device,
    credential_hash,
    default_policy,
)
from ..procfs import FILE_NAMES, ProcFile, TcpState
from .engine import EventKind, LinkModel, Simulator
from .topology import (
    ANDROID,
    DEVICE,
    IOS,
    REMOTE,
    SERVER,
    HostSpec,
    PhoneSpec,
    ScenarioError,
    Topology,
    forged_signature,
    official_signature,
)

log = logging.getLogger(__name__)

MS = 1000


@dataclass(frozen=True)
class SimParams:
    """Timing and sizing knobs shared by every scenario (all overridable)."""

    data_latency_us: int = 1000
    data_jitter_us: int = 300
    control_latency_us: int = 900
    control_jitter_us: int = 300
    lan_latency_us: int = 500
    lan_jitter_us: int = 100
    wan_latency_us: int = 20_000
    wan_jitter_us: int = 2_000
    apply_us: int = 20
    parse_cost_us: int = 1
    poll_ms: int = 10
    strategy: str = "smarter"
    hop_us: int = 1500
    rto_ms: int = 1000
    retries: int = 3
    udp_idle_ms: int = 2000
    time_wait_ms: int = 60_000
    tail_ms: int = 500
    capacity: int = 1024
    per_phone_limit: int = 64
    rate_threshold: int = 100
    rate_window_ms: int = 10_000
    penalty_ms: int = 300_000

    @classmethod
    def from_strings(cls, values: dict[str, str]) -> "SimParams":
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name in values:
                raw = values[f.name]
                try:
                    kwargs[f.name] = raw if f.type == "str" else int(raw)
                except ValueError:
                    raise ScenarioError([f"parameter {f.name}: expected an integer, got {raw!r}"]) from None
        params = cls(**kwargs)
        if params.strategy not in ("naive", "smarter"):
            raise ScenarioError([f"parameter strategy: expected naive or smarter, got {params.strategy!r}"])
        if params.poll_ms <= 0:
            raise ScenarioError(["parameter poll_ms must be positive"])
        return params


@dataclass
class FlowRun:
    spec: object
    flow: FlowId
    src_mac: str
    dst_mac: str
    zone: Zone
    tunneled: bool = False
    procfs_file: str | None = None
    opened_at: int | None = None
    closed_at: int | None = None
    first_arrival: int | None = None
    last_send: dict[int, int] = field(default_factory=dict)
    rtt: dict[int, int] = field(default_factory=dict)
    pending: set[int] = field(default_factory=set)
    verdicts: list[tuple[int, int, Verdict]] = field(default_factory=list)
    seen_valid: bool = False
    revoked: bool = False
    done: bool = False

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def success(self) -> bool:
        return len(self.rtt) == self.spec.messages


class _PhoneEndpoint:
    """What the router sees of a Monitor when pushing policy."""

    def __init__(self, world: "World", phone: PhoneSpec):
        self.world = world
        self.phone = phone

    @property
    def reachable(self) -> bool:
        return self.phone.name not in self.world.partitioned

    def deliver(self, frame: bytes, now: int) -> None:
        self.world._push_to_phone(self.phone, frame)


class _SyncLink:
    """Request/response over the control channel, modeled as instantaneous."""

    def __init__(self, world: "World", phone: PhoneSpec):
        self.world = world
        self.phone = phone

    def request(self, frame: bytes) -> bytes:
        if self.phone.name in self.world.partitioned:
            raise RouterUnreachable(self.phone.name)
        w = self.world
        return w.controller.handle_request(frame, w.cert_of(self.phone), w.sim.now)


class World:
    def __init__(
        self,
        topology: Topology,
        params: SimParams,
        *,
        vanilla: bool = False,
        seed: int = 0,
        trial: int = 0,
        trace: list | None = None,
        label: str = "",
        setup: Callable[[Policy], Policy] | None = None,
    ):
        problems = topology.validate()
        if problems:
            raise ScenarioError(problems)
        self.topology = topology
        self.params = params
        self.vanilla = vanilla
        self.trial = trial
        self.label = label or ("vanilla" if vanilla else "hanguard")
        self.trace = trace
        self.sim = Simulator()
        self.links = {
            "data": LinkModel("data", params.data_latency_us, params.data_jitter_us, seed),
            "control": LinkModel("control", params.control_latency_us, params.control_jitter_us, seed),
            "lan": LinkModel("lan", params.lan_latency_us, params.lan_jitter_us, seed),
            "wan": LinkModel("wan", params.wan_latency_us, params.wan_jitter_us, seed),
        }
        self.failures: list[str] = []
        self.partitioned: set[str] = set()
        self.injected = self.forwarded = self.dropped = 0
        self.rejections: list[tuple[int, str, str]] = []
        self.detected: dict[FlowId, int] = {}
        self.raw_verdicts: dict[str, list[tuple[int, Verdict]]] = {}
        self.control_lost = 0
        self.sent_frames: dict[str, list[tuple[int, ControlMessage, bytes]]] = {}
        self.unprotected_lookups = 0
        self._misc = 0

        policy = self._initial_policy()
        if setup is not None:
            policy = setup(policy)
        self.log = EventLog()
        config = ControllerConfig(
            capacity=params.capacity,
            per_phone_limit=params.per_phone_limit,
            rate_window_us=params.rate_window_ms * MS,
            rate_threshold=params.rate_threshold,
            penalty_us=params.penalty_ms * MS,
            vanilla=vanilla,
        )
        self.controller = Controller(policy, config, event_log=self.log)

        self.phones = {p.name: p for p in topology.phones}
        self.hosts = {h.name: h for h in topology.hosts}
        self.files: dict[str, dict[str, ProcFile]] = {}
        self.monitors: dict[str, Monitor] = {}
        for p in topology.phones:
            self.files[p.name] = {n: ProcFile(n) for n in FILE_NAMES}
            self._add_background(p)
            if vanilla or not p.registered or p.platform not in (ANDROID, IOS):
                continue
            packages = {
                i.uid: (i.app, forged_signature(i.app) if i.repackaged else official_signature(i.app))
                for i in topology.installs
                if i.phone == p.name
            }
            if p.platform == ANDROID:
                source = ProcfsPoll(params.poll_ms * MS, Strategy(params.strategy))
            else:
                source = TunnelProxy(frozenset(p.managed_apps), params.hop_us)
            mon = Monitor(p.mac, self.credential_of(p), policy, source, packages, params.udp_idle_ms * MS)
            self.monitors[p.name] = mon
            self.controller.register_monitor(p.mac, _PhoneEndpoint(self, p))
        self.uids = {(i.phone, i.app): i.uid for i in topology.installs}
        self.flows: dict[str, FlowRun] = {}
        self._by_flow: dict[FlowId, FlowRun] = {}
        self.poll_ticks: dict[str, list[int]] = {n: [] for n in self.monitors}

    # -- setup -------------------------------------------------------------

    def credential_of(self, p: PhoneSpec) -> bytes:
        return credential_hash(p.user or p.name, p.password)

    def cert_of(self, p: PhoneSpec) -> str:
        return p.cert or f"cert-{p.name}"

    def _initial_policy(self) -> Policy:
        t = self.topology
        phones = [
            PhoneRecord(p.mac, p.ip, p.role, p.user or p.name, self.credential_of(p), self.cert_of(p), p.mcn)
            for p in t.phones
            if p.registered
        ]
        devices = []
        for h in t.hosts:
            if h.kind == DEVICE:
                devices.append(DeviceRecord(h.mac, h.ip, h.device_type, protected=h.protected, subnet="iot" if h.protected else "phones"))
            elif h.kind == SERVER:
                devices.append(DeviceRecord(h.mac, h.ip, h.device_type, protected=False, subnet="phones"))
        apps = [AppRecord(a, official_signature(a)) for a in t.apps]
        policy = default_policy(phones, devices, apps)
        for b in t.bindings:
            policy = bind_app_device(policy, b.app, t.host(b.device).mac, b.category)
        return policy

    def _add_background(self, p: PhoneSpec) -> None:
        for i in range(p.background_sockets):
            name = "tcp" if i % 2 == 0 else "tcp6"
            listen = FlowId("0.0.0.0", 5000 + i, "0.0.0.0", 0, Protocol.TCP)
            self.files[p.name][name].upsert(listen, 1000, TcpState.LISTEN, 0)

    # -- bookkeeping -----------------------------------------------------------

    def emit(self, entity: str, event: str, detail: str = "") -> None:
        if self.trace is not None:
            self.trace.append((self.sim.now, f"{self.label}/{self.trial}/{entity}", event, detail))

    def fail(self, message: str) -> None:
        if message not in self.failures:
            self.failures.append(message)

    def at(self, when: int, action: Callable, *args) -> None:
        self.sim.at(when, EventKind.FLOW_ACTION, action, *args)

    def _node_mac_ip(self, name: str) -> tuple[str, str]:
        node = self.phones.get(name) or self.hosts[name]
        return node.mac, node.ip

    def _link_for(self, name: str) -> LinkModel:
        if name in self.phones:
            return self.links["data"]
        return self.links["wan" if self.hosts[name].kind == REMOTE else "lan"]

    def _zone(self, src: str, dst: str) -> Zone:
        src_remote = src in self.hosts and self.hosts[src].kind == REMOTE
        dst_remote = dst in self.hosts and self.hosts[dst].kind == REMOTE
        if dst_remote and not src_remote:
            return Zone.WAN_OUT
        if src_remote and not dst_remote:
            return Zone.WAN_IN
        return Zone.LAN

    # -- flows ---------------------------------------------------------------

    def schedule_flows(self) -> None:
        # Opens and closes are queued before any poll tick exists, so a tick
        # landing exactly on either one runs after it: the visible window is [open, close).
        for spec in self.topology.flows:
            self.at(spec.start_us, self._open, spec)
            if spec.lifetime_us is not None:
                self.at(spec.start_us + spec.lifetime_us, self._close_named, spec.name)

    def _open(self, spec) -> None:
        src_mac, src_ip = self._node_mac_ip(spec.src)
        dst_mac, dst_ip = self._node_mac_ip(spec.dst)
        port = spec.src_port or 40000 + spec.slot
        fr = FlowRun(spec, FlowId(src_ip, port, dst_ip, spec.dst_port, spec.protocol), src_mac, dst_mac, self._zone(spec.src, spec.dst))
        self.flows[spec.name] = fr
        self._by_flow[fr.flow] = fr
        fr.opened_at = self.sim.now
        phone = self.phones.get(spec.src)
        mon = self.monitors.get(spec.src)
        if phone is not None:
            if isinstance(getattr(mon, "source", None), TunnelProxy) and mon.source.admits(spec.app):
                fr.tunneled = True
            elif phone.platform != IOS:
                fr.procfs_file = "tcp6" if spec.protocol is Protocol.TCP else "udp"
                uid = self.uids[(spec.src, spec.app)]
                self.files[spec.src][fr.procfs_file].upsert(fr.flow, uid, TcpState.ESTABLISHED, self.sim.now)
        self.emit(spec.src, "flow-open", f"{spec.name} {fr.flow}")
        fr.pending = set(range(spec.messages))
        self._send(fr, 0, 0)
        for i in range(1, spec.messages):
            self.at(self.sim.now + spec.warmup_us + (i - 1) * spec.gap_us, self._send, fr, i, 0)

    def _key(self, fr: FlowRun, msg: int, attempt: int, leg: str) -> tuple:
        return (self.trial, fr.spec.slot, msg, attempt, leg)

    def _send(self, fr: FlowRun, msg: int, attempt: int) -> None:
        if fr.closed_at is not None or msg in fr.rtt:
            return
        now = self.sim.now
        pkt = Packet(fr.src_mac, fr.dst_mac, fr.flow, PacketKind.DATA, fr.spec.app, msg, fr.zone)
        fr.last_send[msg] = now
        delay = self._through_tunnel(fr, pkt)
        delay += self._link_for(fr.spec.src).sample(*self._key(fr, msg, attempt, "up"))
        self.sim.at(now + delay, EventKind.PACKET_ARRIVAL, self._router_ingress, fr, pkt, msg, attempt)
        if attempt < self.params.retries:
            rto = self.params.rto_ms * MS * (2**attempt)
            self.sim.at(now + rto, EventKind.TIMER_FIRE, self._retransmit, fr, msg, attempt + 1)
        else:
            self.sim.at(now + self.params.rto_ms * MS * (2**attempt), EventKind.TIMER_FIRE, self._give_up, fr, msg)

    def _through_tunnel(self, fr: FlowRun, pkt: Packet) -> int:
        if not fr.tunneled:
            return 0
        mon = self.monitors[fr.spec.src]
        _, ctl = mon.proxy_packet(pkt, self.sim.now)
        if ctl is not None:
            self._send_control(self.phones[fr.spec.src], ctl, self.sim.now + mon.source.hop_us)
        return mon.source.hop_us

    def _retransmit(self, fr: FlowRun, msg: int, attempt: int) -> None:
        if fr.closed_at is None and msg not in fr.rtt:
            self._send(fr, msg, attempt)

    def _give_up(self, fr: FlowRun, msg: int) -> None:
        if msg in fr.pending and msg not in fr.rtt:
            fr.pending.discard(msg)
            self._maybe_finish(fr)

    def _router_ingress(self, fr: FlowRun, pkt: Packet, msg: int, attempt: int) -> None:
        now = self.sim.now
        request = pkt.flow == fr.flow
        if request and pkt.kind is PacketKind.DATA and fr.first_arrival is None:
            fr.first_arrival = now
        verdict = self._verdict(pkt)
        if request:
            fr.verdicts.append((msg, attempt, verdict))
            self._check_one_time_cost(fr, verdict)
        self.emit("router", f"{verdict.action.value}({verdict.reason.value})", f"{fr.name} {pkt.kind.value} #{msg}.{attempt}")
        if not verdict.forwarded:
            return
        if request:
            lat = self._link_for(fr.spec.dst).sample(*self._key(fr, msg, attempt, "out"))
            self.sim.at(now + lat, EventKind.PACKET_ARRIVAL, self._host_receive, fr, pkt, msg, attempt)
        else:
            lat = self._link_for(fr.spec.src).sample(*self._key(fr, msg, attempt, "down"))
            if fr.tunneled:
                lat += self.monitors[fr.spec.src].source.hop_us
            self.sim.at(now + lat, EventKind.PACKET_ARRIVAL, self._app_receive, fr, msg)

    def _verdict(self, pkt: Packet) -> Verdict:
        self.injected += 1
        c = self.controller
        before = c.counters["pfdc_lookups"]
        verdict = c.handle_packet(pkt, self.sim.now)
        dev = c.policy.devices.get(pkt.dst_mac)
        if (dev is None or not dev.protected) and c.counters["pfdc_lookups"] != before:
            self.unprotected_lookups += 1
            self.fail(f"PFDC consulted for non-protected destination {pkt.dst_mac}")
        if verdict.forwarded:
            self.forwarded += 1
        else:
            self.dropped += 1
        return verdict

    def _check_one_time_cost(self, fr: FlowRun, verdict: Verdict) -> None:
        if verdict.reason.value == "Valid":
            fr.seen_valid = True
        elif verdict.reason.value == "NoDecision" and fr.seen_valid and not fr.revoked:
            self.fail(f"one-time cost: {fr.name} dropped NoDecision after Forward(Valid)")

    def _host_receive(self, fr: FlowRun, pkt: Packet, msg: int, attempt: int) -> None:
        if pkt.kind is not PacketKind.DATA:
            return
        host = self.hosts[fr.spec.dst]
        back = pkt.reply(fr.dst_mac, fr.src_mac)
        lat = host.echo_us + self._link_for(fr.spec.dst).sample(*self._key(fr, msg, attempt, "back"))
        self.sim.at(self.sim.now + lat, EventKind.PACKET_ARRIVAL, self._router_ingress, fr, back, msg, attempt)

    def _app_receive(self, fr: FlowRun, msg: int) -> None:
        if fr.closed_at is not None or msg in fr.rtt:
            return
        fr.rtt[msg] = self.sim.now - fr.last_send[msg]
        fr.pending.discard(msg)
        if fr.tunneled:
            known = self.monitors[fr.spec.src].state.known_flows.get(fr.flow)
            if known is not None:
                known.last_seen = self.sim.now
        self._maybe_finish(fr)

    def _maybe_finish(self, fr: FlowRun) -> None:
        if fr.pending or fr.spec.lifetime_us is not None:
            return
        self._close(fr)

    def _close_named(self, name: str) -> None:
        self._close(self.flows[name])

    def _close(self, fr: FlowRun) -> None:
        if fr.closed_at is not None:
            return
        now = self.sim.now
        fr.closed_at = now
        fr.done = True
        self.emit(fr.spec.src, "flow-close", fr.name)
        if fr.procfs_file is not None:
            files = self.files[fr.spec.src]
            if fr.spec.protocol is Protocol.TCP:
                uid = self.uids[(fr.spec.src, fr.spec.app)]
                files[fr.procfs_file].upsert(fr.flow, uid, TcpState.TIME_WAIT, now)
                table = files[fr.procfs_file]
                self.sim.at(
                    now + self.params.time_wait_ms * MS, EventKind.TIMER_FIRE, lambda: table.remove(fr.flow, self.sim.now)
                )
            else:
                files[fr.procfs_file].remove(fr.flow, now)
        if fr.spec.protocol is Protocol.TCP:
            fin = Packet(fr.src_mac, fr.dst_mac, fr.flow, PacketKind.FIN, fr.spec.app, fr.spec.messages, fr.zone)
            delay = self._through_tunnel(fr, fin)
            delay += self._link_for(fr.spec.src).sample(*self._key(fr, fr.spec.messages, 0, "fin"))
            self.sim.at(now + delay, EventKind.PACKET_ARRIVAL, self._router_ingress, fr, fin, fr.spec.messages, 0)

    # -- raw packets (attackers, probes) ---------------------------------------

    def send_raw(self, label: str, packet: Packet, at: int, via: str) -> None:
        """Inject a packet from node ``via`` with arbitrary headers; record its verdict under ``label``."""

        def arrive():
            verdict = self._verdict(packet)
            self.raw_verdicts.setdefault(label, []).append((self.sim.now, verdict))
            self.emit("router", f"{verdict.action.value}({verdict.reason.value})", f"{label} {packet.flow}")

        def depart():
            lat = self._link_for(via).sample(self.trial, "raw", label, len(self.raw_verdicts.get(label, ())))
            self.sim.at(self.sim.now + lat, EventKind.PACKET_ARRIVAL, arrive)

        self.at(at, depart)

    # -- control plane -----------------------------------------------------------

    def _control_key(self, msg: ControlMessage) -> tuple:
        fr = self._by_flow.get(msg.flow)
        if fr is not None and msg.msg_type is MsgType.FLOW_DECISION:
            return (self.trial, "decision", fr.spec.slot, int(msg.flag))
        self._misc += 1
        return (self.trial, "misc", self._misc)

    def _send_control(self, phone: PhoneSpec, msg: ControlMessage, at: int, cert: str | None = None) -> None:
        if msg.msg_type is MsgType.FLOW_DECISION and msg.flag is Flag.VALIDATE and phone.name in self.monitors:
            self._check_sound(phone, msg)
        if phone.name in self.partitioned:
            self.control_lost += 1
            self.emit(phone.name, "control-lost", str(msg.flow))
            return
        lat = self.links["control"].sample(*self._control_key(msg))
        frame = encode(msg)
        self.sent_frames.setdefault(phone.name, []).append((self.sim.now, msg, frame))
        self.sim.at(at + lat, EventKind.CONTROL_DELIVERY, self._router_control, phone, frame, cert or self.cert_of(phone))

    def inject_control(
        self,
        phone_name: str,
        msg: ControlMessage | Callable[[], ControlMessage],
        at: int,
        cert: str | None = None,
    ) -> None:
        """Send a hand-made control message from ``phone_name`` (compromised or guest phone).

        ``msg`` may be a callable, evaluated at send time (e.g. to read the current version).
        """
        phone = self.phones[phone_name]
        self.at(at, lambda: self._send_control(phone, msg() if callable(msg) else msg, self.sim.now, cert))

    def inject_frame(self, phone_name: str, frame: bytes, at: int, cert: str | None = None) -> None:
        """Replay raw bytes on a phone's control channel."""
        phone = self.phones[phone_name]

        def send():
            self._misc += 1
            lat = self.links["control"].sample(self.trial, "replay", self._misc)
            self.sim.at(self.sim.now + lat, EventKind.CONTROL_DELIVERY, self._router_control, phone, frame, cert or self.cert_of(phone))

        self.at(at, send)

    def _check_sound(self, phone: PhoneSpec, msg: ControlMessage) -> None:
        mon = self.monitors[phone.name]
        policy = mon.policy
        dev = policy.device_by_ip(str(msg.flow.dst_ip))
        try:
            ok = dev is not None and authorize(policy, phone.mac, msg.app_id, dev.mac) is Decision.ALLOW
        except UnknownPrincipal:
            ok = False
        if not ok:
            self.fail(f"soundness: {phone.name} validated {msg.flow} that its replica denies")

    def _router_control(self, phone: PhoneSpec, frame: bytes, cert: str) -> None:
        now = self.sim.now
        try:
            msg = self.controller.receive_decision(frame, cert, now)
        except DecisionRejected as exc:
            self.rejections.append((now, phone.name, exc.reason))
            self.emit("router", "decision-rejected", f"{phone.name} {exc.reason}")
            return
        self.emit("router", "decision-queued", f"{phone.name} {msg.flag.name} {msg.flow}")
        self.sim.at(now + self.params.apply_us, EventKind.TIMER_FIRE, self._drain)

    def _drain(self) -> None:
        c = self.controller
        for flow, flag in c.drain(self.sim.now):
            self.emit("router", "decision-applied", f"{flag.name} {flow}")
        if len(c.pfdc) > c.pfdc.capacity:
            self.fail(f"PFDC over capacity: {len(c.pfdc)}")
        owners = Counter(e.owner_phone for e in c.pfdc.entries.values())
        for mac, n in owners.items():
            if n > c.pfdc.per_phone_limit:
                self.fail(f"PFDC per-phone limit exceeded by {mac}: {n}")
        for fr in self.flows.values():
            if fr.seen_valid and fr.flow not in c.pfdc.entries:
                fr.revoked = True

    def _flush_outbox(self, phone: PhoneSpec, at: int) -> None:
        mon = self.monitors[phone.name]
        while mon.outbox:
            self._send_control(phone, mon.outbox.pop(0), at)

    def _push_to_phone(self, phone: PhoneSpec, frame: bytes) -> None:
        self._misc += 1
        lat = self.links["control"].sample(self.trial, "push", self._misc)

        def arrive():
            if phone.name in self.partitioned:
                return
            self.monitors[phone.name].receive_push(frame, self.sim.now)
            self.emit(phone.name, "policy-installed", f"v{self.monitors[phone.name].replica_version}")
            self._flush_outbox(phone, self.sim.now)

        self.sim.at(self.sim.now + lat, EventKind.CONTROL_DELIVERY, arrive)

    def sync_link(self, phone_name: str) -> _SyncLink:
        return _SyncLink(self, self.phones[phone_name])

    def partition(self, phone_name: str) -> None:
        self.partitioned.add(phone_name)
        self.emit(phone_name, "partitioned")

    def heal(self, phone_name: str) -> str:
        self.partitioned.discard(phone_name)
        mon = self.monitors[phone_name]
        outcome = mon.on_network_change(self.sync_link(phone_name), self.sim.now)
        self.emit(phone_name, "healed", f"{outcome} v{mon.replica_version}")
        self._flush_outbox(self.phones[phone_name], self.sim.now)
        return outcome

    # -- monitors --------------------------------------------------------------

    def start_monitors(self, phase_us: dict[str, int] | None = None) -> None:
        phase_us = phase_us or {}
        for name, mon in self.monitors.items():
            if isinstance(mon.source, ProcfsPoll):
                self.sim.at(phase_us.get(name, 0), EventKind.POLL_TICK, self._poll, name)
            else:
                self.sim.at(phase_us.get(name, 0), EventKind.TIMER_FIRE, self._idle_check, name)

    def _poll(self, name: str) -> None:
        now = self.sim.now
        mon = self.monitors[name]
        self.poll_ticks[name].append(now)
        observations, messages = mon.step(self.files[name], now)
        work = mon.state.poll_stats.per_poll_lines[-1] * self.params.parse_cost_us
        for obs in observations:
            if obs.event is Event.OPENED:
                self.detected.setdefault(obs.flow, now)
            self.emit(name, f"poll-{obs.event.value.lower()}", str(obs.flow))
        phone = self.phones[name]
        for msg in messages:
            self._send_control(phone, msg, now + work)
        self._flush_outbox(phone, now + work)
        self.sim.at(now + max(mon.source.interval_us, work), EventKind.POLL_TICK, self._poll, name)

    def _idle_check(self, name: str) -> None:
        mon = self.monitors[name]
        for msg in mon.detect_termination([], self.sim.now):
            self._send_control(self.phones[name], msg, self.sim.now)
        self.sim.at(self.sim.now + 250 * MS, EventKind.TIMER_FIRE, self._idle_check, name)

    # -- running -------------------------------------------------------------------

    def run(self, until: int) -> None:
        self.sim.run(until=until)
        self._check_conservation()

    def run_until_quiet(self, limit_us: int = 3_600_000_000) -> None:
        """Run until every scripted flow is closed, plus the configured tail."""
        tail = self.params.tail_ms * MS
        target = len(self.topology.flows)
        last_done: list[int] = []

        def stop() -> bool:
            if len(self.flows) < target or not all(f.done for f in self.flows.values()):
                return False
            if not last_done:
                last_done.append(self.sim.now)
            return self.sim.now >= last_done[0] + tail

        self.sim.run(until=limit_us, stop=stop)
        self._check_conservation()

    def _check_conservation(self) -> None:
        if self.injected != self.forwarded + self.dropped:
            self.fail(f"conservation: injected {self.injected} != forwarded {self.forwarded} + dropped {self.dropped}")
        if sum(self.controller.verdicts.values()) != self.injected:
            self.fail("conservation: router verdict count differs from packets injected")

    # -- results -----------------------------------------------------------------

    def decision_latency(self, flow_name: str) -> int | None:
        fr = self.flows.get(flow_name)
        if fr is None:
            return None
        stored = self.controller.decision_stored.get(fr.flow)
        return measure_decision_latency(fr.first_arrival, stored)


def measure_decision_latency(first_arrival: int | None, decision_stored: int | None) -> int | None:
    """Signed ``decision_stored - first_arrival``; ``None`` when either is missing."""
    if first_arrival is None or decision_stored is None:
        return None
    return decision_stored - first_arrival


__all__ = ["FlowRun", "HostSpec", "MS", "SimParams", "World", "measure_decision_latency"]
